#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "curio/errors.hpp"

namespace curio {

enum class Dimension : int {
  OriginalityInThought = 0,
  OriginalityInForm,
  OriginalityInThemeAndContent,
  StructuralFlexibility,
  PerspectiveAndVoiceFlexibility,
};

inline constexpr std::array<Dimension, 5> kAllDimensions{
    Dimension::OriginalityInThought,
    Dimension::OriginalityInForm,
    Dimension::OriginalityInThemeAndContent,
    Dimension::StructuralFlexibility,
    Dimension::PerspectiveAndVoiceFlexibility,
};

std::string_view dimension_name(Dimension d) noexcept;
/// The canonical TTCW question for a dimension.
std::string_view question_text(Dimension d) noexcept;
/// Accepts the enum spelling ("OriginalityInThought") or the spaced form
/// ("Originality in Thought"). Throws MalformedRecord otherwise.
Dimension parse_dimension(std::string_view name);
std::optional<Dimension> try_parse_dimension(std::string_view name) noexcept;

enum class Verdict : int { No = 0, Yes = 1 };

// The single conversion point between on-disk verdict strings and labels.
Verdict parse_verdict(std::string_view s);
std::string_view verdict_name(Verdict v) noexcept;
inline int verdict_label(Verdict v) noexcept { return static_cast<int>(v); }
inline Verdict verdict_from_label(int label) noexcept { return label != 0 ? Verdict::Yes : Verdict::No; }

inline constexpr int kNumExperts = 3;
inline bool is_expert_id(int id) noexcept { return id >= 1 && id <= kNumExperts; }

struct Story {
  std::string id;
  std::string text;
  bool operator==(const Story&) const = default;
};

struct Annotation {
  int expert_id = 0;
  std::string explanation;
  Verdict verdict = Verdict::No;
  bool operator==(const Annotation&) const = default;
};

struct AnnotatedExample {
  std::size_t story_index = 0;  // into Corpus::stories
  Dimension dimension = Dimension::OriginalityInThought;
  Annotation annotation;
  bool operator==(const AnnotatedExample&) const = default;
};

class Corpus {
 public:
  Corpus() = default;

  /// Builds and validates. Throws on dangling refs, duplicates, bad ids.
  Corpus(std::vector<Story> stories, std::vector<AnnotatedExample> examples,
         std::map<std::string, std::string> metadata = {});

  [[nodiscard]] const std::vector<Story>& stories() const noexcept { return stories_; }
  [[nodiscard]] const std::vector<AnnotatedExample>& examples() const noexcept { return examples_; }
  [[nodiscard]] const std::map<std::string, std::string>& metadata() const noexcept { return metadata_; }
  [[nodiscard]] const std::vector<std::string>& warnings() const noexcept { return warnings_; }

  [[nodiscard]] const Story& story_of(const AnnotatedExample& ex) const { return stories_.at(ex.story_index); }
  [[nodiscard]] std::optional<std::size_t> find_story(std::string_view id) const;

  /// "story_id|Dimension|expert_id", stable across serialization.
  [[nodiscard]] std::string example_key(std::size_t example_index) const;

  /// Distinct annotator ids, ascending.
  [[nodiscard]] std::vector<int> annotator_ids() const;
  [[nodiscard]] std::vector<Dimension> dimensions_present() const;

  void set_metadata(const std::string& key, const std::string& value) { metadata_[key] = value; }

  /// Content equality (stories and examples); metadata and warnings ignored.
  bool operator==(const Corpus& other) const {
    return stories_ == other.stories_ && examples_ == other.examples_;
  }

 private:
  void validate();

  std::vector<Story> stories_;
  std::vector<AnnotatedExample> examples_;
  std::map<std::string, std::string> metadata_;
  std::vector<std::string> warnings_;
};

/// Reads corpus JSONL. Story text comes inline ("story_text") or from a
/// sidecar stories.jsonl next to the corpus file.
Corpus load_corpus(const std::filesystem::path& path);
Corpus parse_corpus(std::string_view jsonl, const std::map<std::string, std::string>& sidecar_texts = {},
                    std::string_view source = "<memory>");

/// One JSONL line per example with inline story_text.
std::string serialize_corpus(const Corpus& corpus);
void write_corpus(const Corpus& corpus, const std::filesystem::path& path);

enum class SplitUnit { Group, Example };
enum class FoldKind { KFold, OOD };

inline constexpr int kTrain = 0;
inline constexpr int kTest = 1;

struct FoldPlan {
  FoldKind kind = FoldKind::KFold;
  int k = 0;
  std::optional<Dimension> heldout;
  SplitUnit unit = SplitUnit::Group;
  std::uint64_t seed = 0;
  // assignment[i] is the fold index of example i (KFold) or kTrain/kTest (OOD).
  std::vector<int> assignment;
  std::vector<std::string> example_keys;

  [[nodiscard]] int num_folds() const noexcept { return kind == FoldKind::KFold ? k : 1; }
  /// Train/test example indices for fold f (OOD plans have exactly fold 0).
  [[nodiscard]] std::vector<std::size_t> train_indices(int fold) const;
  [[nodiscard]] std::vector<std::size_t> test_indices(int fold) const;

  bool operator==(const FoldPlan&) const = default;
};

FoldPlan make_kfold(const Corpus& corpus, int k, std::uint64_t seed, SplitUnit unit = SplitUnit::Group);
FoldPlan make_ood_split(const Corpus& corpus, Dimension heldout);

std::string serialize_fold_plan(const FoldPlan& plan);
FoldPlan parse_fold_plan(std::string_view json);

}  // namespace curio
