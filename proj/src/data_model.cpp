#include "curio/data_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include <nlohmann/json.hpp>

#include "curio/random.hpp"

namespace curio {

using json = nlohmann::json;

namespace {

struct DimensionInfo {
  Dimension dim;
  std::string_view name;
  std::string_view spaced;
  std::string_view question;
};

constexpr std::array<DimensionInfo, 5> kDimensionTable{{
    {Dimension::OriginalityInThought, "OriginalityInThought", "Originality in Thought",
     "Is the story an original piece of writing without any cliches?"},
    {Dimension::OriginalityInForm, "OriginalityInForm", "Originality in Form",
     "Does the story show originality in its form and/or structure?"},
    {Dimension::OriginalityInThemeAndContent, "OriginalityInThemeAndContent", "Originality in Theme and Content",
     "Will an average reader of this story obtain a unique and original idea from reading it?"},
    {Dimension::StructuralFlexibility, "StructuralFlexibility", "Structural Flexibility",
     "Does the story contain turns that are both surprising and appropriate?"},
    {Dimension::PerspectiveAndVoiceFlexibility, "PerspectiveAndVoiceFlexibility",
     "Perspective and Voice Flexibility",
     "Does the story provide diverse perspectives, and if there are unlikeable characters, are their "
     "perspectives presented convincingly and accurately?"},
}};

const DimensionInfo& info(Dimension d) { return kDimensionTable.at(static_cast<std::size_t>(d)); }

[[noreturn]] void malformed(std::string_view source, std::size_t line, const std::string& what) {
  std::ostringstream os;
  os << source << ":" << line << ": " << what;
  throw Error(ErrorCode::MalformedRecord, os.str());
}

const json& require_field(const json& rec, const char* field, std::string_view source, std::size_t line) {
  const auto it = rec.find(field);
  if (it == rec.end()) malformed(source, line, std::string("missing field '") + field + "'");
  return *it;
}

std::string require_string(const json& rec, const char* field, std::string_view source, std::size_t line) {
  const auto& v = require_field(rec, field, source, line);
  if (!v.is_string()) malformed(source, line, std::string("field '") + field + "' must be a string");
  return v.get<std::string>();
}

std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string line(text.substr(start, end - start));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    if (end == text.size()) break;
    start = end + 1;
  }
  return lines;
}

bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return c == ' ' || c == '\t' || c == '\r'; });
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

std::string_view dimension_name(Dimension d) noexcept { return info(d).name; }
std::string_view question_text(Dimension d) noexcept { return info(d).question; }

std::optional<Dimension> try_parse_dimension(std::string_view name) noexcept {
  for (const auto& row : kDimensionTable) {
    if (name == row.name || name == row.spaced) return row.dim;
  }
  return std::nullopt;
}

Dimension parse_dimension(std::string_view name) {
  if (auto d = try_parse_dimension(name)) return *d;
  throw Error(ErrorCode::MalformedRecord, "unknown dimension '" + std::string(name) + "'");
}

Verdict parse_verdict(std::string_view s) {
  if (s == "yes") return Verdict::Yes;
  if (s == "no") return Verdict::No;
  throw Error(ErrorCode::InvalidVerdict, "verdict must be \"yes\" or \"no\", got \"" + std::string(s) + "\"");
}

std::string_view verdict_name(Verdict v) noexcept { return v == Verdict::Yes ? "yes" : "no"; }

// ---------------------------------------------------------------------------
// Corpus

Corpus::Corpus(std::vector<Story> stories, std::vector<AnnotatedExample> examples,
               std::map<std::string, std::string> metadata)
    : stories_(std::move(stories)), examples_(std::move(examples)), metadata_(std::move(metadata)) {
  validate();
}

void Corpus::validate() {
  std::set<std::string_view> ids;
  for (const auto& s : stories_) {
    if (s.id.empty()) throw Error(ErrorCode::MalformedRecord, "story with empty story_id");
    if (s.text.empty()) throw Error(ErrorCode::MalformedRecord, "story '" + s.id + "' has empty text");
    if (!ids.insert(s.id).second) throw Error(ErrorCode::DuplicateExample, "duplicate story_id '" + s.id + "'");
  }
  std::set<std::tuple<std::size_t, int, int>> seen;
  for (std::size_t i = 0; i < examples_.size(); ++i) {
    const auto& ex = examples_[i];
    if (ex.story_index >= stories_.size()) {
      throw Error(ErrorCode::DanglingStoryRef, "example " + std::to_string(i) + " refers to a missing story");
    }
    const int id = ex.annotation.expert_id;
    if (id < 1) throw Error(ErrorCode::MalformedRecord, "expert_id must be positive, got " + std::to_string(id));
    if (is_expert_id(id) && ex.annotation.explanation.empty()) {
      throw Error(ErrorCode::MalformedRecord, "expert annotation " + example_key(i) + " has empty explanation");
    }
    if (!seen.emplace(ex.story_index, static_cast<int>(ex.dimension), id).second) {
      throw Error(ErrorCode::DuplicateExample, "duplicate example " + example_key(i));
    }
  }

  const auto dims = dimensions_present();
  const auto annotators = annotator_ids();
  if (stories_.size() != 48 || dims.size() != 5 || annotators.size() != 3 || examples_.size() != 720) {
    std::ostringstream os;
    os << "partial corpus: " << stories_.size() << " stories, " << dims.size() << " dimensions, "
       << annotators.size() << " annotators, " << examples_.size() << " examples (TTCW-complete is 48/5/3/720)";
    warnings_.push_back(os.str());
  }
}

std::optional<std::size_t> Corpus::find_story(std::string_view id) const {
  for (std::size_t i = 0; i < stories_.size(); ++i) {
    if (stories_[i].id == id) return i;
  }
  return std::nullopt;
}

std::string Corpus::example_key(std::size_t example_index) const {
  const auto& ex = examples_.at(example_index);
  std::string key = ex.story_index < stories_.size() ? stories_[ex.story_index].id : std::string("?");
  key += '|';
  key += dimension_name(ex.dimension);
  key += '|';
  key += std::to_string(ex.annotation.expert_id);
  return key;
}

std::vector<int> Corpus::annotator_ids() const {
  std::set<int> ids;
  for (const auto& ex : examples_) ids.insert(ex.annotation.expert_id);
  return {ids.begin(), ids.end()};
}

std::vector<Dimension> Corpus::dimensions_present() const {
  std::set<int> dims;
  for (const auto& ex : examples_) dims.insert(static_cast<int>(ex.dimension));
  std::vector<Dimension> out;
  for (int d : dims) out.push_back(static_cast<Dimension>(d));
  return out;
}

// ---------------------------------------------------------------------------
// JSONL I/O

Corpus parse_corpus(std::string_view jsonl, const std::map<std::string, std::string>& sidecar_texts,
                    std::string_view source) {
  std::vector<Story> stories;
  std::map<std::string, std::size_t, std::less<>> story_index;
  std::vector<AnnotatedExample> examples;
  std::vector<std::string> question_warnings;

  const auto lines = split_lines(jsonl);
  for (std::size_t n = 0; n < lines.size(); ++n) {
    const std::size_t line_no = n + 1;
    if (is_blank(lines[n])) continue;
    json rec;
    try {
      rec = json::parse(lines[n]);
    } catch (const json::parse_error& e) {
      malformed(source, line_no, std::string("invalid JSON: ") + e.what());
    }
    if (!rec.is_object()) malformed(source, line_no, "record must be a JSON object");

    const std::string story_id = require_string(rec, "story_id", source, line_no);
    if (story_id.empty()) malformed(source, line_no, "field 'story_id' is empty");
    const std::string dim_name = require_string(rec, "dimension", source, line_no);
    const auto dim = try_parse_dimension(dim_name);
    if (!dim) malformed(source, line_no, "field 'dimension': unknown value '" + dim_name + "'");

    const auto& id_field = require_field(rec, "expert_id", source, line_no);
    if (!id_field.is_number_integer()) malformed(source, line_no, "field 'expert_id' must be an integer");
    const int expert_id = id_field.get<int>();

    const std::string explanation = require_string(rec, "explanation", source, line_no);
    const std::string verdict_str = require_string(rec, "verdict", source, line_no);
    Verdict verdict{};
    try {
      verdict = parse_verdict(verdict_str);
    } catch (const Error& e) {
      throw Error(ErrorCode::InvalidVerdict, std::string(source) + ":" + std::to_string(line_no) +
                                                 ": field 'verdict': \"" + verdict_str + "\" is not yes/no");
    }

    if (const auto q = rec.find("question"); q != rec.end()) {
      if (!q->is_string()) malformed(source, line_no, "field 'question' must be a string");
      if (q->get<std::string>() != question_text(*dim)) {
        question_warnings.push_back(std::string(source) + ":" + std::to_string(line_no) +
                                    ": question text differs from the canonical text for " + dim_name);
      }
    }

    std::optional<std::string> inline_text;
    if (const auto t = rec.find("story_text"); t != rec.end() && !t->is_null()) {
      if (!t->is_string()) malformed(source, line_no, "field 'story_text' must be a string");
      inline_text = t->get<std::string>();
    }

    std::size_t idx = 0;
    if (const auto it = story_index.find(story_id); it != story_index.end()) {
      idx = it->second;
      if (inline_text && *inline_text != stories[idx].text) {
        malformed(source, line_no, "story_text for '" + story_id + "' conflicts with an earlier record");
      }
    } else {
      std::string text;
      if (inline_text) {
        text = *inline_text;
      } else if (const auto s = sidecar_texts.find(story_id); s != sidecar_texts.end()) {
        text = s->second;
      } else {
        throw Error(ErrorCode::DanglingStoryRef, std::string(source) + ":" + std::to_string(line_no) +
                                                     ": story '" + story_id + "' has no text");
      }
      if (text.empty()) malformed(source, line_no, "field 'story_text' is empty");
      idx = stories.size();
      story_index.emplace(story_id, idx);
      stories.push_back({story_id, std::move(text)});
    }

    AnnotatedExample ex;
    ex.story_index = idx;
    ex.dimension = *dim;
    ex.annotation = {expert_id, explanation, verdict};
    examples.push_back(std::move(ex));
  }
  if (examples.empty()) throw Error(ErrorCode::MalformedRecord, std::string(source) + ": empty corpus");

  Corpus corpus(std::move(stories), std::move(examples), {{"source", std::string(source)}});
  if (!question_warnings.empty()) {
    corpus.set_metadata("question_warnings", std::to_string(question_warnings.size()));
  }
  return corpus;
}

Corpus load_corpus(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::Io, "corpus not found: " + path.string());
  const std::string text = read_file(path);

  std::map<std::string, std::string> sidecar;
  const auto sidecar_path = path.parent_path() / "stories.jsonl";
  if (std::filesystem::exists(sidecar_path) && sidecar_path != path) {
    const auto lines = split_lines(read_file(sidecar_path));
    for (std::size_t n = 0; n < lines.size(); ++n) {
      if (is_blank(lines[n])) continue;
      json rec;
      try {
        rec = json::parse(lines[n]);
      } catch (const json::parse_error& e) {
        malformed(sidecar_path.string(), n + 1, std::string("invalid JSON: ") + e.what());
      }
      const auto id = require_string(rec, "story_id", sidecar_path.string(), n + 1);
      sidecar[id] = require_string(rec, "text", sidecar_path.string(), n + 1);
    }
  }
  return parse_corpus(text, sidecar, path.string());
}

std::string serialize_corpus(const Corpus& corpus) {
  std::string out;
  for (const auto& ex : corpus.examples()) {
    json rec;
    const auto& story = corpus.story_of(ex);
    rec["story_id"] = story.id;
    rec["story_text"] = story.text;
    rec["dimension"] = dimension_name(ex.dimension);
    rec["question"] = question_text(ex.dimension);
    rec["expert_id"] = ex.annotation.expert_id;
    rec["explanation"] = ex.annotation.explanation;
    rec["verdict"] = verdict_name(ex.annotation.verdict);
    out += rec.dump();
    out += '\n';
  }
  return out;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::Io, "cannot write " + path.string());
  os << serialize_corpus(corpus);
}

// ---------------------------------------------------------------------------
// Splits

std::vector<std::size_t> FoldPlan::train_indices(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    const bool is_test = kind == FoldKind::KFold ? assignment[i] == fold : assignment[i] == kTest;
    if (!is_test) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> FoldPlan::test_indices(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    const bool is_test = kind == FoldKind::KFold ? assignment[i] == fold : assignment[i] == kTest;
    if (is_test) out.push_back(i);
  }
  return out;
}

namespace {

struct Group {
  std::vector<std::size_t> members;
  int yes = 0;
  [[nodiscard]] int size() const { return static_cast<int>(members.size()); }
};

struct FoldTally {
  int size = 0;
  int yes = 0;
};

std::vector<std::string> all_keys(const Corpus& corpus) {
  std::vector<std::string> keys;
  keys.reserve(corpus.examples().size());
  for (std::size_t i = 0; i < corpus.examples().size(); ++i) keys.push_back(corpus.example_key(i));
  return keys;
}

}  // namespace

FoldPlan make_kfold(const Corpus& corpus, int k, std::uint64_t seed, SplitUnit unit) {
  if (k < 2) throw Error(ErrorCode::InvalidConfig, "k must be at least 2");
  const auto& examples = corpus.examples();

  std::vector<Group> groups;
  if (unit == SplitUnit::Group) {
    std::map<std::pair<std::size_t, int>, std::size_t> by_key;
    for (std::size_t i = 0; i < examples.size(); ++i) {
      const auto key = std::make_pair(examples[i].story_index, static_cast<int>(examples[i].dimension));
      auto [it, inserted] = by_key.emplace(key, groups.size());
      if (inserted) groups.emplace_back();
      groups[it->second].members.push_back(i);
    }
  } else {
    for (std::size_t i = 0; i < examples.size(); ++i) groups.push_back({{i}, 0});
  }
  for (auto& g : groups) {
    g.yes = 0;
    for (auto i : g.members) g.yes += verdict_label(examples[i].annotation.verdict);
  }
  if (static_cast<int>(groups.size()) < k) {
    throw Error(ErrorCode::TooFewGroups, std::to_string(groups.size()) + " groups for k=" + std::to_string(k));
  }

  const int total = static_cast<int>(examples.size());
  const int total_yes = std::accumulate(groups.begin(), groups.end(), 0,
                                        [](int acc, const Group& g) { return acc + g.yes; });
  const double ratio = total > 0 ? static_cast<double>(total_yes) / total : 0.0;

  // Shuffle, then order by size and yes-count so big/positive groups are
  // spread first; the shuffle breaks ties deterministically per seed.
  std::vector<std::size_t> order(groups.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (groups[a].size() != groups[b].size()) return groups[a].size() > groups[b].size();
    return groups[a].yes > groups[b].yes;
  });

  std::vector<FoldTally> tally(static_cast<std::size_t>(k));
  std::vector<int> group_fold(groups.size(), -1);
  const auto deviation = [&](const FoldTally& t) { return t.yes - ratio * t.size; };
  for (const auto gi : order) {
    const auto& g = groups[gi];
    int best = -1;
    for (int f = 0; f < k; ++f) {
      if (best < 0) {
        best = f;
        continue;
      }
      const auto& cur = tally[static_cast<std::size_t>(f)];
      const auto& bst = tally[static_cast<std::size_t>(best)];
      if (cur.size != bst.size) {
        if (cur.size < bst.size) best = f;
        continue;
      }
      const double dc = std::abs(deviation({cur.size + g.size(), cur.yes + g.yes}));
      const double db = std::abs(deviation({bst.size + g.size(), bst.yes + g.yes}));
      if (dc < db - 1e-12) best = f;
    }
    group_fold[gi] = best;
    tally[static_cast<std::size_t>(best)].size += g.size();
    tally[static_cast<std::size_t>(best)].yes += g.yes;
  }

  // Repair: swap equal-size groups between the most positive and most
  // negative folds until every fold is within one example of its share.
  for (std::size_t iter = 0; iter < groups.size() * 4; ++iter) {
    int hi = 0;
    int lo = 0;
    for (int f = 1; f < k; ++f) {
      if (deviation(tally[static_cast<std::size_t>(f)]) > deviation(tally[static_cast<std::size_t>(hi)])) hi = f;
      if (deviation(tally[static_cast<std::size_t>(f)]) < deviation(tally[static_cast<std::size_t>(lo)])) lo = f;
    }
    const double dev_hi = deviation(tally[static_cast<std::size_t>(hi)]);
    const double dev_lo = deviation(tally[static_cast<std::size_t>(lo)]);
    if (std::max(std::abs(dev_hi), std::abs(dev_lo)) <= 1.0 + 1e-9) break;

    double best_cost = std::max(std::abs(dev_hi), std::abs(dev_lo));
    std::optional<std::pair<std::size_t, std::size_t>> best_swap;
    for (std::size_t a = 0; a < groups.size(); ++a) {
      if (group_fold[a] != hi) continue;
      for (std::size_t b = 0; b < groups.size(); ++b) {
        if (group_fold[b] != lo || groups[b].size() != groups[a].size()) continue;
        const int d = groups[a].yes - groups[b].yes;
        if (d <= 0) continue;
        const double cost = std::max(std::abs(dev_hi - d), std::abs(dev_lo + d));
        if (cost < best_cost - 1e-12) {
          best_cost = cost;
          best_swap = {a, b};
        }
      }
    }
    if (!best_swap) break;
    const auto [a, b] = *best_swap;
    const int d = groups[a].yes - groups[b].yes;
    group_fold[a] = lo;
    group_fold[b] = hi;
    tally[static_cast<std::size_t>(hi)].yes -= d;
    tally[static_cast<std::size_t>(lo)].yes += d;
  }

  FoldPlan plan;
  plan.kind = FoldKind::KFold;
  plan.k = k;
  plan.unit = unit;
  plan.seed = seed;
  plan.assignment.assign(examples.size(), -1);
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    for (auto i : groups[gi].members) plan.assignment[i] = group_fold[gi];
  }
  plan.example_keys = all_keys(corpus);
  return plan;
}

FoldPlan make_ood_split(const Corpus& corpus, Dimension heldout) {
  const auto dims = corpus.dimensions_present();
  if (std::find(dims.begin(), dims.end(), heldout) == dims.end()) {
    throw Error(ErrorCode::DimensionAbsent,
                "held-out dimension " + std::string(dimension_name(heldout)) + " is not in the corpus");
  }
  FoldPlan plan;
  plan.kind = FoldKind::OOD;
  plan.k = 1;
  plan.heldout = heldout;
  plan.assignment.reserve(corpus.examples().size());
  for (const auto& ex : corpus.examples()) plan.assignment.push_back(ex.dimension == heldout ? kTest : kTrain);
  plan.example_keys = all_keys(corpus);
  return plan;
}

std::string serialize_fold_plan(const FoldPlan& plan) {
  json j;
  j["kind"] = plan.kind == FoldKind::KFold ? "kfold" : "ood";
  j["k"] = plan.k;
  j["seed"] = plan.seed;
  j["unit"] = plan.unit == SplitUnit::Group ? "group" : "example";
  j["heldout"] = plan.heldout ? json(std::string(dimension_name(*plan.heldout))) : json(nullptr);
  j["assignment"] = plan.assignment;
  j["example_keys"] = plan.example_keys;
  return j.dump(1);
}

FoldPlan parse_fold_plan(std::string_view text) {
  FoldPlan plan;
  try {
    const auto j = json::parse(text);
    plan.kind = j.at("kind").get<std::string>() == "ood" ? FoldKind::OOD : FoldKind::KFold;
    plan.k = j.at("k").get<int>();
    plan.seed = j.at("seed").get<std::uint64_t>();
    plan.unit = j.at("unit").get<std::string>() == "example" ? SplitUnit::Example : SplitUnit::Group;
    if (!j.at("heldout").is_null()) plan.heldout = parse_dimension(j.at("heldout").get<std::string>());
    plan.assignment = j.at("assignment").get<std::vector<int>>();
    plan.example_keys = j.at("example_keys").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedRecord, std::string("fold plan: ") + e.what());
  }
  return plan;
}

}  // namespace curio
