#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "curio/config.hpp"
#include "curio/data_model.hpp"
#include "curio/synth.hpp"

using namespace curio;

namespace {

template <typename Fn>
ErrorCode error_code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorCode::Io;
}

std::string record(const std::string& story, const std::string& dim, int expert, const std::string& verdict,
                   const std::string& text = "Once upon a time.") {
  nlohmann::json j{{"story_id", story},   {"dimension", dim},     {"expert_id", expert},
                   {"explanation", "ok"}, {"verdict", verdict},   {"story_text", text}};
  return j.dump() + "\n";
}

const Corpus& ttcw_shaped() {
  static const Corpus c = generate_corpus(default_synthetic_spec()).corpus;
  return c;
}

// Ten single-example stories, four of them yes.
Corpus toy_ten() {
  std::vector<Story> stories;
  std::vector<AnnotatedExample> examples;
  for (int i = 0; i < 10; ++i) {
    stories.push_back({"t" + std::to_string(i), "story " + std::to_string(i)});
    examples.push_back({static_cast<std::size_t>(i), Dimension::OriginalityInForm,
                        {1, "because", i < 4 ? Verdict::Yes : Verdict::No}});
  }
  return Corpus(std::move(stories), std::move(examples));
}

}  // namespace

TEST(Dimensions, NamesRoundTrip) {
  for (const auto d : kAllDimensions) {
    EXPECT_EQ(parse_dimension(dimension_name(d)), d);
    EXPECT_FALSE(question_text(d).empty());
  }
  EXPECT_EQ(parse_dimension("Originality in Thought"), Dimension::OriginalityInThought);
  EXPECT_EQ(error_code_of([] { parse_dimension("Wit"); }), ErrorCode::MalformedRecord);
}

TEST(Verdicts, OnlyYesAndNo) {
  EXPECT_EQ(parse_verdict("yes"), Verdict::Yes);
  EXPECT_EQ(parse_verdict("no"), Verdict::No);
  EXPECT_EQ(error_code_of([] { parse_verdict("maybe"); }), ErrorCode::InvalidVerdict);
}

TEST(LoadCorpus, TtcwShapedRoundTrip) {
  const auto& c = ttcw_shaped();
  EXPECT_EQ(c.stories().size(), 48u);
  EXPECT_EQ(c.examples().size(), 720u);
  EXPECT_TRUE(c.warnings().empty());
  const auto back = parse_corpus(serialize_corpus(c));
  EXPECT_EQ(back, c);
}

TEST(LoadCorpus, EmptyInputIsMalformed) {
  try {
    parse_corpus("");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MalformedRecord);
    EXPECT_NE(std::string(e.what()).find("empty corpus"), std::string::npos);
  }
}

TEST(LoadCorpus, MaybeVerdictIsInvalid) {
  const auto text = record("s1", "OriginalityInForm", 1, "yes") + record("s1", "OriginalityInForm", 2, "maybe");
  try {
    parse_corpus(text);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidVerdict);
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos);
  }
}

TEST(LoadCorpus, MissingFieldNamesLineAndField) {
  try {
    parse_corpus(R"({"story_id":"s1","dimension":"OriginalityInForm","verdict":"yes","explanation":"x","story_text":"t"})");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MalformedRecord);
    EXPECT_NE(std::string(e.what()).find("expert_id"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find(":1:"), std::string::npos);
  }
}

TEST(LoadCorpus, DuplicateDanglingAndBadIds) {
  const auto dup = record("s1", "OriginalityInForm", 1, "yes") + record("s1", "OriginalityInForm", 1, "no");
  EXPECT_EQ(error_code_of([&] { parse_corpus(dup); }), ErrorCode::DuplicateExample);
  const std::string no_text = R"({"story_id":"s9","dimension":"OriginalityInForm","expert_id":1,"explanation":"x","verdict":"yes"})";
  EXPECT_EQ(error_code_of([&] { parse_corpus(no_text); }), ErrorCode::DanglingStoryRef);
  EXPECT_EQ(error_code_of([&] { parse_corpus(record("s1", "OriginalityInForm", 0, "yes")); }),
            ErrorCode::MalformedRecord);
  const std::string empty_expl =
      R"({"story_id":"s1","dimension":"OriginalityInForm","expert_id":2,"explanation":"","verdict":"yes","story_text":"t"})";
  EXPECT_EQ(error_code_of([&] { parse_corpus(empty_expl); }), ErrorCode::MalformedRecord);
}

TEST(LoadCorpus, SidecarStoriesFile) {
  const auto dir = std::filesystem::temp_directory_path() / "curio_sidecar_test";
  std::filesystem::create_directories(dir);
  write_file(dir / "stories.jsonl", R"({"story_id":"s1","text":"From the sidecar."})" "\n");
  write_file(dir / "corpus.jsonl",
             R"({"story_id":"s1","dimension":"OriginalityInForm","expert_id":1,"explanation":"x","verdict":"yes"})" "\n");
  const auto c = load_corpus(dir / "corpus.jsonl");
  EXPECT_EQ(c.stories().at(0).text, "From the sidecar.");
  EXPECT_FALSE(c.warnings().empty());  // partial corpus
  std::filesystem::remove_all(dir);
}

TEST(KFold, TtcwFoldsHave144Examples) {
  const auto plan = make_kfold(ttcw_shaped(), 5, 42);
  for (int f = 0; f < 5; ++f) {
    EXPECT_EQ(plan.test_indices(f).size(), 144u);
    EXPECT_EQ(plan.train_indices(f).size(), 576u);
  }
}

TEST(KFold, PartitionGroupingAndStratification) {
  const auto& c = ttcw_shaped();
  int total_yes = 0;
  for (const auto& ex : c.examples()) total_yes += verdict_label(ex.annotation.verdict);
  const double ratio = static_cast<double>(total_yes) / static_cast<double>(c.examples().size());
  for (std::uint64_t seed : {1, 42, 2024}) {
    const auto plan = make_kfold(c, 5, seed);
    std::vector<int> seen(c.examples().size(), 0);
    for (int f = 0; f < 5; ++f) {
      const auto test = plan.test_indices(f);
      int yes = 0;
      for (auto i : test) {
        ++seen[i];
        yes += verdict_label(c.examples()[i].annotation.verdict);
      }
      const double expected = ratio * static_cast<double>(test.size());
      EXPECT_LE(std::abs(yes - expected), 1.0 + 1e-9) << "seed " << seed << " fold " << f;
    }
    EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](int v) { return v == 1; }));
    for (std::size_t i = 0; i < c.examples().size(); ++i) {
      for (std::size_t j = i + 1; j < c.examples().size(); ++j) {
        const auto& a = c.examples()[i];
        const auto& b = c.examples()[j];
        if (a.story_index == b.story_index && a.dimension == b.dimension) {
          ASSERT_EQ(plan.assignment[i], plan.assignment[j]);
        }
      }
    }
  }
}

TEST(KFold, ToyTenExamplesExampleUnit) {
  const auto c = toy_ten();
  const auto plan = make_kfold(c, 5, 42, SplitUnit::Example);
  for (int f = 0; f < 5; ++f) {
    const auto test = plan.test_indices(f);
    ASSERT_EQ(test.size(), 2u);
    int yes = 0;
    for (auto i : test) yes += verdict_label(c.examples()[i].annotation.verdict);
    EXPECT_LE(std::abs(yes - 2 * 0.4), 1.0);
  }
}

TEST(KFold, DeterministicBytes) {
  const auto a = serialize_fold_plan(make_kfold(ttcw_shaped(), 5, 42));
  const auto b = serialize_fold_plan(make_kfold(ttcw_shaped(), 5, 42));
  EXPECT_EQ(a, b);
  EXPECT_EQ(parse_fold_plan(a), make_kfold(ttcw_shaped(), 5, 42));
  EXPECT_NE(a, serialize_fold_plan(make_kfold(ttcw_shaped(), 5, 43)));
}

TEST(KFold, TooFewGroups) {
  EXPECT_EQ(error_code_of([] { make_kfold(toy_ten(), 11, 1, SplitUnit::Example); }), ErrorCode::TooFewGroups);
}

TEST(OodSplit, HeldOutDimensionIsTestSet) {
  const auto& c = ttcw_shaped();
  const auto plan = make_ood_split(c, Dimension::OriginalityInThought);
  const auto train = plan.train_indices(0);
  const auto test = plan.test_indices(0);
  EXPECT_EQ(train.size(), 576u);
  EXPECT_EQ(test.size(), 144u);
  const std::set<std::size_t> tr(train.begin(), train.end());
  for (auto i : test) {
    EXPECT_EQ(tr.count(i), 0u);
    EXPECT_EQ(c.examples()[i].dimension, Dimension::OriginalityInThought);
  }
  for (auto i : train) EXPECT_NE(c.examples()[i].dimension, Dimension::OriginalityInThought);
}

TEST(OodSplit, AbsentDimension) {
  EXPECT_EQ(error_code_of([] { make_ood_split(toy_ten(), Dimension::StructuralFlexibility); }),
            ErrorCode::DimensionAbsent);
}

TEST(Corpus, ExampleKeysAreStable) {
  const auto c = toy_ten();
  EXPECT_EQ(c.example_key(3), "t3|OriginalityInForm|1");
  EXPECT_EQ(c.annotator_ids(), std::vector<int>{1});
  EXPECT_EQ(c.dimensions_present(), std::vector<Dimension>{Dimension::OriginalityInForm});
}
