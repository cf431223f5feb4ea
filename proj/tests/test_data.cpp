#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "matemb/data.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

using namespace matemb;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  const fs::path dir = fs::temp_directory_path() / "matemb_data_test";
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

// Independent token-overlap recount used as the gold-score oracle.
double overlap_oracle(const std::string& a, const std::string& b) {
  const auto split = [](const std::string& text) {
    std::set<std::string> tokens;
    std::istringstream in(text);
    std::string tok;
    while (in >> tok) tokens.insert(tok);
    return tokens;
  };
  const auto sa = split(a), sb = split(b);
  std::size_t common = 0;
  for (const auto& t : sa)
    if (sb.count(t)) ++common;
  const std::size_t unioned = sa.size() + sb.size() - common;
  if (unioned == 0) return 0.0;
  double ratio = static_cast<double>(common) / static_cast<double>(unioned);
  const double levels[5] = {0.0, 0.25, 0.5, 0.75, 1.0};
  double best = levels[0];
  for (double level : levels)
    if (std::abs(ratio - level) < std::abs(ratio - best)) best = level;
  return best * 5.0;
}

}  // namespace

TEST_CASE("jsonl triplet loading") {
  const fs::path path = temp_dir() / "triplets.jsonl";
  write_file(path,
             R"({"anchor":"a b","positive":"a c","negative":"x y"})"
             "\n"
             R"({"anchor":"d","positive":"d e","negative":"z"})"
             "\n"
             R"({"anchor":"f","positive":"f","negative":"w"})"
             "\n");
  IngestStats stats;
  const auto records = load_triplets(path.string(), FileFormat::Jsonl, &stats);
  REQUIRE(records.size() == 3);
  CHECK(records[0].anchor == "a b");
  CHECK(records[2].negative == "w");
  CHECK(stats.records == 3);
  CHECK(stats.duplicates == 1);  // anchor == positive in the third record
}

TEST_CASE("tsv scored pair parses the 0-5 scale and normalizes") {
  const fs::path path = temp_dir() / "scored.tsv";
  write_file(path, "hello there\tgeneral kenobi\t2.5\n");
  const auto records = load_scored_pairs(path.string(), FileFormat::Tsv);
  REQUIRE(records.size() == 1);
  CHECK(records[0].gold_score == 2.5);
  CHECK(records[0].normalized() == 0.5);
}

TEST_CASE("unknown label names the token and 1-based line") {
  const fs::path path = temp_dir() / "labeled.tsv";
  write_file(path,
             "p1\th1\tentailment\n"
             "p2\th2\tmaybe\n");
  CHECK_THROWS_WITH_AS(load_labeled_pairs(path.string(), FileFormat::Tsv),
                       doctest::Contains("unknown label 'maybe' at line 2"),
                       std::runtime_error);
}

TEST_CASE("malformed records carry line numbers") {
  const fs::path bad_json = temp_dir() / "bad.jsonl";
  write_file(bad_json,
             R"({"anchor":"a","positive":"b","negative":"c"})"
             "\nnot-json\n");
  CHECK_THROWS_WITH_AS(load_triplets(bad_json.string(), FileFormat::Jsonl),
                       doctest::Contains("line 2"), std::runtime_error);

  const fs::path bad_score = temp_dir() / "bad_score.tsv";
  write_file(bad_score, "a\tb\t7.5\n");
  CHECK_THROWS_WITH_AS(load_scored_pairs(bad_score.string(), FileFormat::Tsv),
                       doctest::Contains("outside [0,5]"), std::runtime_error);

  const fs::path missing_field = temp_dir() / "missing.jsonl";
  write_file(missing_field, R"({"premise":"p","label":"neutral"})"
                            "\n");
  CHECK_THROWS_WITH_AS(
      load_labeled_pairs(missing_field.string(), FileFormat::Jsonl),
      doctest::Contains("line 1"), std::runtime_error);
}

TEST_CASE("round-trips through both formats preserve every field") {
  const std::vector<TripletExample> triplets{{"a b", "c", "d e f"},
                                             {"g", "g", "h"}};
  const std::vector<LabeledPair> labeled{
      {"p one", "h one", PairLabel::Entailment},
      {"p two", "h two", PairLabel::Contradiction}};
  const std::vector<ScoredPair> scored{{"s a", "s b", 3.75},
                                       {"s c", "s d", 0.0}};
  for (FileFormat format : {FileFormat::Jsonl, FileFormat::Tsv}) {
    const fs::path dir = temp_dir();
    const auto t = dir / "rt_triplets", l = dir / "rt_labeled",
               s = dir / "rt_scored";
    write_triplets(t.string(), format, triplets);
    write_labeled_pairs(l.string(), format, labeled);
    write_scored_pairs(s.string(), format, scored);
    CHECK(load_triplets(t.string(), format) == triplets);
    CHECK(load_labeled_pairs(l.string(), format) == labeled);
    CHECK(load_scored_pairs(s.string(), format) == scored);
  }
}

TEST_CASE("batch_iter is deterministic, keeps partials, permutes by epoch") {
  std::vector<int> records(10);
  for (int i = 0; i < 10; ++i) records[i] = i;

  const auto run = [&](std::size_t epoch) {
    std::vector<int> order;
    for (const auto& batch : batch_iter(records, 4, 7, epoch))
      for (int v : batch.items) order.push_back(v);
    return order;
  };

  CHECK(run(0) == run(0));

  const auto batches = batch_iter(records, 4, 7, 0);
  REQUIRE(batches.size() == 3);
  CHECK(batches[0].items.size() == 4);
  CHECK(batches[1].items.size() == 4);
  CHECK(batches[2].items.size() == 2);
  CHECK(batches[2].epoch == 0);
  CHECK(batches[2].index == 2);

  CHECK(run(0) != run(1));

  // Every record appears exactly once per epoch.
  auto covered = run(3);
  std::sort(covered.begin(), covered.end());
  CHECK(covered == records);
}

TEST_CASE("contrastive batching rejects batch_size < 2") {
  std::vector<int> records{1, 2, 3};
  CHECK_THROWS_AS(batch_iter(records, 1, 0, 0, /*contrastive=*/true),
                  std::invalid_argument);
  CHECK_NOTHROW(batch_iter(records, 1, 0, 0, /*contrastive=*/false));
}

TEST_CASE("synth corpus is deterministic and class-consistent") {
  const SynthCorpus a = synth_corpus(4, 50, 200, 1);
  const SynthCorpus b = synth_corpus(4, 50, 200, 1);
  REQUIRE(a.texts.size() == 200);
  CHECK(a.texts == b.texts);
  CHECK(a.triplets == b.triplets);
  CHECK(a.labeled_pairs == b.labeled_pairs);
  CHECK(a.scored_pairs == b.scored_pairs);

  std::map<std::string, int> class_of;
  for (std::size_t i = 0; i < a.texts.size(); ++i)
    class_of[a.texts[i]] = a.classes[i];
  for (const auto& t : a.triplets) {
    REQUIRE(class_of.count(t.anchor));
    REQUIRE(class_of.count(t.positive));
    REQUIRE(class_of.count(t.negative));
    CHECK(class_of[t.anchor] == class_of[t.positive]);
    CHECK(class_of[t.anchor] != class_of[t.negative]);
  }
}

TEST_CASE("synth corpus gold scores match an independent overlap recount") {
  const SynthCorpus corpus = synth_corpus(4, 50, 200, 1);
  std::map<double, int> histogram;
  for (const auto& pair : corpus.scored_pairs) {
    CHECK(pair.gold_score == overlap_oracle(pair.text_a, pair.text_b));
    CHECK(pair.normalized() >= 0.0);
    CHECK(pair.normalized() <= 1.0);
    histogram[pair.gold_score]++;
  }
  // The generator cycles all five target levels; each should be populated.
  CHECK(histogram.size() == 5);
}

TEST_CASE("synth labeled pairs group premise with all three labels") {
  const SynthCorpus corpus = synth_corpus(4, 10, 200, 3);
  REQUIRE(corpus.labeled_pairs.size() % 3 == 0);
  for (std::size_t i = 0; i < corpus.labeled_pairs.size(); i += 3) {
    CHECK(corpus.labeled_pairs[i].premise ==
          corpus.labeled_pairs[i + 1].premise);
    CHECK(corpus.labeled_pairs[i].premise ==
          corpus.labeled_pairs[i + 2].premise);
    CHECK(corpus.labeled_pairs[i].label == PairLabel::Entailment);
    CHECK(corpus.labeled_pairs[i + 1].label == PairLabel::Neutral);
    CHECK(corpus.labeled_pairs[i + 2].label == PairLabel::Contradiction);
  }
}

TEST_CASE("synth corpus validates its configuration") {
  CHECK_THROWS_AS(synth_corpus(1, 10, 100, 0), std::invalid_argument);
  CHECK_THROWS_AS(synth_corpus(8, 10, 4, 0), std::invalid_argument);
}
