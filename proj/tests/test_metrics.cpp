#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "cdviews/error.hpp"
#include "cdviews/metrics.hpp"
#include "metric_oracle.hpp"

using namespace cdviews;

namespace {

namespace oracle = testing::metric_oracle;

// 20 instances: exact, near-miss, partial overlap, multi-reference and empty.
const std::vector<EvalInstance> kFixture{
    {"q01", "coffee table", {"coffee table"}},
    {"q02", "Coffee Table.", {"coffee table", "table"}},
    {"q03", "sofa", {"couch", "coffee table"}},
    {"q04", "the brown wooden chair", {"brown chair"}},
    {"q05", "the the the", {"the cat"}},
    {"q06", "a b c d", {"a c d e"}},
    {"q07", "left of the bed", {"to the left of the bed", "left side"}},
    {"q08", "two", {"2", "two"}},
    {"q09", "white", {"black"}},
    {"q10", "", {"lamp"}},
    {"q11", "on the desk near the window", {"on the desk", "by the window"}},
    {"q12", "kitchen cabinet", {"cabinet in the kitchen"}},
    {"q13", "it is a round rug", {"round rug"}},
    {"q14", "  Brown   cabinet ", {"brown cabinet"}},
    {"q15", "blue trash can", {"black trash can", "trash bin"}},
    {"q16", "under the sink", {"below the sink", "under sink"}},
    {"q17", "three pillows on the bed", {"3", "three"}},
    {"q18", "monitor?", {"monitor"}},
    {"q19", "the door is closed", {"closed"}},
    {"q20", "bookshelf by the wall", {"bookshelf against the wall"}},
};

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) : path(std::filesystem::temp_directory_path() / name) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST_CASE("normalization") {
  CHECK(normalize_answer("Coffee Table.") == "coffee table");
  CHECK(normalize_answer("  brown   cabinet ") == "brown cabinet");
  CHECK(normalize_answer("what?!.") == "what");
  CHECK(normalize_answer("e.g. chair") == "e.g. chair");
  CHECK(normalize_answer("") == "");
  // Composed and decomposed forms agree after NFC.
  CHECK(normalize_answer("Café") == normalize_answer("Café"));
  CHECK(normalize_answer("ÉTAGE") == "étage");

  std::mt19937_64 rng(6);
  const std::vector<std::string> alphabet{"a", "B", " ", ".", "?", "!", ",", ";", ":", "\t",
                                         "\n", "\u00e9", "e\u0301", "\u00c9", "x", "Z"};
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1), len(0, 30);
  for (int i = 0; i < 3000; ++i) {
    std::string s;
    for (std::size_t j = len(rng); j > 0; --j) s += alphabet[pick(rng)];
    const std::string once = normalize_answer(s);
    CHECK(normalize_answer(once) == once);
  }
}

TEST_CASE("exact match table") {
  for (const auto& r : testing::kEmTable) {
    INFO(r.pred << " | " << r.gold);
    CHECK(em_at_1(r.pred, {r.gold}) == r.expect);
    CHECK(oracle::em(r.pred, {r.gold}) == r.expect);
  }
  CHECK(em_at_1("sofa", {"couch", "coffee table"}) == 0);
  CHECK(em_at_1("couch", {"sofa", "Couch"}) == 1);
  CHECK(code_of([] { em_at_1("x", {}); }) == ErrorCode::EmptyGold);
}

TEST_CASE("BLEU-1, ROUGE-L and CIDEr fixtures") {
  CHECK(bleu1("the the the", {"the cat"}) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(bleu1("coffee table", {"coffee table"}) == 1.0);
  CHECK(bleu1("", {"lamp"}) == 0.0);
  // Short candidate: precision 1, brevity penalty exp(1 - 4/2).
  CHECK(bleu1("brown chair", {"the big brown chair"}) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));

  CHECK(rouge_l("a b c d", {"a c d e"}) == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(rouge_l("coffee table", {"coffee table"}) == doctest::Approx(1.0));
  CHECK(rouge_l("red", {"blue"}) == 0.0);
  CHECK(rouge_l("", {"blue"}) == 0.0);

  // Each prediction equals its own distinct reference: every n-gram order scores 1.
  const std::vector<std::string> preds{"a black couch near the wall", "two chairs by the round table",
                                       "lamp on the small desk today"};
  std::vector<std::vector<std::string>> refs;
  for (const auto& p : preds) refs.push_back({p});
  const auto self = cider(preds, refs);
  for (double s : self.per_instance) CHECK(s == doctest::Approx(10.0).epsilon(1e-9));
  CHECK(self.score == doctest::Approx(10.0).epsilon(1e-9));

  const auto none = cider({"zebra", "a black couch near the wall"}, {{"lamp"}, {"a black couch near the wall"}});
  CHECK(none.per_instance[0] == 0.0);
  CHECK(code_of([] { cider({"x"}, {{"x"}}); }) == ErrorCode::DegenerateCorpus);
  CHECK(code_of([] { cider({"x", "y"}, {{"x"}}); }) == ErrorCode::LengthMismatch);
}

TEST_CASE("20-instance fixture matches the clean-room oracle") {
  std::vector<std::string> preds;
  std::vector<std::vector<std::string>> golds;
  double em = 0, b = 0, r = 0;
  for (const auto& inst : kFixture) {
    preds.push_back(inst.prediction);
    golds.push_back(inst.gold);
    INFO(inst.question_id);
    CHECK(bleu1(inst.prediction, inst.gold) == doctest::Approx(oracle::bleu1(inst.prediction, inst.gold)).epsilon(1e-9));
    CHECK(std::abs(rouge_l(inst.prediction, inst.gold) - oracle::rouge(inst.prediction, inst.gold)) < 1e-6);
    em += oracle::em(inst.prediction, inst.gold);
    b += oracle::bleu1(inst.prediction, inst.gold);
    r += oracle::rouge(inst.prediction, inst.gold);
  }
  const auto expected_cider = oracle::cider(preds, golds);
  const auto got = cider(preds, golds);
  for (std::size_t i = 0; i < preds.size(); ++i) CHECK(std::abs(got.per_instance[i] - expected_cider[i]) < 1e-6);

  const auto report = evaluate(kFixture);
  const double n = double(kFixture.size());
  CHECK(std::abs(report.em_at_1 - em / n) < 1e-6);
  CHECK(std::abs(report.bleu1 - b / n) < 1e-6);
  CHECK(std::abs(report.rouge_l - r / n) < 1e-6);
  double mean_cider = 0;
  for (double c : expected_cider) mean_cider += c / n;
  CHECK(std::abs(report.cider - mean_cider) < 1e-6);
  CHECK(report.n_instances == 20);

  // Order-free and identical under serial execution.
  auto shuffled = kFixture;
  std::mt19937_64 rng(9);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const auto again = evaluate(shuffled, Execution::Serial);
  CHECK(again.em_at_1 == report.em_at_1);
  CHECK(std::abs(again.bleu1 - report.bleu1) < 1e-12);
  CHECK(std::abs(again.rouge_l - report.rouge_l) < 1e-12);
  CHECK(std::abs(again.cider - report.cider) < 1e-12);
}

TEST_CASE("metric properties") {
  for (const auto& inst : kFixture) {
    const double b = bleu1(inst.prediction, inst.gold), r = rouge_l(inst.prediction, inst.gold);
    CHECK(b >= 0.0);
    CHECK(b <= 1.0);
    CHECK(r >= 0.0);
    CHECK(r <= 1.0);
    // Pre-normalized inputs give the same scores.
    std::vector<std::string> norm_gold;
    for (const auto& g : inst.gold) norm_gold.push_back(normalize_answer(g));
    const auto np = normalize_answer(inst.prediction);
    CHECK(bleu1(np, norm_gold) == b);
    CHECK(rouge_l(np, norm_gold) == r);
    CHECK(em_at_1(np, norm_gold) == em_at_1(inst.prediction, inst.gold));
    // Another reference never lowers ROUGE-L.
    auto more = inst.gold;
    more.push_back("something else entirely");
    CHECK(rouge_l(inst.prediction, more) >= r);
  }
}

TEST_CASE("evaluate_run joins files") {
  TempDir dir("cdviews_eval");
  const auto answers = dir.path / "answers.jsonl", gold = dir.path / "gold.jsonl";
  {
    std::ofstream a(answers), g(gold);
    a << R"({"provenance": {"tool": "test"}})" << "\n";
    for (int i = 0; i < 10; ++i) {
      const std::string id = "q" + std::to_string(i);
      a << nlohmann::json{{"question_id", id}, {"answer", i % 2 ? "wrong" : "lamp"}}.dump() << "\n";
      g << nlohmann::json{{"question_id", id}, {"answers", {"lamp"}}}.dump() << "\n";
    }
  }
  const auto half = evaluate_run(answers, gold);
  CHECK(half.em_at_1 == 0.5);
  CHECK(half.n_exact == 5);
  const auto j = half.to_json();
  CHECK(j["cider_x100"].get<double>() == doctest::Approx(100.0 * half.cider));
  CHECK(half.to_table().find("EM@1") != std::string::npos);

  {
    std::ofstream a(answers);
    for (int i = 0; i < 10; ++i)
      a << nlohmann::json{{"question_id", "q" + std::to_string(i)}, {"answer", "Lamp."}}.dump() << "\n";
  }
  const auto all = evaluate_run(answers, gold);
  CHECK(all.em_at_1 == 1.0);
  CHECK(all.bleu1 == 1.0);

  { std::ofstream(answers, std::ios::app) << R"({"question_id": "extra", "answer": "x"})" << "\n"; }
  try {
    evaluate_run(answers, gold);
    FAIL("expected IdMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::IdMismatch);
    CHECK(std::string(e.what()).find("extra") != std::string::npos);
  }
}
