#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "cdviews/error.hpp"
#include "cdviews/strategies.hpp"
#include "test_support.hpp"

using namespace cdviews;

namespace {

SceneManifest line_of_views(std::size_t n, double spacing = 1.0) {
  SceneManifest m;
  m.scene_id = "line";
  for (std::size_t i = 0; i < n; ++i) {
    ViewRecord v;
    v.view_id = "v" + std::to_string(i);
    v.frame_index = static_cast<std::int64_t>(10 * i);
    v.pose.position = Vec3(spacing * static_cast<double>(i), 0, 0);
    m.views.push_back(v);
  }
  return m;
}

void check_well_formed(const SelectionResult& r, const SceneManifest& m, std::size_t k) {
  CHECK(r.view_ids.size() <= k);
  CHECK(r.indices.size() == r.view_ids.size());
  std::set<std::string> ids(r.view_ids.begin(), r.view_ids.end());
  CHECK(ids.size() == r.view_ids.size());
  for (std::size_t i = 0; i < r.view_ids.size(); ++i) CHECK(m.views[r.indices[i]].view_id == r.view_ids[i]);
  std::vector<std::string> sorted;
  for (const auto& v : m.views)
    if (ids.count(v.view_id)) sorted.push_back(v.view_id);
  CHECK(r.feed_order == sorted);
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::InvalidArgument;
}

std::vector<EmbeddingSeq> random_views(std::size_t n, std::uint32_t d_in, std::mt19937_64& rng) {
  std::vector<EmbeddingSeq> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({testing::random_matrix(3, d_in, rng), "v" + std::to_string(i)});
  return out;
}

SelectorConfig small_config() {
  SelectorConfig c;
  c.d_in = 8;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ff = 16;
  c.n_layers = 1;
  return c;
}

}  // namespace

TEST_CASE("uniform sampling") {
  const auto m = line_of_views(20);
  const auto all = select_uniform(m, 20, 3);
  check_well_formed(all, m, 20);
  CHECK(all.view_ids.size() == 20);
  CHECK(!all.scores);
  CHECK(select_uniform(m, 5, 9).view_ids == select_uniform(m, 5, 9).view_ids);
  CHECK(code_of([&] { select_uniform(m, 21, 1); }) == ErrorCode::KTooLarge);
  CHECK_THROWS_AS(select_uniform(m, 0, 1), Error);
  CHECK(question_seed(1, "q1") == question_seed(1, "q1"));
  CHECK(question_seed(1, "q1") != question_seed(1, "q2"));
  CHECK(question_seed(1, "q1") != question_seed(2, "q1"));

  // Each view should be drawn with probability k/N = 0.25.
  const int trials = 10000;
  std::vector<int> hits(20, 0);
  for (int s = 0; s < trials; ++s) {
    const auto r = select_uniform(m, 5, static_cast<std::uint64_t>(s));
    REQUIRE(r.view_ids.size() == 5);
    for (std::size_t i : r.indices) ++hits[i];
  }
  const double sigma = std::sqrt(trials * 0.25 * 0.75);
  for (int h : hits) CHECK(std::abs(h - trials * 0.25) < 3.0 * sigma);
}

TEST_CASE("evenly spaced") {
  const auto m = line_of_views(10);
  const auto r = select_evenly_spaced(m, 4);
  CHECK(r.indices == std::vector<std::size_t>{0, 2, 5, 7});
  check_well_formed(r, m, 4);
  CHECK(select_evenly_spaced(m, 10).indices.size() == 10);
}

TEST_CASE("retrieval is a sort by score with frame-order ties") {
  const auto m = line_of_views(6);
  ScoreTable s{{"v0", 0.1}, {"v1", 0.9}, {"v2", 0.5}, {"v3", 0.9}, {"v4", -1.0}, {"v5", 0.5}};
  const auto r = select_retrieval(m, 4, s);
  CHECK(r.view_ids == std::vector<std::string>{"v1", "v3", "v2", "v5"});
  CHECK(*r.scores == std::vector<double>{0.9, 0.9, 0.5, 0.5});
  CHECK(r.feed_order == std::vector<std::string>{"v1", "v2", "v3", "v5"});

  ScoreTable partial = s;
  partial.erase("v4");
  try {
    select_retrieval(m, 2, partial);
    FAIL("expected MissingScore");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingScore);
    CHECK(std::string(e.what()).find("v4") != std::string::npos);
  }

  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> grid(0, 5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto mm = line_of_views(15);
    ScoreTable t;
    std::vector<std::pair<double, std::size_t>> oracle;
    for (std::size_t i = 0; i < 15; ++i) {
      const double v = grid(rng) * 0.2;
      t["v" + std::to_string(i)] = v;
      oracle.emplace_back(-v, i);
    }
    std::sort(oracle.begin(), oracle.end());
    const auto res = select_retrieval(mm, 7, t);
    check_well_formed(res, mm, 7);
    for (std::size_t j = 0; j < 7; ++j) CHECK(res.indices[j] == oracle[j].second);
  }
}

TEST_CASE("retrieval scores from JSONL") {
  const auto path = std::filesystem::temp_directory_path() / "cdviews_scores.jsonl";
  {
    std::ofstream f(path);
    f << R"({"scene_id":"a","question_id":"q","view_id":"v0","score":0.5})" << "\n"
      << R"({"scene_id":"a","question_id":"q","view_id":"v1","score":0.25})" << "\n";
  }
  const auto scores = load_retrieval_scores(path);
  const auto& t = scores.at({"a", "q"});
  CHECK(t.at("v0") == 0.5);
  CHECK(t.at("v1") == 0.25);
  std::filesystem::remove(path);
}

TEST_CASE("cdviews selection") {
  std::mt19937_64 rng(4);
  const auto params = SelectorParams::initialize(small_config());
  const Matrix question = testing::random_matrix(5, 8, rng);

  // All views at one pose: suppression keeps exactly one.
  SceneManifest same = line_of_views(12, 0.0);
  const auto views = random_views(12, 8, rng);
  NmsConfig nms;
  const auto one = select_cdviews(same, question, views, params, nms, 9);
  CHECK(one.view_ids.size() == 1);

  // The best-scoring view always leads; T = 0 is the top 9 by score.
  const auto m = line_of_views(12, 0.1);
  const auto out = score_views(EmbeddingSeq{question, {}}, views, params);
  const auto ranked = rank_by_score(out.scores);
  NmsConfig off = nms;
  off.threshold = 0.0;
  const auto top = select_cdviews(m, question, views, params, off, 9);
  check_well_formed(top, m, 9);
  CHECK(top.indices == std::vector<std::size_t>(ranked.begin(), ranked.begin() + 9));
  CHECK(*top.scores == std::vector<double>{out.scores[ranked[0]], out.scores[ranked[1]], out.scores[ranked[2]],
                                           out.scores[ranked[3]], out.scores[ranked[4]], out.scores[ranked[5]],
                                           out.scores[ranked[6]], out.scores[ranked[7]], out.scores[ranked[8]]});
  const auto spread = select_cdviews(m, question, views, params, nms, 9);
  CHECK(spread.indices.front() == ranked.front());
  check_well_formed(spread, m, 9);
  // Views 0.1 apart under T = 0.5 must be more than 5 positions apart.
  for (std::size_t a : spread.indices)
    for (std::size_t b : spread.indices)
      if (a != b) CHECK((a > b ? a - b : b - a) > 5);

  CHECK_THROWS_AS(select_cdviews(m, question, views, params, nms, 5), Error);
  const std::vector<EmbeddingSeq> short_views(views.begin(), views.begin() + 3);
  CHECK_THROWS_AS(select_cdviews(m, question, short_views, params, nms, 9), Error);
  CHECK(select_cdviews(m, question, views, params, nms, 9, Execution::Serial).view_ids == spread.view_ids);
}

TEST_CASE("selection JSON round trip") {
  const auto m = line_of_views(8);
  const auto r = select_retrieval(m, 3, {{"v0", 1}, {"v1", 2}, {"v2", 3}, {"v3", 4}, {"v4", 0}, {"v5", 0}, {"v6", 0}, {"v7", 0}});
  const auto doc = selection_to_json(r, "line", "q7");
  CHECK(doc["scene_id"] == "line");
  CHECK(doc["question_id"] == "q7");
  const auto back = selection_from_json(doc);
  CHECK(back.strategy == Strategy::Retrieval);
  CHECK(back.view_ids == r.view_ids);
  CHECK(back.feed_order == r.feed_order);
  CHECK(back.scores == r.scores);
  CHECK(selection_to_json(select_uniform(m, 2, 1), "line", "q")["scores"].is_null());

  auto bad = doc;
  bad["feed_order"] = {"v0"};
  CHECK(code_of([&] { selection_from_json(bad); }) == ErrorCode::SchemaError);
  CHECK(code_of([&] { strategy_from_string("random"); }) == ErrorCode::ConfigError);
  for (auto s : {Strategy::Uniform, Strategy::EvenlySpaced, Strategy::Retrieval, Strategy::CdViews})
    CHECK(strategy_from_string(to_string(s)) == s);
}
