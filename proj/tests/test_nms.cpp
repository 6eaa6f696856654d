#include <doctest.h>

#include <random>

#include "cdviews/error.hpp"
#include "cdviews/nms.hpp"
#include "test_support.hpp"

using namespace cdviews;
using namespace cdviews::testing;

namespace {

std::vector<PosedView> same_pose(std::size_t n) {
  std::vector<PosedView> v;
  for (std::size_t i = 0; i < n; ++i) v.push_back({"v" + std::to_string(i), CameraPose{}});
  return v;
}

NmsConfig cfg(double t, std::size_t k) {
  NmsConfig c;
  c.threshold = t;
  c.max_views = k;
  return c;
}

}  // namespace

TEST_CASE("identical poses collapse to the best view") {
  const auto views = same_pose(5);
  const std::vector<double> scores{0.1, 0.9, 0.3, 0.5, 0.2};
  const auto r = view_nms(views, scores, cfg(0.5, 9));
  REQUIRE(r.view_ids == std::vector<std::string>{"v1"});
  const auto w = suppression_witness(r, views, scores, cfg(0.5, 9));
  CHECK(w.size() == 4);
  for (const auto& [id, wit] : w) {
    CHECK(wit.suppressed_by == std::optional<std::string>("v1"));
    CHECK(wit.distance == 0.0);
  }
}

TEST_CASE("T = 0 is plain top-k and witnesses only the budget") {
  const auto views = same_pose(6);
  const std::vector<double> scores{0.4, 0.9, 0.4, 0.7, 0.1, 0.8};
  const auto r = view_nms(views, scores, cfg(0.0, 3));
  CHECK(r.view_ids == std::vector<std::string>{"v1", "v5", "v3"});
  CHECK(r.feed_order == std::vector<std::string>{"v1", "v3", "v5"});
  CHECK(r.indices == std::vector<std::size_t>{1, 5, 3});
  REQUIRE(r.scores);
  CHECK(*r.scores == std::vector<double>{0.9, 0.8, 0.7});
  for (const auto& [id, wit] : suppression_witness(r, views, scores, cfg(0.0, 3))) {
    CHECK(wit.budget_exhausted());
  }
}

TEST_CASE("ties go to the lower index") {
  const auto views = same_pose(4);
  const std::vector<double> scores{0.5, 0.5, 0.5, 0.5};
  CHECK(view_nms(views, scores, cfg(0.0, 2)).view_ids == std::vector<std::string>{"v0", "v1"});
  CHECK(rank_by_score(scores) == std::vector<std::size_t>{0, 1, 2, 3});
}

TEST_CASE("boundary distance is suppressed") {
  std::vector<PosedView> views = same_pose(2);
  views[1].pose.position = Vec3(0.5, 0, 0);
  const std::vector<double> scores{1.0, 0.5};
  CHECK(view_nms(views, scores, cfg(0.5, 9)).view_ids.size() == 1);
  CHECK(view_nms(views, scores, cfg(0.49, 9)).view_ids.size() == 2);
}

TEST_CASE("input errors") {
  const auto views = same_pose(3);
  const std::vector<double> two{1.0, 2.0};
  CHECK_THROWS_AS(view_nms(views, two, cfg(0.5, 1)), Error);
  try {
    view_nms(std::span<const PosedView>{}, std::span<const double>{}, cfg(0.5, 1));
    FAIL("expected EmptyInput");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyInput);
  }
  CHECK_THROWS_AS(cfg(-1.0, 1).validate(), Error);
  CHECK_THROWS_AS(cfg(0.5, 0).validate(), Error);
}

TEST_CASE("matches the brute-force greedy oracle on random instances") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<std::size_t> kdist(1, 12);
  const double thresholds[] = {0.0, 0.25, 0.5, 0.75, 1.0};
  for (int trial = 0; trial < 1000; ++trial) {
    const auto inst = random_nms_instance(rng);
    const std::size_t k = kdist(rng);
    const double t = thresholds[trial % 5];
    const auto r = view_nms(inst.views, inst.scores, cfg(t, k));
    const auto expected = oracle_greedy(inst.poses, inst.scores, t, k);
    REQUIRE(r.indices == expected);
    // Size bound, pairwise separation, witness soundness.
    REQUIRE(r.view_ids.size() <= std::min(k, inst.views.size()));
    if (t > 0) {
      for (std::size_t a = 0; a < r.indices.size(); ++a)
        for (std::size_t b = a + 1; b < r.indices.size(); ++b)
          REQUIRE(oracle_distance(inst.poses[r.indices[a]], inst.poses[r.indices[b]]) > t);
    }
    const auto w = suppression_witness(r, inst.views, inst.scores, cfg(t, k));
    REQUIRE(w.size() == inst.views.size() - r.view_ids.size());
    for (const auto& [id, wit] : w) {
      if (wit.budget_exhausted()) continue;
      const auto rejected = std::stoul(id.substr(1));
      const auto keeper = std::stoul(wit.suppressed_by->substr(1));
      REQUIRE(inst.scores[keeper] >= inst.scores[rejected]);
      REQUIRE(oracle_distance(inst.poses[keeper], inst.poses[rejected]) <= t + 1e-9);
    }
  }
}

TEST_CASE("selection size is non-increasing in T and deterministic") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 300; ++trial) {
    const auto inst = random_nms_instance(rng);
    std::size_t previous = inst.views.size() + 1;
    for (double t : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      const auto r = view_nms(inst.views, inst.scores, cfg(t, inst.views.size()));
      CHECK(r.view_ids.size() <= previous);
      previous = r.view_ids.size();
      CHECK(view_nms(inst.views, inst.scores, cfg(t, inst.views.size())).indices == r.indices);
    }
  }
}

TEST_CASE("witness rejects a result that did not come from the greedy rule") {
  const auto views = same_pose(3);
  const std::vector<double> scores{0.9, 0.5, 0.1};
  auto r = view_nms(views, scores, cfg(0.5, 3));
  r.view_ids = {"v2"};
  r.indices = {2};
  r.feed_order = {"v2"};
  r.scores = std::vector<double>{0.1};
  CHECK_THROWS_AS(suppression_witness(r, views, scores, cfg(0.5, 3)), Error);
}
