#include "cdviews/nms.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "cdviews/error.hpp"

namespace cdviews {

std::string_view to_string(Strategy s) noexcept {
  switch (s) {
    case Strategy::Uniform: return "uniform";
    case Strategy::EvenlySpaced: return "evenly_spaced";
    case Strategy::Retrieval: return "retrieval";
    case Strategy::CdViews: return "cdviews";
  }
  return "unknown";
}

Strategy strategy_from_string(std::string_view name) {
  if (name == "uniform") return Strategy::Uniform;
  if (name == "evenly_spaced") return Strategy::EvenlySpaced;
  if (name == "retrieval") return Strategy::Retrieval;
  if (name == "cdviews") return Strategy::CdViews;
  throw Error(ErrorCode::ConfigError, "unknown strategy '" + std::string(name) + "'");
}

void NmsConfig::validate() const {
  if (!(threshold >= 0.0) || !std::isfinite(threshold)) {
    throw Error(ErrorCode::InvalidArgument, "NMS threshold must be finite and >= 0");
  }
  if (max_views == 0) throw Error(ErrorCode::InvalidArgument, "max_views must be >= 1");
}

std::vector<std::size_t> rank_by_score(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

namespace {

void check_inputs(std::size_t n_views, std::span<const double> scores) {
  if (n_views != scores.size()) {
    throw Error(ErrorCode::LengthMismatch, std::to_string(n_views) + " views vs " +
                                               std::to_string(scores.size()) + " scores");
  }
  if (n_views == 0) throw Error(ErrorCode::EmptyInput, "no views to select from");
  for (double s : scores) {
    if (!std::isfinite(s)) throw Error(ErrorCode::InvalidArgument, "non-finite score");
  }
}

SelectionResult finish(Strategy strategy, std::span<const std::string> ids,
                       std::span<const double> scores, std::vector<std::size_t> kept) {
  SelectionResult result;
  result.strategy = strategy;
  std::vector<double> kept_scores;
  for (std::size_t i : kept) {
    result.view_ids.push_back(ids[i]);
    kept_scores.push_back(scores[i]);
  }
  result.indices = kept;
  result.scores = std::move(kept_scores);
  std::sort(kept.begin(), kept.end());
  for (std::size_t i : kept) result.feed_order.push_back(ids[i]);
  return result;
}

}  // namespace

SelectionResult view_nms(std::span<const std::string> view_ids, std::span<const PoseKey> keys,
                         std::span<const double> scores, const NmsConfig& config) {
  config.validate();
  check_inputs(view_ids.size(), scores);
  if (keys.size() != view_ids.size()) {
    throw Error(ErrorCode::LengthMismatch, "pose count differs from view count");
  }

  const auto order = rank_by_score(scores);
  std::vector<std::size_t> kept;
  kept.reserve(std::min(config.max_views, order.size()));

  if (config.threshold == 0.0) {
    for (std::size_t i = 0; i < order.size() && kept.size() < config.max_views; ++i) {
      kept.push_back(order[i]);
    }
    return finish(Strategy::CdViews, view_ids, scores, std::move(kept));
  }

  for (std::size_t candidate : order) {
    if (kept.size() == config.max_views) break;
    const bool diverse = std::all_of(kept.begin(), kept.end(), [&](std::size_t j) {
      return view_distance(keys[candidate], keys[j], config.weights) > config.threshold;
    });
    if (diverse) kept.push_back(candidate);
  }
  return finish(Strategy::CdViews, view_ids, scores, std::move(kept));
}

SelectionResult view_nms(std::span<const PosedView> views, std::span<const double> scores,
                         const NmsConfig& config) {
  std::vector<std::string> ids;
  std::vector<PoseKey> keys;
  ids.reserve(views.size());
  keys.reserve(views.size());
  for (const auto& v : views) {
    ids.push_back(v.view_id);
    keys.push_back(PoseKey::from_pose(v.pose));
  }
  return view_nms(ids, keys, scores, config);
}

std::map<std::string, SuppressionWitness> suppression_witness(const SelectionResult& result,
                                                              std::span<const PosedView> views,
                                                              std::span<const double> scores,
                                                              const NmsConfig& config) {
  config.validate();
  check_inputs(views.size(), scores);

  std::vector<PoseKey> keys;
  keys.reserve(views.size());
  for (const auto& v : views) keys.push_back(PoseKey::from_pose(v.pose));

  std::set<std::size_t> kept(result.indices.begin(), result.indices.end());
  if (kept.size() != result.indices.size() || result.indices.size() != result.view_ids.size()) {
    throw Error(ErrorCode::InconsistentInputs, "selection has duplicate or misaligned entries");
  }
  for (std::size_t i = 0; i < result.indices.size(); ++i) {
    const std::size_t idx = result.indices[i];
    if (idx >= views.size() || views[idx].view_id != result.view_ids[i]) {
      throw Error(ErrorCode::InconsistentInputs, "selected view not found in inputs");
    }
  }

  const auto order = rank_by_score(scores);
  // Rank position at which the budget was filled; candidates after it were never examined.
  std::size_t budget_rank = order.size();
  if (kept.size() == config.max_views) {
    std::size_t seen = 0;
    for (std::size_t r = 0; r < order.size(); ++r) {
      if (kept.count(order[r]) && ++seen == config.max_views) {
        budget_rank = r;
        break;
      }
    }
  }

  std::map<std::string, SuppressionWitness> witnesses;
  std::vector<std::size_t> kept_so_far;
  for (std::size_t r = 0; r < order.size(); ++r) {
    const std::size_t idx = order[r];
    if (kept.count(idx)) {
      kept_so_far.push_back(idx);
      continue;
    }
    if (r > budget_rank || config.threshold == 0.0) {
      if (r < budget_rank && config.threshold == 0.0) {
        throw Error(ErrorCode::InconsistentInputs,
                    "top-k bypass skipped view '" + views[idx].view_id + "'");
      }
      witnesses[views[idx].view_id] = SuppressionWitness{};
      continue;
    }
    bool found = false;
    for (std::size_t j : kept_so_far) {
      const double d = view_distance(keys[idx], keys[j], config.weights);
      if (d <= config.threshold) {
        witnesses[views[idx].view_id] = SuppressionWitness{views[j].view_id, d};
        found = true;
        break;
      }
    }
    if (!found) {
      throw Error(ErrorCode::InconsistentInputs,
                  "view '" + views[idx].view_id + "' was rejected but no kept view is within T");
    }
  }
  return witnesses;
}

}  // namespace cdviews
