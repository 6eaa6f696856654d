#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cdviews/pose.hpp"
#include "cdviews/selection.hpp"

namespace cdviews {

struct NmsConfig {
  /// Same units as view_distance. 0 disables suppression (plain top-k).
  double threshold = 0.5;
  std::size_t max_views = 9;
  DistanceWeights weights;

  /// Throws InvalidArgument on threshold < 0 or max_views == 0.
  void validate() const;
};

struct PosedView {
  std::string view_id;
  CameraPose pose;
};

/// Indices sorted by score descending, ties by ascending index.
std::vector<std::size_t> rank_by_score(std::span<const double> scores);

/// Greedy pose-aware suppression. A candidate is kept iff its view_distance to
/// every already-kept view is strictly greater than the threshold; stops once
/// max_views are kept. `indices` index into `views`; feed_order is ascending
/// input position.
SelectionResult view_nms(std::span<const PosedView> views, std::span<const double> scores,
                         const NmsConfig& config);

/// Same as above with orientations already converted.
SelectionResult view_nms(std::span<const std::string> view_ids, std::span<const PoseKey> keys,
                         std::span<const double> scores, const NmsConfig& config);

struct SuppressionWitness {
  /// Kept view responsible for the rejection; empty when the budget ran out.
  std::optional<std::string> suppressed_by;
  double distance = 0.0;

  bool budget_exhausted() const noexcept { return !suppressed_by.has_value(); }
};

/// Explains every rejected view of `result`. Throws InconsistentInputs when a
/// rejection cannot be justified, which means `result` did not come from the
/// greedy rule on these inputs.
std::map<std::string, SuppressionWitness> suppression_witness(const SelectionResult& result,
                                                              std::span<const PosedView> views,
                                                              std::span<const double> scores,
                                                              const NmsConfig& config);

}  // namespace cdviews
