#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cdviews {

enum class Strategy { Uniform, EvenlySpaced, Retrieval, CdViews };

std::string_view to_string(Strategy s) noexcept;
/// Throws ConfigError for unknown names.
Strategy strategy_from_string(std::string_view name);

/// Ordered views picked for one question.
struct SelectionResult {
  Strategy strategy = Strategy::CdViews;
  /// In selection order (highest score first for scored strategies).
  std::vector<std::string> view_ids;
  /// Positions of the chosen views in the scene's view list, parallel to view_ids.
  std::vector<std::size_t> indices;
  /// Per-view scores parallel to view_ids; absent for uniform sampling.
  std::optional<std::vector<double>> scores;
  /// view_ids sorted ascending by frame index; the order handed to the LVLM.
  std::vector<std::string> feed_order;
};

}  // namespace cdviews
