#include <doctest.h>

#include <cmath>

#include "cdviews/selector_train.hpp"
#include "test_support.hpp"

using namespace cdviews;

TEST_CASE("gradient check on a small random model") {
  SelectorConfig cfg{.d_in = 12, .d_model = 16, .n_heads = 2, .d_ff = 24, .n_layers = 2, .seed = 3};
  const auto params = testing::perturbed_params(cfg, 5, 0.15);
  const auto data = testing::random_instances(cfg, 2, 4, 11, 4);
  const auto batch = testing::full_batch(data);
  const auto report = gradient_check(params, data, batch, 1e-5);
  MESSAGE("max rel err " << report.max_relative_error << " at " << report.worst_tensor
                         << " over " << report.entries_checked);
  CHECK(report.entries_checked == param_count(params));
  CHECK(report.max_relative_error < 1e-4);
}
