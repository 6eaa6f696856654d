#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cdviews/label.hpp"
#include "cdviews/selector.hpp"

namespace cdviews {

/// One question with its candidate views and annotator labels. Uncertain views
/// may be present; they are never sampled into a batch.
struct TrainingInstance {
  std::string question_id;
  Matrix question;
  std::vector<Matrix> views;
  std::vector<Label> labels;
};

struct TrainConfig {
  double learning_rate = 5e-5;
  std::size_t batch_size = 8;  // instances per optimizer step
  std::size_t pos_per_instance = 5;
  std::size_t neg_per_instance = 5;
  std::size_t epochs = 50;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Lower clamp applied to logit_scale after each step.
  double min_logit_scale = 1e-3;
  /// Holdout AUC is computed after every eval_every-th epoch and after the last one.
  std::size_t eval_every = 1;
};

struct TrainStats {
  std::vector<double> epoch_loss;
  std::vector<std::size_t> epoch_labels;
  /// Filled when a holdout set is supplied; holdout_epochs[i] is the 1-based epoch
  /// after which holdout_auc[i] was measured.
  std::vector<double> holdout_auc;
  std::vector<std::size_t> holdout_epochs;
};

/// (instance, view) pair chosen for a step.
struct BatchEntry {
  std::size_t instance = 0;
  std::size_t view = 0;
  Label label = Label::Negative;
};

/// Draws pos_per_instance positives and neg_per_instance negatives from one
/// instance; without replacement when enough exist, with replacement otherwise.
/// A class with no members contributes nothing.
std::vector<BatchEntry> sample_instance_views(const TrainingInstance& instance,
                                              std::size_t instance_index,
                                              const TrainConfig& config, std::mt19937_64& rng);

/// Mean BCE over `batch` of sigmoid(logit_scale * cosine) against the labels.
/// When `grad` is non-null it receives d loss / d params (it is overwritten).
double batch_loss(const SelectorParams& params, std::span<const TrainingInstance> data,
                  std::span<const BatchEntry> batch, SelectorParams* grad);

class AdamOptimizer {
 public:
  AdamOptimizer(const SelectorParams& shape, const TrainConfig& config);
  void step(SelectorParams& params, const SelectorParams& grad);

 private:
  TrainConfig config_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  std::uint64_t t_ = 0;
};

struct TrainResult {
  SelectorParams params;
  TrainStats stats;
};

/// Minibatch Adam over `train`. Deterministic for fixed seeds: the model is
/// initialized from model_config (with seed = init_seed) and batches are drawn
/// from config.seed. Throws NoTrainableLabels if no positive/negative exists.
TrainResult train_selector(std::span<const TrainingInstance> train,
                           std::span<const TrainingInstance> holdout, const TrainConfig& config,
                           SelectorConfig model_config, std::uint32_t init_seed);

/// Scores every trainable view of `data` and returns the ROC AUC.
double holdout_auc(const SelectorParams& params, std::span<const TrainingInstance> data);

/// Mann-Whitney AUC with average ranks for ties. labels: 1 positive, 0 negative.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct GradientCheckReport {
  double max_relative_error = 0.0;
  std::string worst_tensor;
  std::size_t entries_checked = 0;
};

/// Central finite differences against the analytic gradient of batch_loss.
/// Checks up to `samples_per_tensor` entries of every tensor (all entries when
/// 0). Relative error is |ga - gn| / max(|ga|, |gn|, 1e-12).
GradientCheckReport gradient_check(const SelectorParams& params,
                                   std::span<const TrainingInstance> data,
                                   std::span<const BatchEntry> batch, double epsilon,
                                   std::size_t samples_per_tensor = 0, std::uint64_t seed = 0);

/// A probe for gradient_check: initialized parameters with every tensor
/// perturbed by N(0, param_noise^2) and logit_scale set to 2.5, so no gradient is
/// structurally zero, plus random unit-variance tokens with alternating labels.
struct GradientCheckProblem {
  SelectorParams params;
  std::vector<TrainingInstance> data;
  std::vector<BatchEntry> batch;  // every view of every instance
};

GradientCheckProblem gradient_check_problem(const SelectorConfig& config, std::uint64_t seed,
                                            std::size_t n_instances = 2, std::size_t n_views = 4,
                                            std::size_t tokens = 4, double param_noise = 0.15);

}  // namespace cdviews
