#include "cdviews/selector_train.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "cdviews/error.hpp"
#include "selector_internal.hpp"

namespace cdviews {

namespace {

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }
double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

std::vector<std::size_t> indices_with(const TrainingInstance& inst, Label label) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < inst.labels.size(); ++i) {
    if (inst.labels[i] == label) out.push_back(i);
  }
  return out;
}

void draw(const std::vector<std::size_t>& pool, std::size_t count, std::size_t instance_index,
          Label label, std::mt19937_64& rng, std::vector<BatchEntry>& out) {
  if (pool.empty() || count == 0) return;
  if (pool.size() >= count) {
    // Partial Fisher-Yates.
    std::vector<std::size_t> shuffled = pool;
    for (std::size_t i = 0; i < count; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, shuffled.size() - 1);
      std::swap(shuffled[i], shuffled[pick(rng)]);
      out.push_back({instance_index, shuffled[i], label});
    }
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    for (std::size_t i = 0; i < count; ++i) out.push_back({instance_index, pool[pick(rng)], label});
  }
}

}  // namespace

std::vector<BatchEntry> sample_instance_views(const TrainingInstance& instance,
                                              std::size_t instance_index,
                                              const TrainConfig& config, std::mt19937_64& rng) {
  if (instance.labels.size() != instance.views.size()) {
    throw Error(ErrorCode::LengthMismatch, "instance '" + instance.question_id +
                                               "' has mismatched views and labels");
  }
  std::vector<BatchEntry> out;
  draw(indices_with(instance, Label::Positive), config.pos_per_instance, instance_index,
       Label::Positive, rng, out);
  draw(indices_with(instance, Label::Negative), config.neg_per_instance, instance_index,
       Label::Negative, rng, out);
  return out;
}

double batch_loss(const SelectorParams& params, std::span<const TrainingInstance> data,
                  std::span<const BatchEntry> batch, SelectorParams* grad) {
  if (batch.empty()) throw Error(ErrorCode::NoTrainableLabels, "empty batch");
  if (grad) *grad = SelectorParams::zeros(params.config);

  std::map<std::size_t, std::vector<const BatchEntry*>> by_instance;
  for (const auto& e : batch) {
    if (!is_trainable(e.label)) {
      throw Error(ErrorCode::InvalidArgument, "uncertain label in a training batch");
    }
    by_instance[e.instance].push_back(&e);
  }

  const double n_labels = static_cast<double>(batch.size());
  const double scale = params.logit_scale(0, 0);
  const bool need_grad = grad != nullptr;
  double total = 0.0;

  for (const auto& [instance_index, entries] : by_instance) {
    const auto& inst = data[instance_index];
    detail::check_tokens(inst.question, params.config.d_in, "question");
    const auto q = detail::question_forward(params, inst.question, need_grad);
    Vector d_question = Vector::Zero(q.pooled.size());
    auto d_memory = detail::zero_memory_grads(q);

    std::vector<const Matrix*> tokens;
    for (const BatchEntry* e : entries) {
      tokens.push_back(&inst.views.at(e->view));
      detail::check_tokens(*tokens.back(), params.config.d_in, "view");
    }
    const auto v = detail::view_forward(params, q, tokens, need_grad);
    Matrix d_pooled = Matrix::Zero(v.pooled.rows(), v.pooled.cols());
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      const Vector pooled = v.pooled.row(row).transpose();
      const double s = detail::cosine(q.pooled, pooled);
      const double z = scale * s;
      const double y = entries[i]->label == Label::Positive ? 1.0 : 0.0;
      total += softplus(z) - y * z;
      if (!need_grad) continue;

      const double dz = (sigmoid(z) - y) / n_labels;
      grad->logit_scale(0, 0) += dz * s;
      const double ds = dz * scale;
      auto [dq, dv] = detail::cosine_backward(q.pooled, pooled);
      d_question += ds * dq;
      d_pooled.row(row) = ds * dv.transpose();
    }
    if (need_grad) detail::view_backward(params, q, v, d_pooled, *grad, d_memory);
    if (need_grad) detail::question_backward(params, q, d_question, d_memory, *grad);
  }
  const double loss = total / n_labels;
  if (!std::isfinite(loss)) throw Error(ErrorCode::NonFiniteActivation, "loss is not finite");
  return loss;
}

AdamOptimizer::AdamOptimizer(const SelectorParams& shape, const TrainConfig& config)
    : config_(config) {
  shape.for_each_tensor([&](std::string_view, const Matrix& m) {
    m_.push_back(Matrix::Zero(m.rows(), m.cols()));
    v_.push_back(Matrix::Zero(m.rows(), m.cols()));
  });
}

void AdamOptimizer::step(SelectorParams& params, const SelectorParams& grad) {
  ++t_;
  std::vector<const Matrix*> g;
  grad.for_each_tensor([&](std::string_view, const Matrix& m) { g.push_back(&m); });
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  std::size_t i = 0;
  params.for_each_tensor([&](std::string_view, Matrix& w) {
    Matrix& m = m_[i];
    Matrix& v = v_[i];
    const Matrix& gi = *g[i];
    m = config_.beta1 * m + (1.0 - config_.beta1) * gi;
    v = config_.beta2 * v + (1.0 - config_.beta2) * gi.cwiseProduct(gi);
    w.array() -= config_.learning_rate * (m.array() / c1) /
                 ((v.array() / c2).sqrt() + config_.adam_eps);
    ++i;
  });
  params.logit_scale(0, 0) = std::max(params.logit_scale(0, 0), config_.min_logit_scale);
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw Error(ErrorCode::LengthMismatch, "scores vs labels");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        rank_sum += avg_rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw Error(ErrorCode::InvalidArgument, "AUC needs both positive and negative examples");
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double holdout_auc(const SelectorParams& params, std::span<const TrainingInstance> data) {
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& inst : data) {
    std::vector<EmbeddingSeq> views;
    std::vector<int> y;
    for (std::size_t i = 0; i < inst.views.size(); ++i) {
      if (!is_trainable(inst.labels[i])) continue;
      views.push_back({inst.views[i], {}});
      y.push_back(inst.labels[i] == Label::Positive ? 1 : 0);
    }
    if (views.empty()) continue;
    const auto out = score_views({inst.question, inst.question_id}, views, params);
    scores.insert(scores.end(), out.scores.begin(), out.scores.end());
    labels.insert(labels.end(), y.begin(), y.end());
  }
  return roc_auc(scores, labels);
}

TrainResult train_selector(std::span<const TrainingInstance> train,
                           std::span<const TrainingInstance> holdout, const TrainConfig& config,
                           SelectorConfig model_config, std::uint32_t init_seed) {
  if (config.batch_size == 0 || config.learning_rate <= 0.0) {
    throw Error(ErrorCode::InvalidArgument, "batch_size and learning_rate must be positive");
  }
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto& labels = train[i].labels;
    if (std::any_of(labels.begin(), labels.end(), [](Label l) { return is_trainable(l); })) {
      usable.push_back(i);
    }
  }
  if (usable.empty()) throw Error(ErrorCode::NoTrainableLabels, "every label is uncertain");

  model_config.seed = init_seed;
  TrainResult result{SelectorParams::initialize(model_config), {}};
  AdamOptimizer adam(result.params, config);
  std::mt19937_64 rng(config.seed);
  SelectorParams grad = SelectorParams::zeros(model_config);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order = usable;
    std::shuffle(order.begin(), order.end(), rng);
    double weighted_loss = 0.0;
    std::size_t labels_seen = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<BatchEntry> batch;
      for (std::size_t b = start; b < end; ++b) {
        auto drawn = sample_instance_views(train[order[b]], order[b], config, rng);
        batch.insert(batch.end(), drawn.begin(), drawn.end());
      }
      if (batch.empty()) continue;
      const double loss = batch_loss(result.params, train, batch, &grad);
      adam.step(result.params, grad);
      weighted_loss += loss * static_cast<double>(batch.size());
      labels_seen += batch.size();
    }
    result.stats.epoch_loss.push_back(labels_seen ? weighted_loss / labels_seen : 0.0);
    result.stats.epoch_labels.push_back(labels_seen);
    const bool due = (epoch + 1) % std::max<std::size_t>(config.eval_every, 1) == 0 ||
                     epoch + 1 == config.epochs;
    if (!holdout.empty() && due) {
      result.stats.holdout_auc.push_back(holdout_auc(result.params, holdout));
      result.stats.holdout_epochs.push_back(epoch + 1);
    }
  }
  return result;
}

GradientCheckReport gradient_check(const SelectorParams& params,
                                   std::span<const TrainingInstance> data,
                                   std::span<const BatchEntry> batch, double epsilon,
                                   std::size_t samples_per_tensor, std::uint64_t seed) {
  if (!(epsilon >= 1e-7 && epsilon <= 1e-3)) {
    throw Error(ErrorCode::InvalidArgument, "epsilon must lie in [1e-7, 1e-3]");
  }
  SelectorParams analytic = SelectorParams::zeros(params.config);
  batch_loss(params, data, batch, &analytic);
  std::vector<const Matrix*> grads;
  analytic.for_each_tensor([&](std::string_view, const Matrix& m) { grads.push_back(&m); });

  SelectorParams probe = params;
  std::vector<std::pair<std::string, Matrix*>> tensors;
  probe.for_each_tensor([&](std::string_view name, Matrix& m) { tensors.emplace_back(name, &m); });

  GradientCheckReport report;
  std::mt19937_64 rng(seed);
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    Matrix& m = *tensors[t].second;
    std::vector<Eigen::Index> entries(static_cast<std::size_t>(m.size()));
    std::iota(entries.begin(), entries.end(), Eigen::Index{0});
    if (samples_per_tensor != 0 && entries.size() > samples_per_tensor) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(samples_per_tensor);
    }
    for (Eigen::Index e : entries) {
      double& w = m.data()[e];
      const double saved = w;
      w = saved + epsilon;
      const double plus = batch_loss(probe, data, batch, nullptr);
      w = saved - epsilon;
      const double minus = batch_loss(probe, data, batch, nullptr);
      w = saved;
      const double numeric = (plus - minus) / (2.0 * epsilon);
      const double exact = grads[t]->data()[e];
      const double rel = std::abs(exact - numeric) /
                         std::max({std::abs(exact), std::abs(numeric), 1e-12});
      if (rel > report.max_relative_error || report.worst_tensor.empty()) {
        report.max_relative_error = rel;
        report.worst_tensor = tensors[t].first;
      }
      ++report.entries_checked;
    }
  }
  return report;
}

GradientCheckProblem gradient_check_problem(const SelectorConfig& config, std::uint64_t seed,
                                            std::size_t n_instances, std::size_t n_views,
                                            std::size_t tokens, double param_noise) {
  std::mt19937_64 rng(seed);
  auto gaussian = [&](Eigen::Index rows, Eigen::Index cols, double sd) {
    std::normal_distribution<double> normal(0.0, sd);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    return m;
  };
  GradientCheckProblem p{SelectorParams::initialize(config), {}, {}};
  p.params.for_each_tensor([&](std::string_view, Matrix& m) { m += gaussian(m.rows(), m.cols(), param_noise); });
  p.params.logit_scale(0, 0) = 2.5;
  const auto n_tok = static_cast<Eigen::Index>(tokens);
  for (std::size_t i = 0; i < n_instances; ++i) {
    TrainingInstance inst;
    inst.question_id = "q" + std::to_string(i);
    inst.question = gaussian(n_tok, config.d_in, 1.0);
    for (std::size_t v = 0; v < n_views; ++v) {
      inst.views.push_back(gaussian(n_tok, config.d_in, 1.0));
      inst.labels.push_back(v % 2 == 0 ? Label::Positive : Label::Negative);
      p.batch.push_back({i, v, inst.labels.back()});
    }
    p.data.push_back(std::move(inst));
  }
  return p;
}

}  // namespace cdviews
