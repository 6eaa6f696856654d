#pragma once

// Lightweight question-conditioned view scorer.
//
// Question and view token sequences share one input projection. The question
// branch runs pre-norm transformer layers (self-attention + GELU feed-forward);
// the visual branch adds a cross-attention block per layer in which view tokens
// attend to the question tokens produced by the question layer at the same
// depth. Both branches are mean-pooled and a view's score is the cosine between
// the pooled question and pooled view vectors.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "cdviews/execution.hpp"

namespace cdviews {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct SelectorConfig {
  std::uint32_t d_in = 64;
  std::uint32_t d_model = 64;
  std::uint32_t n_heads = 4;
  std::uint32_t d_ff = 256;
  std::uint32_t n_layers = 2;
  std::uint32_t seed = 42;

  /// d_in = d_model = 64, 4 heads, d_ff = 256.
  static SelectorConfig desk();
  /// Sized for 3584-wide encoder features with a ~5.9M parameter budget.
  static SelectorConfig paper_scale();

  std::uint32_t head_dim() const { return d_model / n_heads; }
  /// Throws InvalidArgument on zero dims or d_model not divisible by n_heads.
  void validate() const;

  bool operator==(const SelectorConfig&) const = default;
};

struct LayerNormParams {
  Matrix gamma;  // 1 x d
  Matrix beta;   // 1 x d
};

struct LinearParams {
  Matrix weight;  // in x out
  Matrix bias;    // 1 x out
};

/// Multi-head attention. Keys carry no bias: a key bias shifts every logit of a
/// query row equally and cancels in the softmax.
struct AttentionParams {
  LinearParams query;
  Matrix key_weight;
  LinearParams value;
  LinearParams output;
};

struct FeedForwardParams {
  LinearParams up;
  LinearParams down;
};

struct QuestionLayerParams {
  LayerNormParams attn_norm;
  AttentionParams self_attn;
  LayerNormParams ffn_norm;
  FeedForwardParams ffn;
};

struct VisualLayerParams {
  LayerNormParams attn_norm;
  AttentionParams self_attn;
  LayerNormParams cross_norm;
  LayerNormParams memory_norm;
  AttentionParams cross_attn;
  LayerNormParams ffn_norm;
  FeedForwardParams ffn;
};

struct SelectorParams {
  SelectorConfig config;
  LinearParams projection;
  std::vector<QuestionLayerParams> question_layers;
  std::vector<VisualLayerParams> visual_layers;
  Matrix logit_scale;  // 1 x 1, kept positive

  /// Random init from config.seed; LayerNorm gains 1, biases 0, logit_scale 10.
  static SelectorParams initialize(const SelectorConfig& config);
  /// Same shapes, all zeros (gradient accumulator).
  static SelectorParams zeros(const SelectorConfig& config);

  /// Visits every tensor in serialization order.
  void for_each_tensor(const std::function<void(std::string_view, Matrix&)>& fn);
  void for_each_tensor(const std::function<void(std::string_view, const Matrix&)>& fn) const;
};

/// Number of scalar parameters, including norms, biases and logit_scale.
std::size_t param_count(const SelectorParams& params);
/// Closed-form count for a configuration without materializing it.
std::size_t param_count(const SelectorConfig& config);

struct EmbeddingSeq {
  Matrix tokens;  // n_tokens x d_in
  std::string source_id;
};

struct SelectorOutput {
  Vector pooled_question;
  std::vector<Vector> pooled_views;
  std::vector<double> scores;
};

/// Pure forward pass. Throws DimensionMismatch on token width != d_in or empty
/// sequences, NonFiniteActivation on NaN/Inf or a zero-norm pooled vector.
SelectorOutput score_views(const EmbeddingSeq& question, std::span<const EmbeddingSeq> views,
                           const SelectorParams& params, Execution exec = Execution::Parallel);

/// Pooled question vector alone; independent of any view.
Vector encode_question(const Matrix& question_tokens, const SelectorParams& params);

void save_params(const SelectorParams& params, const std::filesystem::path& path);
SelectorParams load_params(const std::filesystem::path& path);

/// Byte image of the params file; save_params writes exactly this.
std::string serialize_params(const SelectorParams& params);
SelectorParams deserialize_params(std::string_view bytes);

}  // namespace cdviews
