#pragma once

// Forward caches and hand-derived backward passes for the selector. Shared by
// inference, training and the gradient check.

#include <span>
#include <vector>

#include "cdviews/selector.hpp"

namespace cdviews::detail {

inline constexpr double kLayerNormEps = 1e-5;

struct LayerNormCache {
  Matrix xhat;
  Vector inv_std;
};

/// Projected keys and values of a key/value source.
struct KeyValue {
  Matrix x;
  Matrix k, v;
};

struct KeyValueGrad {
  Matrix dk, dv;
};

struct AttentionCache {
  Matrix xq;
  Matrix q;
  std::vector<Matrix> probs;  // per head, nq x nk
  Matrix context;             // nq x d, heads concatenated
  KeyValue self_kv;           // self-attention only
};

struct FeedForwardCache {
  Matrix x;
  Matrix pre;  // before GELU
  Matrix act;  // after GELU
};

struct QuestionLayerCache {
  LayerNormCache attn_norm;
  AttentionCache self_attn;
  LayerNormCache ffn_norm;
  FeedForwardCache ffn;
};

struct VisualLayerCache {
  LayerNormCache attn_norm;
  AttentionCache self_attn;
  LayerNormCache cross_norm;
  AttentionCache cross_attn;
  LayerNormCache ffn_norm;
  FeedForwardCache ffn;
};

/// Question branch activations. hidden[l] is the input of layer l; hidden.back()
/// is the final sequence, and hidden[l + 1] is the memory for visual layer l.
struct QuestionTrace {
  Matrix input;
  std::vector<Matrix> hidden;
  std::vector<QuestionLayerCache> layers;
  Vector pooled;
  /// Per visual layer: normalized memory and its cross-attention keys/values,
  /// shared by every view scored against this question.
  std::vector<LayerNormCache> memory_norm;
  std::vector<KeyValue> memory;
};

/// Row boundaries of sequences stacked into one matrix: sequence i occupies
/// rows [bounds[i], bounds[i + 1]). An empty span means a single sequence.
using Segments = std::span<const Eigen::Index>;

/// Activations of several views stacked row-wise. pooled has one row per view.
struct ViewTrace {
  Matrix input;
  std::vector<Eigen::Index> bounds;
  std::vector<VisualLayerCache> layers;
  Matrix final_hidden;
  Matrix pooled;
};

Matrix layer_norm_forward(const LayerNormParams& p, const Matrix& x, LayerNormCache* cache);
Matrix layer_norm_backward(const LayerNormParams& p, const LayerNormCache& cache, const Matrix& dy,
                           LayerNormParams& grad);

KeyValue project_key_value(const AttentionParams& p, const Matrix& xkv);
/// Returns d xkv and accumulates key/value weight gradients.
Matrix key_value_backward(const AttentionParams& p, const KeyValue& kv, const KeyValueGrad& dkv,
                          AttentionParams& grad);

/// With non-empty `self_segments`, queries and keys are the same stacked
/// sequences and each row attends only within its own sequence. Otherwise every
/// query row attends to every key row.
Matrix attention_forward(const AttentionParams& p, std::uint32_t n_heads, const Matrix& xq,
                         const KeyValue& kv, Segments self_segments, AttentionCache* cache);
/// Returns d xq; adds d k and d v into `dkv`.
Matrix attention_backward(const AttentionParams& p, std::uint32_t n_heads,
                          const AttentionCache& cache, const KeyValue& kv, Segments self_segments,
                          const Matrix& dy, AttentionParams& grad, KeyValueGrad& dkv);

Matrix feed_forward_forward(const FeedForwardParams& p, const Matrix& x, FeedForwardCache* cache);
Matrix feed_forward_backward(const FeedForwardParams& p, const FeedForwardCache& cache,
                             const Matrix& dy, FeedForwardParams& grad);

/// Checks width and finiteness of a token matrix.
void check_tokens(const Matrix& tokens, std::uint32_t d_in, const char* what);

QuestionTrace question_forward(const SelectorParams& params, const Matrix& tokens, bool keep_cache);
/// Runs the visual branch on several views at once; rows of the stacked
/// activations never interact across views.
ViewTrace view_forward(const SelectorParams& params, const QuestionTrace& question,
                       std::span<const Matrix* const> views, bool keep_cache);

/// Zeroed memory key/value gradients shaped for `question`.
std::vector<KeyValueGrad> zero_memory_grads(const QuestionTrace& question);

/// Backprops d pooled (one row per view). Accumulates parameter gradients
/// into `grad` and memory key/value gradients into `d_memory` (one per layer).
void view_backward(const SelectorParams& params, const QuestionTrace& question,
                   const ViewTrace& trace, const Matrix& d_pooled, SelectorParams& grad,
                   std::vector<KeyValueGrad>& d_memory);

/// Backprops d pooled_question plus the accumulated memory gradients.
void question_backward(const SelectorParams& params, const QuestionTrace& trace,
                       const Vector& d_pooled, const std::vector<KeyValueGrad>& d_memory,
                       SelectorParams& grad);

/// Cosine with a zero-norm guard (throws NonFiniteActivation).
double cosine(const Vector& a, const Vector& b);
/// d cos / d a and d cos / d b.
std::pair<Vector, Vector> cosine_backward(const Vector& a, const Vector& b);

/// Elementwise sum `into += from` over every tensor.
void accumulate(SelectorParams& into, const SelectorParams& from);

}  // namespace cdviews::detail
