#include "cdviews/selector.hpp"

#include <cmath>
#include <random>
#include <string>

#include <Eigen/QR>
#include <omp.h>

#include "cdviews/error.hpp"
#include "selector_internal.hpp"

namespace cdviews {

SelectorConfig SelectorConfig::desk() { return SelectorConfig{}; }

SelectorConfig SelectorConfig::paper_scale() {
  SelectorConfig c;
  c.d_in = 3584;
  c.d_model = 288;
  c.n_heads = 8;
  c.d_ff = 1248;
  c.n_layers = 2;
  return c;
}

void SelectorConfig::validate() const {
  if (d_in == 0 || d_model == 0 || n_heads == 0 || d_ff == 0) {
    throw Error(ErrorCode::InvalidArgument, "selector dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw Error(ErrorCode::InvalidArgument, "d_model must be divisible by n_heads");
  }
}

namespace {

template <class Params, class Fn>
void visit_layer_norm(Params& p, const std::string& prefix, Fn& fn) {
  fn(prefix + ".gamma", p.gamma);
  fn(prefix + ".beta", p.beta);
}

template <class Params, class Fn>
void visit_linear(Params& p, const std::string& prefix, Fn& fn) {
  fn(prefix + ".weight", p.weight);
  fn(prefix + ".bias", p.bias);
}

template <class Params, class Fn>
void visit_attention(Params& p, const std::string& prefix, Fn& fn) {
  visit_linear(p.query, prefix + ".query", fn);
  fn(prefix + ".key.weight", p.key_weight);
  visit_linear(p.value, prefix + ".value", fn);
  visit_linear(p.output, prefix + ".output", fn);
}

template <class Params, class Fn>
void visit_ffn(Params& p, const std::string& prefix, Fn& fn) {
  visit_linear(p.up, prefix + ".up", fn);
  visit_linear(p.down, prefix + ".down", fn);
}

template <class Params, class Fn>
void visit_all(Params& p, Fn& fn) {
  visit_linear(p.projection, "projection", fn);
  for (std::size_t l = 0; l < p.question_layers.size(); ++l) {
    auto& layer = p.question_layers[l];
    const std::string pre = "question." + std::to_string(l);
    visit_layer_norm(layer.attn_norm, pre + ".attn_norm", fn);
    visit_attention(layer.self_attn, pre + ".self_attn", fn);
    visit_layer_norm(layer.ffn_norm, pre + ".ffn_norm", fn);
    visit_ffn(layer.ffn, pre + ".ffn", fn);
  }
  for (std::size_t l = 0; l < p.visual_layers.size(); ++l) {
    auto& layer = p.visual_layers[l];
    const std::string pre = "visual." + std::to_string(l);
    visit_layer_norm(layer.attn_norm, pre + ".attn_norm", fn);
    visit_attention(layer.self_attn, pre + ".self_attn", fn);
    visit_layer_norm(layer.cross_norm, pre + ".cross_norm", fn);
    visit_layer_norm(layer.memory_norm, pre + ".memory_norm", fn);
    visit_attention(layer.cross_attn, pre + ".cross_attn", fn);
    visit_layer_norm(layer.ffn_norm, pre + ".ffn_norm", fn);
    visit_ffn(layer.ffn, pre + ".ffn", fn);
  }
  fn(std::string("logit_scale"), p.logit_scale);
}

LayerNormParams make_layer_norm(std::uint32_t d, bool zero) {
  return {zero ? Matrix::Zero(1, d) : Matrix::Ones(1, d), Matrix::Zero(1, d)};
}

LinearParams make_linear(std::uint32_t in, std::uint32_t out) {
  return {Matrix::Zero(in, out), Matrix::Zero(1, out)};
}

AttentionParams make_attention(std::uint32_t d) {
  return {make_linear(d, d), Matrix::Zero(d, d), make_linear(d, d), make_linear(d, d)};
}

SelectorParams make_shapes(const SelectorConfig& config, bool zero) {
  config.validate();
  const auto d = config.d_model;
  SelectorParams p;
  p.config = config;
  p.projection = make_linear(config.d_in, d);
  for (std::uint32_t l = 0; l < config.n_layers; ++l) {
    p.question_layers.push_back({make_layer_norm(d, zero), make_attention(d),
                                 make_layer_norm(d, zero),
                                 {make_linear(d, config.d_ff), make_linear(config.d_ff, d)}});
    p.visual_layers.push_back({make_layer_norm(d, zero), make_attention(d),
                               make_layer_norm(d, zero), make_layer_norm(d, zero),
                               make_attention(d), make_layer_norm(d, zero),
                               {make_linear(d, config.d_ff), make_linear(config.d_ff, d)}});
  }
  p.logit_scale = Matrix::Constant(1, 1, zero ? 0.0 : 10.0);
  return p;
}

}  // namespace

SelectorParams SelectorParams::initialize(const SelectorConfig& config) {
  SelectorParams p = make_shapes(config, false);
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto init = [&](std::string_view name, Matrix& m) {
    // Residual-branch outputs start at zero so every layer begins as identity.
    if (name.ends_with(".output.weight") || name.ends_with(".down.weight")) return;
    if (name == "projection.weight") {
      // Semi-orthogonal, so the shared projection starts out preserving angles.
      Matrix gaussian(m.rows(), m.cols());
      for (Eigen::Index i = 0; i < gaussian.size(); ++i) gaussian.data()[i] = normal(rng);
      if (m.rows() >= m.cols()) {
        Eigen::HouseholderQR<Matrix> qr(gaussian);
        m = qr.householderQ() * Matrix::Identity(m.rows(), m.cols());
      } else {
        Eigen::HouseholderQR<Matrix> qr(gaussian.transpose());
        m = (qr.householderQ() * Matrix::Identity(m.cols(), m.rows())).transpose();
      }
      return;
    }
    if (name.ends_with(".weight")) {
      const double stddev = 1.0 / std::sqrt(static_cast<double>(m.rows()));
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * normal(rng);
    }
  };
  p.for_each_tensor(init);
  return p;
}

SelectorParams SelectorParams::zeros(const SelectorConfig& config) {
  return make_shapes(config, true);
}

void SelectorParams::for_each_tensor(const std::function<void(std::string_view, Matrix&)>& fn) {
  auto adapter = [&](const std::string& name, Matrix& m) { fn(name, m); };
  visit_all(*this, adapter);
}

void SelectorParams::for_each_tensor(
    const std::function<void(std::string_view, const Matrix&)>& fn) const {
  auto adapter = [&](const std::string& name, const Matrix& m) { fn(name, m); };
  visit_all(*this, adapter);
}

std::size_t param_count(const SelectorParams& params) {
  std::size_t n = 0;
  params.for_each_tensor([&](std::string_view, const Matrix& m) { n += m.size(); });
  return n;
}

std::size_t param_count(const SelectorConfig& c) {
  const std::size_t d = c.d_model, f = c.d_ff;
  const std::size_t norm = 2 * d;
  const std::size_t attention = 4 * d * d + 3 * d;
  const std::size_t ffn = 2 * d * f + f + d;
  const std::size_t question_layer = 2 * norm + attention + ffn;
  const std::size_t visual_layer = 4 * norm + 2 * attention + ffn;
  return std::size_t{c.d_in} * d + d + c.n_layers * (question_layer + visual_layer) + 1;
}

namespace detail {

namespace {

void add_bias(Matrix& y, const Matrix& bias) { y.rowwise() += bias.row(0); }

Matrix linear(const LinearParams& p, const Matrix& x) {
  Matrix y = x * p.weight;
  add_bias(y, p.bias);
  return y;
}

// Accumulates weight/bias gradients; returns dx.
Matrix linear_backward(const LinearParams& p, const Matrix& x, const Matrix& dy,
                       LinearParams& grad) {
  grad.weight.noalias() += x.transpose() * dy;
  grad.bias += dy.colwise().sum();
  return dy * p.weight.transpose();
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }
double gelu_grad(double x) {
  return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

void softmax_rows(Matrix& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double mx = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - mx).exp();
    s.row(i) /= s.row(i).sum();
  }
}

}  // namespace

Matrix layer_norm_forward(const LayerNormParams& p, const Matrix& x, LayerNormCache* cache) {
  const auto n = x.rows();
  const double d = static_cast<double>(x.cols());
  Matrix xhat(n, x.cols());
  Vector inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = x.row(i).sum() / d;
    const auto centered = x.row(i).array() - mean;
    const double var = centered.square().sum() / d;
    inv_std(i) = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(i) = centered * inv_std(i);
  }
  Matrix y = (xhat.array().rowwise() * p.gamma.row(0).array()).matrix();
  add_bias(y, p.beta);
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Matrix layer_norm_backward(const LayerNormParams& p, const LayerNormCache& cache, const Matrix& dy,
                           LayerNormParams& grad) {
  grad.gamma += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  grad.beta += dy.colwise().sum();
  const Matrix dxhat = (dy.array().rowwise() * p.gamma.row(0).array()).matrix();
  const double d = static_cast<double>(dy.cols());
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double sum = dxhat.row(i).sum();
    const double dot = dxhat.row(i).dot(cache.xhat.row(i));
    dx.row(i) = (cache.inv_std(i) / d) *
                (d * dxhat.row(i).array() - sum - cache.xhat.row(i).array() * dot).matrix();
  }
  return dx;
}

KeyValue project_key_value(const AttentionParams& p, const Matrix& xkv) {
  KeyValue kv;
  kv.k.noalias() = xkv * p.key_weight;
  kv.v = linear(p.value, xkv);
  kv.x = xkv;
  return kv;
}

Matrix key_value_backward(const AttentionParams& p, const KeyValue& kv, const KeyValueGrad& dkv,
                          AttentionParams& grad) {
  grad.key_weight.noalias() += kv.x.transpose() * dkv.dk;
  Matrix dx = dkv.dk * p.key_weight.transpose();
  dx += linear_backward(p.value, kv.x, dkv.dv, grad.value);
  return dx;
}

namespace {

struct Block {
  Eigen::Index q0, nq, k0, nk;
};

std::vector<Block> attention_blocks(Eigen::Index q_rows, Eigen::Index k_rows, Segments segments) {
  if (segments.empty()) return {{0, q_rows, 0, k_rows}};
  std::vector<Block> out;
  for (std::size_t i = 0; i + 1 < segments.size(); ++i) {
    const Eigen::Index n = segments[i + 1] - segments[i];
    out.push_back({segments[i], n, segments[i], n});
  }
  return out;
}

}  // namespace

Matrix attention_forward(const AttentionParams& p, std::uint32_t n_heads, const Matrix& xq,
                         const KeyValue& kv, Segments self_segments, AttentionCache* cache) {
  Matrix q = linear(p.query, xq);
  const Eigen::Index d = q.cols();
  const Eigen::Index dh = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix context(xq.rows(), d);
  std::vector<Matrix> probs;
  const auto blocks = attention_blocks(q.rows(), kv.k.rows(), self_segments);
  if (cache) probs.reserve(blocks.size() * n_heads);
  for (const Block& b : blocks) {
    for (std::uint32_t h = 0; h < n_heads; ++h) {
      Matrix s = (q.block(b.q0, h * dh, b.nq, dh) * kv.k.block(b.k0, h * dh, b.nk, dh).transpose()) *
                 scale;
      softmax_rows(s);
      context.block(b.q0, h * dh, b.nq, dh).noalias() = s * kv.v.block(b.k0, h * dh, b.nk, dh);
      if (cache) probs.push_back(std::move(s));
    }
  }
  Matrix out = linear(p.output, context);
  if (cache) {
    cache->xq = xq;
    cache->q = std::move(q);
    cache->probs = std::move(probs);
    cache->context = std::move(context);
  }
  return out;
}

Matrix attention_backward(const AttentionParams& p, std::uint32_t n_heads, const AttentionCache& c,
                          const KeyValue& kv, Segments self_segments, const Matrix& dy,
                          AttentionParams& grad, KeyValueGrad& dkv) {
  const Matrix d_context = linear_backward(p.output, c.context, dy, grad.output);
  const Eigen::Index d = c.q.cols();
  const Eigen::Index dh = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix dq(c.q.rows(), d);
  const auto blocks = attention_blocks(c.q.rows(), kv.k.rows(), self_segments);
  std::size_t index = 0;
  for (const Block& b : blocks) {
    for (std::uint32_t h = 0; h < n_heads; ++h) {
      const Matrix& prob = c.probs[index++];
      const auto dc = d_context.block(b.q0, h * dh, b.nq, dh);
      const Matrix dprob = dc * kv.v.block(b.k0, h * dh, b.nk, dh).transpose();
      dkv.dv.block(b.k0, h * dh, b.nk, dh).noalias() += prob.transpose() * dc;
      const Vector row_dot = (dprob.array() * prob.array()).rowwise().sum();
      const Matrix dscore =
          (prob.array() * (dprob.colwise() - row_dot).array()).matrix() * scale;
      dq.block(b.q0, h * dh, b.nq, dh).noalias() = dscore * kv.k.block(b.k0, h * dh, b.nk, dh);
      dkv.dk.block(b.k0, h * dh, b.nk, dh).noalias() +=
          dscore.transpose() * c.q.block(b.q0, h * dh, b.nq, dh);
    }
  }
  return linear_backward(p.query, c.xq, dq, grad.query);
}

Matrix feed_forward_forward(const FeedForwardParams& p, const Matrix& x, FeedForwardCache* cache) {
  Matrix pre = linear(p.up, x);
  Matrix act = pre.unaryExpr([](double v) { return gelu(v); });
  Matrix out = linear(p.down, act);
  if (cache) {
    cache->x = x;
    cache->pre = std::move(pre);
    cache->act = std::move(act);
  }
  return out;
}

Matrix feed_forward_backward(const FeedForwardParams& p, const FeedForwardCache& c,
                             const Matrix& dy, FeedForwardParams& grad) {
  const Matrix dact = linear_backward(p.down, c.act, dy, grad.down);
  const Matrix dpre =
      (dact.array() * c.pre.unaryExpr([](double v) { return gelu_grad(v); }).array()).matrix();
  return linear_backward(p.up, c.x, dpre, grad.up);
}

void check_tokens(const Matrix& tokens, std::uint32_t d_in, const char* what) {
  if (tokens.rows() < 1) {
    throw Error(ErrorCode::DimensionMismatch, std::string(what) + " has no tokens");
  }
  if (tokens.cols() != static_cast<Eigen::Index>(d_in)) {
    throw Error(ErrorCode::DimensionMismatch, std::string(what) + " token width " +
                                                  std::to_string(tokens.cols()) + " != d_in " +
                                                  std::to_string(d_in));
  }
  if (!tokens.allFinite()) {
    throw Error(ErrorCode::DimensionMismatch, std::string(what) + " has non-finite entries");
  }
}

namespace {

Vector mean_pool(const Matrix& h) {
  Vector pooled = h.colwise().mean().transpose();
  if (!pooled.allFinite()) throw Error(ErrorCode::NonFiniteActivation, "pooled vector not finite");
  return pooled;
}

Matrix mean_pool_backward(const Vector& d_pooled, Eigen::Index rows) {
  return Matrix::Ones(rows, 1) * (d_pooled.transpose() / static_cast<double>(rows));
}

Matrix mean_pool_segments(const Matrix& h, Segments bounds) {
  Matrix pooled(static_cast<Eigen::Index>(bounds.size() - 1), h.cols());
  for (std::size_t i = 0; i + 1 < bounds.size(); ++i) {
    pooled.row(static_cast<Eigen::Index>(i)) =
        h.middleRows(bounds[i], bounds[i + 1] - bounds[i]).colwise().mean();
  }
  if (!pooled.allFinite()) throw Error(ErrorCode::NonFiniteActivation, "pooled vector not finite");
  return pooled;
}

Matrix mean_pool_segments_backward(const Matrix& d_pooled, Segments bounds) {
  Matrix dh(bounds.back(), d_pooled.cols());
  for (std::size_t i = 0; i + 1 < bounds.size(); ++i) {
    const Eigen::Index n = bounds[i + 1] - bounds[i];
    dh.middleRows(bounds[i], n) =
        Matrix::Ones(n, 1) * (d_pooled.row(static_cast<Eigen::Index>(i)) / static_cast<double>(n));
  }
  return dh;
}

}  // namespace

namespace {

// Self-attention sublayer output; the cache keeps its own key/value projection.
Matrix self_attention(const AttentionParams& p, std::uint32_t n_heads, const Matrix& x,
                      Segments segments, AttentionCache* cache) {
  KeyValue kv = project_key_value(p, x);
  Matrix out = attention_forward(p, n_heads, x, kv, segments, cache);
  if (cache) cache->self_kv = std::move(kv);
  return out;
}

Matrix self_attention_backward(const AttentionParams& p, std::uint32_t n_heads,
                               const AttentionCache& c, Segments segments, const Matrix& dy,
                               AttentionParams& grad) {
  KeyValueGrad dkv{Matrix::Zero(c.self_kv.k.rows(), c.self_kv.k.cols()),
                   Matrix::Zero(c.self_kv.v.rows(), c.self_kv.v.cols())};
  Matrix dx = attention_backward(p, n_heads, c, c.self_kv, segments, dy, grad, dkv);
  dx += key_value_backward(p, c.self_kv, dkv, grad);
  return dx;
}

}  // namespace

QuestionTrace question_forward(const SelectorParams& params, const Matrix& tokens,
                               bool keep_cache) {
  const auto& cfg = params.config;
  QuestionTrace t;
  if (keep_cache) t.input = tokens;
  Matrix h = linear(params.projection, tokens);
  t.hidden.reserve(cfg.n_layers + 1);
  for (std::uint32_t l = 0; l < cfg.n_layers; ++l) {
    const auto& p = params.question_layers[l];
    QuestionLayerCache cache;
    QuestionLayerCache* c = keep_cache ? &cache : nullptr;
    Matrix a = layer_norm_forward(p.attn_norm, h, c ? &c->attn_norm : nullptr);
    Matrix h1 = h + self_attention(p.self_attn, cfg.n_heads, a, {}, c ? &c->self_attn : nullptr);
    Matrix b = layer_norm_forward(p.ffn_norm, h1, c ? &c->ffn_norm : nullptr);
    Matrix h2 = h1 + feed_forward_forward(p.ffn, b, c ? &c->ffn : nullptr);
    t.hidden.push_back(std::move(h));
    if (keep_cache) t.layers.push_back(std::move(cache));
    h = std::move(h2);
  }
  t.pooled = mean_pool(h);
  t.hidden.push_back(std::move(h));

  for (std::uint32_t l = 0; l < cfg.n_layers; ++l) {
    const auto& p = params.visual_layers[l];
    LayerNormCache norm_cache;
    const Matrix mem =
        layer_norm_forward(p.memory_norm, t.hidden[l + 1], keep_cache ? &norm_cache : nullptr);
    t.memory.push_back(project_key_value(p.cross_attn, mem));
    if (keep_cache) t.memory_norm.push_back(std::move(norm_cache));
  }
  return t;
}

ViewTrace view_forward(const SelectorParams& params, const QuestionTrace& question,
                       std::span<const Matrix* const> views, bool keep_cache) {
  const auto& cfg = params.config;
  ViewTrace t;
  t.bounds.push_back(0);
  for (const Matrix* v : views) t.bounds.push_back(t.bounds.back() + v->rows());
  Matrix input(t.bounds.back(), cfg.d_in);
  for (std::size_t i = 0; i < views.size(); ++i) {
    input.middleRows(t.bounds[i], views[i]->rows()) = *views[i];
  }
  const Segments segments(t.bounds);
  Matrix h = linear(params.projection, input);
  if (keep_cache) t.input = std::move(input);
  for (std::uint32_t l = 0; l < cfg.n_layers; ++l) {
    const auto& p = params.visual_layers[l];
    VisualLayerCache cache;
    VisualLayerCache* c = keep_cache ? &cache : nullptr;
    Matrix a = layer_norm_forward(p.attn_norm, h, c ? &c->attn_norm : nullptr);
    Matrix h1 =
        h + self_attention(p.self_attn, cfg.n_heads, a, segments, c ? &c->self_attn : nullptr);
    Matrix cq = layer_norm_forward(p.cross_norm, h1, c ? &c->cross_norm : nullptr);
    Matrix h2 = h1 + attention_forward(p.cross_attn, cfg.n_heads, cq, question.memory[l], {},
                                       c ? &c->cross_attn : nullptr);
    Matrix b = layer_norm_forward(p.ffn_norm, h2, c ? &c->ffn_norm : nullptr);
    h = h2 + feed_forward_forward(p.ffn, b, c ? &c->ffn : nullptr);
    if (keep_cache) t.layers.push_back(std::move(cache));
  }
  t.pooled = mean_pool_segments(h, segments);
  if (keep_cache) t.final_hidden = std::move(h);
  return t;
}

std::vector<KeyValueGrad> zero_memory_grads(const QuestionTrace& question) {
  std::vector<KeyValueGrad> out;
  for (const auto& kv : question.memory) {
    out.push_back({Matrix::Zero(kv.k.rows(), kv.k.cols()), Matrix::Zero(kv.v.rows(), kv.v.cols())});
  }
  return out;
}

void view_backward(const SelectorParams& params, const QuestionTrace& question,
                   const ViewTrace& trace, const Matrix& d_pooled, SelectorParams& grad,
                   std::vector<KeyValueGrad>& d_memory) {
  const auto& cfg = params.config;
  const Segments segments(trace.bounds);
  Matrix dh = mean_pool_segments_backward(d_pooled, segments);
  for (std::uint32_t li = cfg.n_layers; li-- > 0;) {
    const auto& p = params.visual_layers[li];
    const auto& c = trace.layers[li];
    auto& g = grad.visual_layers[li];
    // h3 = h2 + ffn(norm(h2))
    Matrix dh2 = dh + layer_norm_backward(p.ffn_norm, c.ffn_norm,
                                          feed_forward_backward(p.ffn, c.ffn, dh, g.ffn), g.ffn_norm);
    // h2 = h1 + cross(norm(h1), memory)
    const Matrix dcq = attention_backward(p.cross_attn, cfg.n_heads, c.cross_attn,
                                          question.memory[li], {}, dh2, g.cross_attn, d_memory[li]);
    Matrix dh1 = dh2 + layer_norm_backward(p.cross_norm, c.cross_norm, dcq, g.cross_norm);
    // h1 = h + self(norm(h))
    const Matrix da =
        self_attention_backward(p.self_attn, cfg.n_heads, c.self_attn, segments, dh1, g.self_attn);
    dh = dh1 + layer_norm_backward(p.attn_norm, c.attn_norm, da, g.attn_norm);
  }
  linear_backward(params.projection, trace.input, dh, grad.projection);
}

void question_backward(const SelectorParams& params, const QuestionTrace& trace,
                       const Vector& d_pooled, const std::vector<KeyValueGrad>& d_memory,
                       SelectorParams& grad) {
  const auto& cfg = params.config;
  Matrix dh = mean_pool_backward(d_pooled, trace.hidden.back().rows());
  for (std::uint32_t li = cfg.n_layers; li-- > 0;) {
    const auto& p = params.question_layers[li];
    const auto& c = trace.layers[li];
    auto& g = grad.question_layers[li];
    const auto& vp = params.visual_layers[li];
    auto& vg = grad.visual_layers[li];
    const Matrix dmem = key_value_backward(vp.cross_attn, trace.memory[li], d_memory[li], vg.cross_attn);
    dh += layer_norm_backward(vp.memory_norm, trace.memory_norm[li], dmem, vg.memory_norm);
    Matrix dh1 = dh + layer_norm_backward(p.ffn_norm, c.ffn_norm,
                                          feed_forward_backward(p.ffn, c.ffn, dh, g.ffn), g.ffn_norm);
    const Matrix da =
        self_attention_backward(p.self_attn, cfg.n_heads, c.self_attn, {}, dh1, g.self_attn);
    dh = dh1 + layer_norm_backward(p.attn_norm, c.attn_norm, da, g.attn_norm);
  }
  linear_backward(params.projection, trace.input, dh, grad.projection);
}

double cosine(const Vector& a, const Vector& b) {
  const double na = a.norm(), nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0) || !std::isfinite(na * nb)) {
    throw Error(ErrorCode::NonFiniteActivation, "zero or non-finite pooled norm");
  }
  return a.dot(b) / (na * nb);
}

std::pair<Vector, Vector> cosine_backward(const Vector& a, const Vector& b) {
  const double na = a.norm(), nb = b.norm();
  const double s = a.dot(b) / (na * nb);
  Vector da = b / (na * nb) - (s / (na * na)) * a;
  Vector db = a / (na * nb) - (s / (nb * nb)) * b;
  return {std::move(da), std::move(db)};
}

void accumulate(SelectorParams& into, const SelectorParams& from) {
  std::vector<const Matrix*> src;
  from.for_each_tensor([&](std::string_view, const Matrix& m) { src.push_back(&m); });
  std::size_t i = 0;
  into.for_each_tensor([&](std::string_view, Matrix& m) { m += *src[i++]; });
}

}  // namespace detail

Vector encode_question(const Matrix& question_tokens, const SelectorParams& params) {
  detail::check_tokens(question_tokens, params.config.d_in, "question");
  return detail::question_forward(params, question_tokens, false).pooled;
}

SelectorOutput score_views(const EmbeddingSeq& question, std::span<const EmbeddingSeq> views,
                           const SelectorParams& params, Execution exec) {
  if (views.empty()) throw Error(ErrorCode::DimensionMismatch, "no views to score");
  detail::check_tokens(question.tokens, params.config.d_in, "question");
  for (const auto& v : views) detail::check_tokens(v.tokens, params.config.d_in, "view");

  const auto q = detail::question_forward(params, question.tokens, false);
  SelectorOutput out;
  out.pooled_question = q.pooled;
  out.pooled_views.resize(views.size());
  out.scores.resize(views.size());

  // One view per forward pass. Stacking views into one matrix is faster, but the
  // GEMM kernels then round a row differently depending on its position, which
  // breaks exact permutation equivariance.
  constexpr std::size_t kChunk = 1;
  const std::size_t n_chunks = (views.size() + kChunk - 1) / kChunk;
  auto score_chunk = [&](std::size_t chunk) {
    const std::size_t begin = chunk * kChunk;
    const std::size_t end = std::min(views.size(), begin + kChunk);
    std::vector<const Matrix*> tokens;
    for (std::size_t i = begin; i < end; ++i) tokens.push_back(&views[i].tokens);
    const auto trace = detail::view_forward(params, q, tokens, false);
    for (std::size_t i = begin; i < end; ++i) {
      out.pooled_views[i] = trace.pooled.row(static_cast<Eigen::Index>(i - begin)).transpose();
      out.scores[i] = detail::cosine(q.pooled, out.pooled_views[i]);
    }
  };

  if (exec == Execution::Serial) {
    for (std::size_t c = 0; c < n_chunks; ++c) score_chunk(c);
    return out;
  }

  // Exceptions must not cross the OpenMP region boundary.
  const auto n = static_cast<std::int64_t>(n_chunks);
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 1)
  for (std::int64_t i = 0; i < n; ++i) {
    try {
      score_chunk(static_cast<std::size_t>(i));
    } catch (...) {
#pragma omp critical(cdviews_score_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace cdviews
