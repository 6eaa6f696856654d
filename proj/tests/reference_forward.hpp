#pragma once

// Loop-based forward pass of the selector, written from the architecture
// description without reusing any library kernel. Slow and only for tests.

#include <cmath>
#include <vector>

#include "cdviews/selector.hpp"

namespace cdviews::testing {

using Rows = std::vector<std::vector<double>>;

inline Rows to_rows(const Matrix& m) {
  Rows r(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) r[i][j] = m(i, j);
  return r;
}

// y = x W (+ b)
inline Rows ref_linear(const Rows& x, const Matrix& w, const Matrix* b) {
  Rows y(x.size(), std::vector<double>(static_cast<std::size_t>(w.cols()), 0.0));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (Eigen::Index o = 0; o < w.cols(); ++o) {
      double s = b ? (*b)(0, o) : 0.0;
      for (Eigen::Index k = 0; k < w.rows(); ++k) s += x[i][k] * w(k, o);
      y[i][o] = s;
    }
  return y;
}

inline Rows ref_layer_norm(const Rows& x, const LayerNormParams& p) {
  Rows y = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double n = static_cast<double>(x[i].size());
    double mean = 0.0;
    for (double v : x[i]) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : x[i]) var += (v - mean) * (v - mean);
    var /= n;
    for (std::size_t j = 0; j < x[i].size(); ++j)
      y[i][j] = (x[i][j] - mean) / std::sqrt(var + 1e-5) * p.gamma(0, j) + p.beta(0, j);
  }
  return y;
}

inline Rows ref_add(const Rows& a, const Rows& b) {
  Rows y = a;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) y[i][j] += b[i][j];
  return y;
}

// Multi-head attention of queries `xq` over keys/values from `xkv`.
inline Rows ref_attention(const Rows& xq, const Rows& xkv, const AttentionParams& p,
                          std::uint32_t heads) {
  const Rows q = ref_linear(xq, p.query.weight, &p.query.bias);
  const Rows k = ref_linear(xkv, p.key_weight, nullptr);
  const Rows v = ref_linear(xkv, p.value.weight, &p.value.bias);
  const std::size_t d = q[0].size(), dh = d / heads;
  Rows ctx(xq.size(), std::vector<double>(d, 0.0));
  for (std::uint32_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < xq.size(); ++i) {
      std::vector<double> s(xkv.size());
      double mx = -1e300;
      for (std::size_t j = 0; j < xkv.size(); ++j) {
        double dot = 0.0;
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) dot += q[i][c] * k[j][c];
        s[j] = dot / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, s[j]);
      }
      double z = 0.0;
      for (double& e : s) z += (e = std::exp(e - mx));
      for (std::size_t j = 0; j < xkv.size(); ++j)
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) ctx[i][c] += s[j] / z * v[j][c];
    }
  }
  return ref_linear(ctx, p.output.weight, &p.output.bias);
}

inline Rows ref_ffn(const Rows& x, const FeedForwardParams& p) {
  Rows a = ref_linear(x, p.up.weight, &p.up.bias);
  for (auto& row : a)
    for (double& v : row) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
  return ref_linear(a, p.down.weight, &p.down.bias);
}

inline std::vector<double> ref_mean(const Rows& x) {
  std::vector<double> m(x[0].size(), 0.0);
  for (const auto& row : x)
    for (std::size_t j = 0; j < row.size(); ++j) m[j] += row[j] / static_cast<double>(x.size());
  return m;
}

struct ReferenceScores {
  std::vector<double> pooled_question;
  std::vector<double> scores;
};

inline ReferenceScores reference_scores(const SelectorParams& params, const Matrix& question,
                                        const std::vector<Matrix>& views) {
  const auto& cfg = params.config;
  Rows hq = ref_linear(to_rows(question), params.projection.weight, &params.projection.bias);
  std::vector<Rows> question_outputs;
  for (std::uint32_t l = 0; l < cfg.n_layers; ++l) {
    const auto& p = params.question_layers[l];
    hq = ref_add(hq, ref_attention(ref_layer_norm(hq, p.attn_norm), ref_layer_norm(hq, p.attn_norm),
                                   p.self_attn, cfg.n_heads));
    hq = ref_add(hq, ref_ffn(ref_layer_norm(hq, p.ffn_norm), p.ffn));
    question_outputs.push_back(hq);
  }
  ReferenceScores out;
  out.pooled_question = ref_mean(hq);
  for (const auto& view : views) {
    Rows h = ref_linear(to_rows(view), params.projection.weight, &params.projection.bias);
    for (std::uint32_t l = 0; l < cfg.n_layers; ++l) {
      const auto& p = params.visual_layers[l];
      const Rows a = ref_layer_norm(h, p.attn_norm);
      h = ref_add(h, ref_attention(a, a, p.self_attn, cfg.n_heads));
      const Rows memory = ref_layer_norm(question_outputs[l], p.memory_norm);
      h = ref_add(h, ref_attention(ref_layer_norm(h, p.cross_norm), memory, p.cross_attn, cfg.n_heads));
      h = ref_add(h, ref_ffn(ref_layer_norm(h, p.ffn_norm), p.ffn));
    }
    const auto v = ref_mean(h);
    double dot = 0.0, nq = 0.0, nv = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) {
      dot += v[j] * out.pooled_question[j];
      nq += out.pooled_question[j] * out.pooled_question[j];
      nv += v[j] * v[j];
    }
    out.scores.push_back(dot / std::sqrt(nq * nv));
  }
  return out;
}

}  // namespace cdviews::testing
