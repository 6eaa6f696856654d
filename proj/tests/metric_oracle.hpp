#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace cdviews::testing {

// Clean-room metrics for ASCII text, written independently of the library.
namespace metric_oracle {

inline std::string normalize(const std::string& text) {
  std::istringstream in(text);
  std::string word, joined;
  while (in >> word) {
    std::transform(word.begin(), word.end(), word.begin(), [](unsigned char c) { return std::tolower(c); });
    joined += (joined.empty() ? "" : " ") + word;
  }
  while (!joined.empty() && std::string(".?!,;: ").find(joined.back()) != std::string::npos) joined.pop_back();
  return joined;
}

inline std::vector<std::string> tokens(const std::string& text) {
  std::istringstream in(normalize(text));
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

using Gram = std::vector<std::string>;

inline std::map<Gram, double> grams(const std::vector<std::string>& t, std::size_t n) {
  std::map<Gram, double> out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) out[Gram(t.begin() + i, t.begin() + i + n)] += 1;
  return out;
}

inline double em(const std::string& p, const std::vector<std::string>& gold) {
  for (const auto& g : gold)
    if (normalize(g) == normalize(p)) return 1.0;
  return 0.0;
}

inline double bleu1(const std::string& p, const std::vector<std::string>& refs) {
  const auto c = tokens(p);
  if (c.empty()) return 0.0;
  std::map<std::string, double> cap;
  std::size_t best_len = 0;
  double best_gap = 1e9;
  for (const auto& r : refs) {
    const auto t = tokens(r);
    std::map<std::string, double> counts;
    for (const auto& w : t) counts[w] += 1;
    for (const auto& [w, n] : counts) cap[w] = std::max(cap[w], n);
    const double gap = std::fabs(double(t.size()) - double(c.size()));
    if (gap < best_gap || (gap == best_gap && t.size() < best_len)) {
      best_gap = gap;
      best_len = t.size();
    }
  }
  std::map<std::string, double> mine;
  for (const auto& w : c) mine[w] += 1;
  double hit = 0;
  for (const auto& [w, n] : mine) hit += std::min(n, cap.count(w) ? cap[w] : 0.0);
  const double bp = c.size() < best_len ? std::exp(1.0 - double(best_len) / double(c.size())) : 1.0;
  return bp * hit / double(c.size());
}

inline std::size_t lcs(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::vector<std::size_t>> t(a.size() + 1, std::vector<std::size_t>(b.size() + 1, 0));
  for (std::size_t i = 1; i <= a.size(); ++i)
    for (std::size_t j = 1; j <= b.size(); ++j)
      t[i][j] = a[i - 1] == b[j - 1] ? t[i - 1][j - 1] + 1 : std::max(t[i - 1][j], t[i][j - 1]);
  return t[a.size()][b.size()];
}

inline double rouge(const std::string& p, const std::vector<std::string>& refs) {
  const auto c = tokens(p);
  double best = 0;
  for (const auto& r : refs) {
    const auto t = tokens(r);
    const double l = double(lcs(c, t));
    if (l == 0) continue;
    const double prec = l / double(c.size()), rec = l / double(t.size());
    best = std::max(best, (1 + 1.44) * prec * rec / (rec + 1.44 * prec));
  }
  return best;
}

inline std::vector<double> cider(const std::vector<std::string>& preds, const std::vector<std::vector<std::string>>& refs) {
  const double n_docs = double(preds.size());
  std::map<Gram, double> df;
  for (const auto& set : refs) {
    std::map<Gram, int> present;
    for (const auto& r : set)
      for (std::size_t n = 1; n <= 4; ++n)
        for (const auto& [g, c] : grams(tokens(r), n)) present[g] = 1;
    for (const auto& [g, one] : present) df[g] += 1;
  }
  auto vec = [&](const std::string& s, std::size_t n) {
    auto g = grams(tokens(s), n);
    for (auto& [k, v] : g) v *= std::log(n_docs / std::max(1.0, df.count(k) ? df[k] : 0.0));
    return g;
  };
  auto cos = [](const std::map<Gram, double>& a, const std::map<Gram, double>& b) {
    double d = 0, x = 0, y = 0;
    for (const auto& [k, v] : a) {
      x += v * v;
      if (b.count(k)) d += v * b.at(k);
    }
    for (const auto& [k, v] : b) y += v * v;
    return x > 0 && y > 0 ? d / std::sqrt(x * y) : 0.0;
  };
  std::vector<double> out;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    double s = 0;
    for (std::size_t n = 1; n <= 4; ++n)
      for (const auto& r : refs[i]) s += cos(vec(preds[i], n), vec(r, n)) / double(refs[i].size());
    out.push_back(10.0 * s / 4.0);
  }
  return out;
}

}  // namespace metric_oracle

// Prediction, gold, expected exact match under the normalization rules.
struct EmCase {
  const char* pred;
  const char* gold;
  int expect;
};

inline const EmCase kEmTable[] = {
    {"coffee table", "coffee table", 1}, {"Coffee Table", "coffee table", 1},
    {"coffee table.", "coffee table", 1}, {"COFFEE TABLE!", "coffee table", 1},
    {"coffee  table", "coffee table", 1}, {" coffee table ", "coffee table", 1},
    {"coffee table?", "Coffee table.", 1}, {"coffee table...", "coffee table", 1},
    {"coffee table ,", "coffee table", 1}, {"coffee\ttable", "coffee table", 1},
    {"coffee table;:", "coffee table", 1}, {"Coffee\nTable", "coffee table", 1},
    {"sofa", "couch", 0}, {"coffee tables", "coffee table", 0},
    {"the coffee table", "coffee table", 0}, {"coffee-table", "coffee table", 0},
    {".coffee table", "coffee table", 0}, {"coffee. table", "coffee table", 0},
    {"2", "two", 0}, {"two", "Two", 1},
    {"left", "Left.", 1}, {"left side", "left", 0},
    {"", "lamp", 0}, {"!!!", "", 1},
    {"white chair", "White Chair", 1}, {"whitechair", "white chair", 0},
    {"yes", "Yes.", 1}, {"no", "No!", 1},
    {"brown", "brown ", 1}, {"brown'", "brown", 0},
};

}  // namespace cdviews::testing
