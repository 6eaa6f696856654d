#include "cdviews/metrics.hpp"

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/locid.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <set>
#include <unordered_map>

#include "cdviews/error.hpp"
#include "cdviews/scene.hpp"

namespace cdviews {

namespace {

bool terminal_punct(UChar32 c) {
  return c == '.' || c == '?' || c == '!' || c == ',' || c == ';' || c == ':';
}

const icu::Normalizer2& nfc() {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* n = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw Error(ErrorCode::ConfigError, "ICU NFC data unavailable");
  return *n;
}

using NgramCounts = std::unordered_map<std::string, double>;

NgramCounts ngrams(const std::vector<std::string>& tokens, std::size_t n) {
  NgramCounts out;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (std::size_t j = 1; j < n; ++j) key += ' ' + tokens[i + j];
    out[key] += 1.0;
  }
  return out;
}

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> row(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = 0;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = a[i - 1] == b[j - 1] ? diag + 1 : std::max(row[j], row[j - 1]);
      diag = up;
    }
  }
  return row[b.size()];
}

void require_gold(const std::vector<std::string>& gold) {
  if (gold.empty()) throw Error(ErrorCode::EmptyGold, "no reference answers");
}

constexpr std::size_t kCiderMaxN = 4;

}  // namespace

std::string normalize_answer(std::string_view text) {
  icu::UnicodeString s = icu::UnicodeString::fromUTF8(
      icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  s.toLower(icu::Locale::getRoot());
  UErrorCode status = U_ZERO_ERROR;
  s = nfc().normalize(s, status);
  if (U_FAILURE(status)) throw Error(ErrorCode::InvalidArgument, "text cannot be normalized");

  icu::UnicodeString out;
  bool pending_space = false;
  for (int32_t i = 0; i < s.length();) {
    const UChar32 c = s.char32At(i);
    i += U16_LENGTH(c);
    if (u_isUWhiteSpace(c)) {
      pending_space = !out.isEmpty();
      continue;
    }
    if (pending_space) out.append(static_cast<UChar>(' '));
    pending_space = false;
    out.append(c);
  }
  // Strip terminal punctuation, and any space it exposes.
  int32_t end = out.length();
  while (end > 0) {
    const UChar32 c = out.char32At(end - 1);
    if (!terminal_punct(c) && c != ' ') break;
    --end;
  }
  out.truncate(end);
  std::string result;
  out.toUTF8String(result);
  return result;
}

std::vector<std::string> answer_tokens(std::string_view text) {
  const std::string norm = normalize_answer(text);
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start < norm.size()) {
    std::size_t end = norm.find(' ', start);
    if (end == std::string::npos) end = norm.size();
    out.push_back(norm.substr(start, end - start));
    start = end + 1;
  }
  return out;
}

int em_at_1(std::string_view prediction, const std::vector<std::string>& gold) {
  require_gold(gold);
  const std::string p = normalize_answer(prediction);
  for (const auto& g : gold) {
    if (normalize_answer(g) == p) return 1;
  }
  return 0;
}

double bleu1(std::string_view prediction, const std::vector<std::string>& references) {
  require_gold(references);
  const auto cand = answer_tokens(prediction);
  if (cand.empty()) return 0.0;
  const auto cand_counts = ngrams(cand, 1);
  NgramCounts max_ref;
  std::size_t closest = 0;
  long best_gap = -1;
  for (const auto& ref : references) {
    const auto toks = answer_tokens(ref);
    for (const auto& [w, n] : ngrams(toks, 1)) max_ref[w] = std::max(max_ref[w], n);
    const long gap = std::labs(static_cast<long>(toks.size()) - static_cast<long>(cand.size()));
    if (best_gap < 0 || gap < best_gap || (gap == best_gap && toks.size() < closest)) {
      best_gap = gap;
      closest = toks.size();
    }
  }
  double clipped = 0.0;
  for (const auto& [w, n] : cand_counts) {
    auto it = max_ref.find(w);
    if (it != max_ref.end()) clipped += std::min(n, it->second);
  }
  const double c = static_cast<double>(cand.size());
  const double r = static_cast<double>(closest);
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return bp * clipped / c;
}

double rouge_l(std::string_view prediction, const std::vector<std::string>& references,
               double beta) {
  const auto cand = answer_tokens(prediction);
  double best = 0.0;
  if (cand.empty()) return best;
  for (const auto& ref : references) {
    const auto toks = answer_tokens(ref);
    if (toks.empty()) continue;
    const double lcs = static_cast<double>(lcs_length(cand, toks));
    if (lcs == 0.0) continue;
    const double p = lcs / static_cast<double>(cand.size());
    const double r = lcs / static_cast<double>(toks.size());
    const double b2 = beta * beta;
    best = std::max(best, (1.0 + b2) * p * r / (r + b2 * p));
  }
  return best;
}

CiderResult cider(const std::vector<std::string>& predictions,
                  const std::vector<std::vector<std::string>>& references, Execution exec) {
  if (predictions.size() != references.size()) {
    throw Error(ErrorCode::LengthMismatch, "predictions and references differ in length");
  }
  const std::size_t n_inst = predictions.size();
  if (n_inst < 2) {
    throw Error(ErrorCode::DegenerateCorpus, "CIDEr needs at least two instances");
  }

  // cand[i][n-1]: prediction n-grams; refs[i][j][n-1]: reference j.
  std::vector<std::array<NgramCounts, kCiderMaxN>> cand(n_inst);
  std::vector<std::vector<std::array<NgramCounts, kCiderMaxN>>> refs(n_inst);
  std::unordered_map<std::string, double> df;
  for (std::size_t i = 0; i < n_inst; ++i) {
    require_gold(references[i]);
    const auto ct = answer_tokens(predictions[i]);
    for (std::size_t n = 1; n <= kCiderMaxN; ++n) cand[i][n - 1] = ngrams(ct, n);
    std::set<std::string> seen;
    for (const auto& r : references[i]) {
      const auto rt = answer_tokens(r);
      auto& slot = refs[i].emplace_back();
      for (std::size_t n = 1; n <= kCiderMaxN; ++n) {
        slot[n - 1] = ngrams(rt, n);
        for (const auto& [g, c] : slot[n - 1]) seen.insert(g);
      }
    }
    for (const auto& g : seen) df[g] += 1.0;
  }
  const double log_n = std::log(static_cast<double>(n_inst));

  auto tfidf = [&](const NgramCounts& counts) {
    double total = 0.0;
    for (const auto& [g, c] : counts) total += c;
    NgramCounts v;
    for (const auto& [g, c] : counts) {
      auto it = df.find(g);
      const double d = it == df.end() ? 1.0 : std::max(1.0, it->second);
      v[g] = (c / total) * (log_n - std::log(d));
    }
    return v;
  };
  auto cosine = [](const NgramCounts& a, const NgramCounts& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (const auto& [g, x] : a) {
      na += x * x;
      auto it = b.find(g);
      if (it != b.end()) dot += x * it->second;
    }
    for (const auto& [g, y] : b) nb += y * y;
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
  };

  CiderResult result;
  result.per_instance.assign(n_inst, 0.0);
  auto score = [&](std::size_t i) {
    double total = 0.0;
    for (std::size_t n = 0; n < kCiderMaxN; ++n) {
      const auto vc = tfidf(cand[i][n]);
      double sum = 0.0;
      for (const auto& r : refs[i]) sum += cosine(vc, tfidf(r[n]));
      total += sum / static_cast<double>(refs[i].size());
    }
    result.per_instance[i] = 10.0 * total / static_cast<double>(kCiderMaxN);
  };
  if (exec == Execution::Parallel) {
#pragma omp parallel for schedule(dynamic, 8)
    for (std::size_t i = 0; i < n_inst; ++i) score(i);
  } else {
    for (std::size_t i = 0; i < n_inst; ++i) score(i);
  }
  double sum = 0.0;
  for (double s : result.per_instance) sum += s;
  result.score = sum / static_cast<double>(n_inst);
  return result;
}

nlohmann::json MetricsReport::to_json() const {
  return {{"n_instances", n_instances}, {"n_exact", n_exact},   {"em_at_1", em_at_1},
          {"bleu1", bleu1},             {"rouge_l", rouge_l},   {"cider", cider},
          {"cider_x100", cider * 100.0}};
}

std::string MetricsReport::to_table() const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%8s %8s %8s %8s %10s %6s\n%8.2f %8.2f %8.2f %8.2f %10.4f %6zu\n",
                "EM@1", "BLEU-1", "ROUGE-L", "CIDEr", "CIDEr(raw)", "n", 100.0 * em_at_1,
                100.0 * bleu1, 100.0 * rouge_l, 100.0 * cider, cider, n_instances);
  return buf;
}

MetricsReport evaluate(const std::vector<EvalInstance>& instances, Execution exec) {
  const std::size_t n = instances.size();
  if (n == 0) throw Error(ErrorCode::EmptyInput, "nothing to evaluate");
  for (const auto& inst : instances) require_gold(inst.gold);
  std::vector<int> em(n);
  std::vector<double> b(n), r(n);
  auto one = [&](std::size_t i) {
    em[i] = em_at_1(instances[i].prediction, instances[i].gold);
    b[i] = bleu1(instances[i].prediction, instances[i].gold);
    r[i] = rouge_l(instances[i].prediction, instances[i].gold);
  };
  if (exec == Execution::Parallel) {
#pragma omp parallel for schedule(dynamic, 16)
    for (std::size_t i = 0; i < n; ++i) one(i);
  } else {
    for (std::size_t i = 0; i < n; ++i) one(i);
  }
  MetricsReport report;
  report.n_instances = n;
  for (std::size_t i = 0; i < n; ++i) {
    report.n_exact += static_cast<std::size_t>(em[i]);
    report.bleu1 += b[i];
    report.rouge_l += r[i];
  }
  report.em_at_1 = static_cast<double>(report.n_exact) / static_cast<double>(n);
  report.bleu1 /= static_cast<double>(n);
  report.rouge_l /= static_cast<double>(n);

  std::vector<std::string> preds;
  std::vector<std::vector<std::string>> golds;
  for (const auto& inst : instances) {
    preds.push_back(inst.prediction);
    golds.push_back(inst.gold);
  }
  report.cider = cider(preds, golds, exec).score;
  return report;
}

std::vector<EvalInstance> join_answers(const std::filesystem::path& answers,
                                       const std::filesystem::path& gold) {
  std::map<std::string, std::string> predicted;
  try {
    for (const auto& row : read_jsonl(answers)) {
      const auto id = row.at("question_id").get<std::string>();
      if (!predicted.emplace(id, row.at("answer").get<std::string>()).second) {
        throw Error(ErrorCode::DataError, "duplicate answer for '" + id + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaError, answers.string() + ": " + e.what());
  }

  std::vector<EvalInstance> out;
  std::vector<std::string> missing;
  std::set<std::string> matched;
  try {
    for (const auto& row : read_jsonl(gold)) {
      EvalInstance inst;
      inst.question_id = row.at("question_id").get<std::string>();
      inst.gold = row.at("answers").get<std::vector<std::string>>();
      auto it = predicted.find(inst.question_id);
      if (it == predicted.end()) {
        missing.push_back(inst.question_id);
        continue;
      }
      if (!matched.insert(inst.question_id).second) {
        throw Error(ErrorCode::DataError, "duplicate gold for '" + inst.question_id + "'");
      }
      inst.prediction = it->second;
      out.push_back(std::move(inst));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaError, gold.string() + ": " + e.what());
  }
  std::vector<std::string> extra;
  for (const auto& [id, a] : predicted) {
    if (!matched.count(id)) extra.push_back(id);
  }
  if (!missing.empty() || !extra.empty()) {
    auto list = [](const std::vector<std::string>& ids) {
      std::string s;
      for (std::size_t i = 0; i < ids.size() && i < 20; ++i) s += (i ? ", " : "") + ids[i];
      if (ids.size() > 20) s += ", ...";
      return s;
    };
    throw Error(ErrorCode::IdMismatch, "missing answers: [" + list(missing) + "]; extra answers: [" +
                                           list(extra) + "]");
  }
  return out;
}

MetricsReport evaluate_run(const std::filesystem::path& answers, const std::filesystem::path& gold,
                           Execution exec) {
  return evaluate(join_answers(answers, gold), exec);
}

}  // namespace cdviews
