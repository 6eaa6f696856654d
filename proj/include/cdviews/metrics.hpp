#pragma once

// Answer metrics: exact match, BLEU-1, ROUGE-L and CIDEr. Every metric
// normalizes its inputs once, internally.

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cdviews/execution.hpp"

namespace cdviews {

/// Unicode NFC, lowercase, whitespace collapsed to single spaces, leading and
/// trailing whitespace removed, trailing runs of . ? ! , ; : removed.
std::string normalize_answer(std::string_view text);

/// normalize_answer split on spaces.
std::vector<std::string> answer_tokens(std::string_view text);

/// 1 when the prediction equals any gold answer after normalization. Throws
/// EmptyGold when `gold` is empty.
int em_at_1(std::string_view prediction, const std::vector<std::string>& gold);

/// Clipped unigram precision times the brevity penalty against the closest
/// reference length (shorter wins ties). Empty prediction scores 0. Throws
/// EmptyGold without references.
double bleu1(std::string_view prediction, const std::vector<std::string>& references);

/// LCS F-measure with recall weight 1.2, maximized over references.
double rouge_l(std::string_view prediction, const std::vector<std::string>& references,
               double beta = 1.2);

struct CiderResult {
  /// Mean of per_instance.
  double score = 0.0;
  std::vector<double> per_instance;
};

/// Original CIDEr over n-grams 1..4: term frequency times log(N / df) with
/// document frequencies counted over the reference sets, cosine similarity
/// averaged over references and n, times 10. Throws DegenerateCorpus for fewer
/// than two instances and LengthMismatch when the inputs differ in length.
CiderResult cider(const std::vector<std::string>& predictions,
                  const std::vector<std::vector<std::string>>& references,
                  Execution exec = Execution::Parallel);

struct MetricsReport {
  double em_at_1 = 0.0;
  double bleu1 = 0.0;
  double rouge_l = 0.0;
  /// Corpus CIDEr as defined above; tables conventionally print cider * 100.
  double cider = 0.0;
  std::size_t n_instances = 0;
  std::size_t n_exact = 0;

  nlohmann::json to_json() const;
  /// Fixed-width two-row table.
  std::string to_table() const;
};

struct EvalInstance {
  std::string question_id;
  std::string prediction;
  std::vector<std::string> gold;
};

MetricsReport evaluate(const std::vector<EvalInstance>& instances,
                       Execution exec = Execution::Parallel);

/// Answers JSONL {question_id, answer}; gold JSONL {question_id, answers}.
/// Throws IdMismatch naming missing and extra ids.
std::vector<EvalInstance> join_answers(const std::filesystem::path& answers,
                                       const std::filesystem::path& gold);

MetricsReport evaluate_run(const std::filesystem::path& answers, const std::filesystem::path& gold,
                           Execution exec = Execution::Parallel);

}  // namespace cdviews
