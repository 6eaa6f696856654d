// Serial reference vs OpenMP kernels: wall time and agreement of the outputs.
// Usage: bench [views] [instances]

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <random>
#include <string>
#include <vector>

#include "cdviews/metrics.hpp"
#include "cdviews/selector.hpp"

using namespace cdviews;

namespace {

template <typename F>
double seconds(F&& f, int reps) {
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) f();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / reps;
}

Matrix random_tokens(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

void report(const char* name, double serial, double parallel, bool same) {
  std::printf("%-28s serial %9.3f ms  parallel %9.3f ms  speedup %5.2fx  outputs %s\n", name, 1e3 * serial,
              1e3 * parallel, serial / parallel, same ? "identical" : "DIFFER");
}

}  // namespace

int main(int argc, char** argv) {
  const std::size_t n_views = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 64;
  const std::size_t n_inst = argc > 2 ? std::strtoul(argv[2], nullptr, 10) : 2000;
  std::printf("threads: %d\n", omp_get_max_threads());

  std::mt19937_64 rng(1);
  const auto params = SelectorParams::initialize(SelectorConfig::desk());
  const EmbeddingSeq question{random_tokens(8, 64, rng), "q"};
  std::vector<EmbeddingSeq> views;
  for (std::size_t i = 0; i < n_views; ++i) views.push_back({random_tokens(16, 64, rng), "v" + std::to_string(i)});
  SelectorOutput s_out, p_out;
  const double s1 = seconds([&] { s_out = score_views(question, views, params, Execution::Serial); }, 3);
  const double p1 = seconds([&] { p_out = score_views(question, views, params, Execution::Parallel); }, 3);
  report(("score_views x" + std::to_string(n_views)).c_str(), s1, p1, s_out.scores == p_out.scores);

  const std::vector<std::string> words{"the", "black", "couch", "coffee", "table", "lamp", "desk", "on", "near", "red"};
  std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1), len(1, 6);
  auto sentence = [&] {
    std::string s;
    for (std::size_t i = len(rng); i > 0; --i) s += (s.empty() ? "" : " ") + words[pick(rng)];
    return s;
  };
  std::vector<EvalInstance> inst;
  for (std::size_t i = 0; i < n_inst; ++i) inst.push_back({"q" + std::to_string(i), sentence(), {sentence(), sentence()}});
  MetricsReport s_rep, p_rep;
  const double s2 = seconds([&] { s_rep = evaluate(inst, Execution::Serial); }, 3);
  const double p2 = seconds([&] { p_rep = evaluate(inst, Execution::Parallel); }, 3);
  report(("evaluate x" + std::to_string(n_inst)).c_str(), s2, p2,
         s_rep.bleu1 == p_rep.bleu1 && s_rep.rouge_l == p_rep.rouge_l && s_rep.cider == p_rep.cider &&
             s_rep.em_at_1 == p_rep.em_at_1);
  return 0;
}
