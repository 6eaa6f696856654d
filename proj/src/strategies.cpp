#include "cdviews/strategies.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "cdviews/error.hpp"
#include "fnv.hpp"

namespace cdviews {

namespace {

void check_k(const SceneManifest& scene, std::size_t k) {
  if (k == 0) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
  if (scene.views.empty()) throw Error(ErrorCode::EmptyInput, "scene '" + scene.scene_id + "' has no views");
  if (k > scene.views.size()) {
    throw Error(ErrorCode::KTooLarge, "k = " + std::to_string(k) + " exceeds the " +
                                          std::to_string(scene.views.size()) + " views of '" +
                                          scene.scene_id + "'");
  }
}

SelectionResult from_indices(const SceneManifest& scene, Strategy strategy,
                             std::vector<std::size_t> picked,
                             std::optional<std::vector<double>> scores) {
  SelectionResult r;
  r.strategy = strategy;
  for (std::size_t i : picked) r.view_ids.push_back(scene.views[i].view_id);
  r.scores = std::move(scores);
  r.indices = picked;
  std::sort(picked.begin(), picked.end(), [&](std::size_t a, std::size_t b) {
    return scene.views[a].frame_index < scene.views[b].frame_index;
  });
  for (std::size_t i : picked) r.feed_order.push_back(scene.views[i].view_id);
  return r;
}

Vector mean_token(const Matrix& tokens) { return tokens.colwise().mean().transpose(); }

}  // namespace

SelectionResult select_uniform(const SceneManifest& scene, std::size_t k, std::uint64_t seed) {
  check_k(scene, k);
  std::vector<std::size_t> pool(scene.views.size());
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(k);
  return from_indices(scene, Strategy::Uniform, std::move(pool), std::nullopt);
}

std::uint64_t question_seed(std::uint64_t base_seed, std::string_view question_id) {
  std::uint64_t h = detail::fnv1a(question_id) ^ (base_seed + 0x9e3779b97f4a7c15ull);
  // splitmix64 finalizer
  h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
  h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
  return h ^ (h >> 31);
}

SelectionResult select_evenly_spaced(const SceneManifest& scene, std::size_t k) {
  check_k(scene, k);
  const std::size_t n = scene.views.size();
  std::vector<std::size_t> picked;
  for (std::size_t j = 0; j < k; ++j) picked.push_back(j * n / k);
  return from_indices(scene, Strategy::EvenlySpaced, std::move(picked), std::nullopt);
}

SelectionResult select_retrieval(const SceneManifest& scene, std::size_t k,
                                 const ScoreTable& scores) {
  check_k(scene, k);
  std::vector<double> s;
  for (const auto& v : scene.views) {
    auto it = scores.find(v.view_id);
    if (it == scores.end()) {
      throw Error(ErrorCode::MissingScore,
                  "no retrieval score for view '" + v.view_id + "' of '" + scene.scene_id + "'");
    }
    if (!std::isfinite(it->second)) {
      throw Error(ErrorCode::InvalidArgument, "non-finite score for view '" + v.view_id + "'");
    }
    s.push_back(it->second);
  }
  // Views are stored in frame order, so a stable sort breaks ties by frame index.
  auto order = rank_by_score(s);
  order.resize(k);
  std::vector<double> kept;
  for (std::size_t i : order) kept.push_back(s[i]);
  return from_indices(scene, Strategy::Retrieval, std::move(order), std::move(kept));
}

ScoreTable embedding_similarity(const SceneManifest& scene, const Matrix& question_tokens,
                                const EmbeddingStore& store) {
  store.require_views(scene);
  const Vector q = mean_token(question_tokens);
  ScoreTable out;
  for (const auto& v : scene.views) {
    const Matrix t = store.view_tokens(scene.scene_id, v.view_id);
    if (t.cols() != q.size()) {
      throw Error(ErrorCode::DimensionMismatch, "question and view embeddings differ in width");
    }
    out[v.view_id] = q.dot(mean_token(t));
  }
  return out;
}

RetrievalScores load_retrieval_scores(const std::filesystem::path& path) {
  RetrievalScores out;
  std::size_t line_no = 0;
  for (const auto& row : read_jsonl(path)) {
    ++line_no;
    try {
      auto& table = out[{row.at("scene_id").get<std::string>(),
                         row.at("question_id").get<std::string>()}];
      const auto view = row.at("view_id").get<std::string>();
      if (!table.emplace(view, row.at("score").get<double>()).second) {
        throw Error(ErrorCode::DataError, "duplicate score for view '" + view + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::SchemaError,
                  path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

SelectionResult select_cdviews(const SceneManifest& scene, const Matrix& question_tokens,
                               std::span<const EmbeddingSeq> view_tokens,
                               const SelectorParams& params, const NmsConfig& nms, std::size_t k,
                               Execution exec) {
  if (k != nms.max_views) {
    throw Error(ErrorCode::InvalidArgument, "k = " + std::to_string(k) +
                                                " differs from the NMS budget " +
                                                std::to_string(nms.max_views));
  }
  if (view_tokens.size() != scene.views.size()) {
    throw Error(ErrorCode::LengthMismatch, "embeddings do not cover the scene's views");
  }
  const auto out = score_views(EmbeddingSeq{question_tokens, {}}, view_tokens, params, exec);
  auto result = view_nms(scene.posed_views(), out.scores, nms);
  result.strategy = Strategy::CdViews;
  return result;
}

SelectionResult select_cdviews(const SceneManifest& scene, const std::string& question_id,
                               const EmbeddingStore& store, const SelectorParams& params,
                               const NmsConfig& nms, std::size_t k, Execution exec) {
  store.require_views(scene);
  std::vector<EmbeddingSeq> views;
  views.reserve(scene.views.size());
  for (const auto& v : scene.views) {
    views.push_back({store.view_tokens(scene.scene_id, v.view_id), v.view_id});
  }
  return select_cdviews(scene, store.question_tokens(question_id), views, params, nms, k, exec);
}

nlohmann::json selection_to_json(const SelectionResult& result, const std::string& scene_id,
                                 const std::string& question_id) {
  nlohmann::json doc{{"scene_id", scene_id},
                     {"question_id", question_id},
                     {"strategy", std::string(to_string(result.strategy))},
                     {"view_ids", result.view_ids},
                     {"feed_order", result.feed_order}};
  doc["scores"] = result.scores ? nlohmann::json(*result.scores) : nlohmann::json(nullptr);
  return doc;
}

SelectionResult selection_from_json(const nlohmann::json& doc) {
  try {
    SelectionResult r;
    r.strategy = strategy_from_string(doc.at("strategy").get<std::string>());
    r.view_ids = doc.at("view_ids").get<std::vector<std::string>>();
    r.feed_order = doc.at("feed_order").get<std::vector<std::string>>();
    if (doc.contains("scores") && !doc.at("scores").is_null()) {
      r.scores = doc.at("scores").get<std::vector<double>>();
    }
    std::set<std::string> a(r.view_ids.begin(), r.view_ids.end());
    std::set<std::string> b(r.feed_order.begin(), r.feed_order.end());
    if (a.size() != r.view_ids.size() || a != b) {
      throw Error(ErrorCode::SchemaError, "selection view_ids and feed_order disagree");
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaError, std::string("selection: ") + e.what());
  }
}

}  // namespace cdviews
