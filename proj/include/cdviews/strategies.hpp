#pragma once

// View selection strategies behind one result type. Every strategy returns
// distinct views of the given scene, at most k of them, with feed_order sorted
// by frame index.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cdviews/embeddings.hpp"
#include "cdviews/execution.hpp"
#include "cdviews/nms.hpp"
#include "cdviews/scene.hpp"
#include "cdviews/selection.hpp"
#include "cdviews/selector.hpp"

namespace cdviews {

/// k distinct views drawn uniformly without replacement. Throws KTooLarge if
/// k exceeds the view count, InvalidArgument if k is 0.
SelectionResult select_uniform(const SceneManifest& scene, std::size_t k, std::uint64_t seed);

/// Per-question seed for uniform sampling, so each question draws its own views.
std::uint64_t question_seed(std::uint64_t base_seed, std::string_view question_id);

/// Views at positions floor(j * N / k), j = 0..k-1. Deterministic baseline, not
/// a scored strategy.
SelectionResult select_evenly_spaced(const SceneManifest& scene, std::size_t k);

/// view_id -> similarity.
using ScoreTable = std::map<std::string, double>;

/// Top-k by score, ties by frame index. Throws MissingScore naming the first
/// uncovered view.
SelectionResult select_retrieval(const SceneManifest& scene, std::size_t k,
                                 const ScoreTable& scores);

/// Fallback similarity: dot product of mean question and mean view tokens.
ScoreTable embedding_similarity(const SceneManifest& scene, const Matrix& question_tokens,
                                const EmbeddingStore& store);

/// (scene_id, question_id) -> scores, read from JSONL rows
/// {scene_id, question_id, view_id, score}.
using RetrievalScores = std::map<std::pair<std::string, std::string>, ScoreTable>;
RetrievalScores load_retrieval_scores(const std::filesystem::path& path);

/// Selector scores followed by pose-aware suppression. `view_tokens` is
/// parallel to scene.views. Throws InvalidArgument unless k equals
/// nms.max_views.
SelectionResult select_cdviews(const SceneManifest& scene, const Matrix& question_tokens,
                               std::span<const EmbeddingSeq> view_tokens,
                               const SelectorParams& params, const NmsConfig& nms, std::size_t k,
                               Execution exec = Execution::Parallel);

/// Same, reading embeddings from a store (DataError if any view is missing).
SelectionResult select_cdviews(const SceneManifest& scene, const std::string& question_id,
                               const EmbeddingStore& store, const SelectorParams& params,
                               const NmsConfig& nms, std::size_t k,
                               Execution exec = Execution::Parallel);

/// {scene_id, question_id, strategy, view_ids, scores, feed_order}; scores is
/// null for unscored strategies.
nlohmann::json selection_to_json(const SelectionResult& result, const std::string& scene_id,
                                 const std::string& question_id);
SelectionResult selection_from_json(const nlohmann::json& doc);

}  // namespace cdviews
