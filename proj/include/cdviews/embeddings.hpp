#pragma once

// Token embedding tables.
//
// A `.vemb` file holds one table: magic "VEMB", u16 version = 1, u8
// little-endian flag, u32 d_in, u32 tokens per entry, u32 entry count, then per
// entry a u32-length-prefixed id followed by a row-major f32 (tokens x d_in)
// matrix, and a trailing CRC-32C. An embedding store pairs a view table with a
// question table through a JSON index file.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "cdviews/scene.hpp"
#include "cdviews/selector.hpp"

namespace cdviews {

using MatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class TokenTable {
 public:
  TokenTable() = default;
  TokenTable(std::uint32_t d_in, std::uint32_t tokens) : d_in_(d_in), tokens_(tokens) {}

  std::uint32_t d_in() const noexcept { return d_in_; }
  std::uint32_t tokens() const noexcept { return tokens_; }
  std::size_t size() const noexcept { return entries_.size(); }

  /// Throws DimensionMismatch on shape mismatch, DataError on duplicate id.
  void insert(const std::string& id, MatrixF tokens);
  bool contains(const std::string& id) const { return entries_.count(id) != 0; }
  /// Widened to double. Throws DataError if absent.
  Matrix get(const std::string& id) const;
  const std::map<std::string, MatrixF>& entries() const noexcept { return entries_; }

  std::string serialize() const;
  static TokenTable deserialize(std::string_view bytes);

 private:
  std::uint32_t d_in_ = 0;
  std::uint32_t tokens_ = 0;
  std::map<std::string, MatrixF> entries_;
};

/// Store keys views as "<scene_id>/<view_id>" and questions by question_id.
struct EmbeddingStore {
  TokenTable views;
  TokenTable questions;

  static std::string view_key(std::string_view scene_id, std::string_view view_id);

  /// Every manifest view must be present, else DataError listing the gaps.
  void require_views(const SceneManifest& manifest) const;
  Matrix view_tokens(std::string_view scene_id, std::string_view view_id) const;
  Matrix question_tokens(const std::string& question_id) const;
};

/// Writes `<dir>/views.vemb`, `<dir>/questions.vemb` and `<dir>/index.json`;
/// a non-null `provenance` is recorded in the index.
void save_store(const EmbeddingStore& store, const std::filesystem::path& dir,
                const nlohmann::json& provenance = nullptr);
/// Loads from an index file; throws FormatVersionMismatch/CorruptChecksum/DataError.
EmbeddingStore load_store(const std::filesystem::path& index_path);

}  // namespace cdviews
