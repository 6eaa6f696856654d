#include "cdviews/embeddings.hpp"

#include <array>

#include <json.hpp>

#include "cdviews/binary_io.hpp"
#include "cdviews/error.hpp"

namespace cdviews {

namespace {

constexpr std::array<char, 4> kMagic{'V', 'E', 'M', 'B'};
constexpr std::uint16_t kVersion = 1;
constexpr std::uint8_t kLittleEndian = 1;

}  // namespace

void TokenTable::insert(const std::string& id, MatrixF tokens) {
  if (tokens.rows() != tokens_ || tokens.cols() != d_in_) {
    throw Error(ErrorCode::DimensionMismatch, "entry '" + id + "' does not match table dims");
  }
  if (!entries_.emplace(id, std::move(tokens)).second) {
    throw Error(ErrorCode::DataError, "duplicate embedding id '" + id + "'");
  }
}

Matrix TokenTable::get(const std::string& id) const {
  auto it = entries_.find(id);
  if (it == entries_.end()) throw Error(ErrorCode::DataError, "no embedding for '" + id + "'");
  return it->second.cast<double>();
}

std::string TokenTable::serialize() const {
  ByteWriter w;
  w.put_bytes(std::string_view(kMagic.data(), kMagic.size()));
  w.put(kVersion);
  w.put(kLittleEndian);
  w.put(d_in_);
  w.put(tokens_);
  w.put(static_cast<std::uint32_t>(entries_.size()));
  for (const auto& [id, m] : entries_) {
    w.put_string(id);
    w.put_bytes(std::string_view(reinterpret_cast<const char*>(m.data()),
                                 static_cast<std::size_t>(m.size()) * sizeof(float)));
  }
  w.seal();
  return w.release();
}

TokenTable TokenTable::deserialize(std::string_view bytes) {
  ByteReader header(bytes);
  if (header.get_bytes(4) != std::string_view(kMagic.data(), kMagic.size())) {
    throw Error(ErrorCode::FormatVersionMismatch, "bad magic, not a .vemb file");
  }
  if (header.get<std::uint16_t>() != kVersion) {
    throw Error(ErrorCode::FormatVersionMismatch, "unsupported .vemb version");
  }
  if (header.get<std::uint8_t>() != kLittleEndian) {
    throw Error(ErrorCode::FormatVersionMismatch, ".vemb file is not little-endian");
  }
  ByteReader r(verify_sealed(bytes));
  r.get_bytes(4 + sizeof(std::uint16_t) + sizeof(std::uint8_t));
  // Separate statements: argument evaluation order is unspecified.
  const auto d_in = r.get<std::uint32_t>();
  const auto tokens = r.get<std::uint32_t>();
  TokenTable t(d_in, tokens);
  const auto count = r.get<std::uint32_t>();
  const std::size_t n_floats = std::size_t{t.d_in_} * t.tokens_;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string id = r.get_string();
    const auto raw = r.get_bytes(n_floats * sizeof(float));
    MatrixF m(t.tokens_, t.d_in_);
    std::memcpy(m.data(), raw.data(), raw.size());
    t.insert(id, std::move(m));
  }
  if (r.remaining() != 0) throw Error(ErrorCode::CorruptChecksum, "trailing bytes in .vemb");
  return t;
}

std::string EmbeddingStore::view_key(std::string_view scene_id, std::string_view view_id) {
  std::string key(scene_id);
  key += '/';
  key += view_id;
  return key;
}

void EmbeddingStore::require_views(const SceneManifest& manifest) const {
  std::string missing;
  std::size_t n_missing = 0;
  for (const auto& v : manifest.views) {
    const auto key = view_key(manifest.scene_id, v.view_id);
    if (!views.contains(key)) {
      if (n_missing++ < 5) missing += (missing.empty() ? "" : ", ") + key;
    }
  }
  if (n_missing) {
    throw Error(ErrorCode::DataError, std::to_string(n_missing) +
                                          " view(s) lack embeddings: " + missing +
                                          (n_missing > 5 ? ", ..." : ""));
  }
}

Matrix EmbeddingStore::view_tokens(std::string_view scene_id, std::string_view view_id) const {
  return views.get(view_key(scene_id, view_id));
}

Matrix EmbeddingStore::question_tokens(const std::string& question_id) const {
  return questions.get(question_id);
}

void save_store(const EmbeddingStore& store, const std::filesystem::path& dir,
                const nlohmann::json& provenance) {
  write_file_atomic(dir / "views.vemb", store.views.serialize());
  write_file_atomic(dir / "questions.vemb", store.questions.serialize());
  nlohmann::json index = {{"format", "vemb-index"},
                          {"version", 1},
                          {"views", "views.vemb"},
                          {"questions", "questions.vemb"},
                          {"d_in", store.views.d_in()},
                          {"tokens_per_view", store.views.tokens()},
                          {"tokens_per_question", store.questions.tokens()},
                          {"view_count", store.views.size()},
                          {"question_count", store.questions.size()}};
  if (!provenance.is_null()) index["provenance"] = provenance;
  write_file_atomic(dir / "index.json", index.dump(2) + "\n");
}

EmbeddingStore load_store(const std::filesystem::path& index_path) {
  nlohmann::json index;
  try {
    index = nlohmann::json::parse(read_file(index_path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaError, index_path.string() + ": " + e.what());
  }
  if (index.value("format", "") != "vemb-index" || index.value("version", 0) != 1) {
    throw Error(ErrorCode::FormatVersionMismatch, "unrecognized embedding index");
  }
  const auto dir = index_path.parent_path();
  EmbeddingStore store;
  store.views = TokenTable::deserialize(read_file(dir / index.at("views").get<std::string>()));
  store.questions =
      TokenTable::deserialize(read_file(dir / index.at("questions").get<std::string>()));
  if (store.views.d_in() != store.questions.d_in()) {
    throw Error(ErrorCode::DataError, "view and question tables disagree on d_in");
  }
  return store;
}

}  // namespace cdviews
