#include "cdviews/scene.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <Eigen/LU>

#include "cdviews/binary_io.hpp"
#include "cdviews/error.hpp"

namespace cdviews {

using nlohmann::json;

std::optional<std::size_t> SceneManifest::find(std::string_view view_id) const {
  for (std::size_t i = 0; i < views.size(); ++i) {
    if (views[i].view_id == view_id) return i;
  }
  return std::nullopt;
}

std::vector<PosedView> SceneManifest::posed_views() const {
  std::vector<PosedView> out;
  out.reserve(views.size());
  for (const auto& v : views) out.push_back({v.view_id, v.pose});
  return out;
}

bool SceneManifest::operator==(const SceneManifest& other) const {
  if (scene_id != other.scene_id || views.size() != other.views.size()) return false;
  for (std::size_t i = 0; i < views.size(); ++i) {
    const auto& a = views[i];
    const auto& b = other.views[i];
    if (a.view_id != b.view_id || a.frame_index != b.frame_index || a.image_path != b.image_path ||
        a.pose.to_extrinsic() != b.pose.to_extrinsic()) {
      return false;
    }
  }
  return true;
}

namespace {

[[noreturn]] void schema_error(const std::string& path, const std::string& what) {
  throw Error(ErrorCode::SchemaError, path + ": " + what);
}

const json& require(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object() || !obj.contains(key)) schema_error(path + "." + key, "missing");
  return obj.at(key);
}

std::string require_string(const json& obj, const std::string& key, const std::string& path) {
  const auto& v = require(obj, key, path);
  if (!v.is_string() || v.get<std::string>().empty()) {
    schema_error(path + "." + key, "expected non-empty string");
  }
  return v.get<std::string>();
}

}  // namespace

SceneManifest manifest_from_json(const json& doc) {
  const auto& version = require(doc, "schema_version", "$");
  if (!version.is_number_integer() || version.get<int>() != kManifestSchemaVersion) {
    schema_error("$.schema_version", "unsupported version");
  }
  SceneManifest m;
  m.scene_id = require_string(doc, "scene_id", "$");

  bool world_to_camera = false;
  if (doc.contains("extrinsic_convention")) {
    const auto& conv = doc.at("extrinsic_convention");
    if (conv == "world_to_camera") {
      world_to_camera = true;
    } else if (conv != "camera_to_world") {
      schema_error("$.extrinsic_convention", "expected camera_to_world or world_to_camera");
    }
  }

  const auto& views = require(doc, "views", "$");
  if (!views.is_array()) schema_error("$.views", "expected array");
  std::set<std::string> seen;
  for (std::size_t i = 0; i < views.size(); ++i) {
    const std::string path = "$.views[" + std::to_string(i) + "]";
    const auto& v = views[i];
    ViewRecord rec;
    rec.view_id = require_string(v, "view_id", path);
    if (!seen.insert(rec.view_id).second) {
      schema_error(path + ".view_id", "duplicate view_id '" + rec.view_id + "'");
    }
    const auto& frame = require(v, "frame_index", path);
    if (!frame.is_number_integer()) schema_error(path + ".frame_index", "expected integer");
    rec.frame_index = frame.get<std::int64_t>();
    if (!m.views.empty() && rec.frame_index <= m.views.back().frame_index) {
      schema_error(path + ".frame_index", "frame indices must be strictly increasing");
    }
    if (v.contains("image_path") && !v.at("image_path").is_null()) {
      if (!v.at("image_path").is_string()) schema_error(path + ".image_path", "expected string");
      rec.image_path = v.at("image_path").get<std::string>();
    }
    const auto& ext = require(v, "extrinsic", path);
    if (!ext.is_array() || ext.size() != 16) schema_error(path + ".extrinsic", "expected 16 numbers");
    std::array<double, 16> mat{};
    for (std::size_t k = 0; k < 16; ++k) {
      if (!ext[k].is_number()) schema_error(path + ".extrinsic", "expected 16 numbers");
      mat[k] = ext[k].get<double>();
      if (!std::isfinite(mat[k])) schema_error(path + ".extrinsic", "non-finite entry");
    }
    if (std::abs(mat[12]) > 1e-9 || std::abs(mat[13]) > 1e-9 || std::abs(mat[14]) > 1e-9 ||
        std::abs(mat[15] - 1.0) > 1e-9) {
      schema_error(path + ".extrinsic", "last row must be [0, 0, 0, 1]");
    }
    rec.pose = CameraPose::from_extrinsic(mat);
    const double err = orthonormality_error(rec.pose.rotation);
    if (err > kRotationTolerance || rec.pose.rotation.determinant() < 0.0) {
      std::ostringstream os;
      os << "view '" << rec.view_id << "' rotation is not orthonormal (max error " << err << ")";
      throw Error(ErrorCode::NonOrthonormalExtrinsic, os.str());
    }
    if (world_to_camera) rec.pose = rec.pose.inverse();
    m.views.push_back(std::move(rec));
  }
  if (m.views.empty()) schema_error("$.views", "scene has no views");
  return m;
}

json manifest_to_json(const SceneManifest& m) {
  json views = json::array();
  for (const auto& v : m.views) {
    json row = {{"view_id", v.view_id},
                {"frame_index", v.frame_index},
                {"extrinsic", v.pose.to_extrinsic()}};
    if (v.image_path) row["image_path"] = *v.image_path;
    views.push_back(std::move(row));
  }
  return {{"schema_version", kManifestSchemaVersion},
          {"scene_id", m.scene_id},
          {"extrinsic_convention", "camera_to_world"},
          {"views", std::move(views)}};
}

SceneManifest load_manifest(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::SchemaError, path.string() + ": " + e.what());
  }
  return manifest_from_json(doc);
}

void save_manifest(const SceneManifest& manifest, const std::filesystem::path& path) {
  write_file_atomic(path, manifest_to_json(manifest).dump(2) + "\n");
}

QAInstance qa_from_json(const json& line) {
  QAInstance qa;
  qa.question_id = require_string(line, "question_id", "$");
  qa.scene_id = require_string(line, "scene_id", "$");
  qa.question = require_string(line, "question", "$");
  const auto& answers = require(line, "answers", "$");
  if (!answers.is_array() || answers.empty()) schema_error("$.answers", "expected non-empty array");
  for (const auto& a : answers) {
    if (!a.is_string() || a.get<std::string>().empty()) {
      schema_error("$.answers", "answers must be non-empty strings");
    }
    qa.answers.push_back(a.get<std::string>());
  }
  return qa;
}

json qa_to_json(const QAInstance& qa) {
  return {{"question_id", qa.question_id},
          {"scene_id", qa.scene_id},
          {"question", qa.question},
          {"answers", qa.answers}};
}

bool is_provenance_row(const json& row) {
  return row.is_object() && row.size() == 1 && row.contains("provenance");
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "'");
  std::vector<json> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto row = json::parse(line);
      if (!is_provenance_row(row)) rows.push_back(std::move(row));
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::SchemaError,
                  path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

std::string to_jsonl(const std::vector<json>& rows) {
  std::string out;
  for (const auto& r : rows) {
    out += r.dump();
    out += '\n';
  }
  return out;
}

std::vector<QAInstance> load_qa(const std::filesystem::path& path) {
  std::vector<QAInstance> out;
  const auto rows = read_jsonl(path);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    try {
      out.push_back(qa_from_json(rows[i]));
    } catch (const Error& e) {
      throw Error(ErrorCode::SchemaError, path.string() + " row " + std::to_string(i + 1) + ": " +
                                              e.what());
    }
  }
  return out;
}

void save_qa(const std::vector<QAInstance>& qa, const std::filesystem::path& path) {
  std::vector<json> rows;
  for (const auto& q : qa) rows.push_back(qa_to_json(q));
  write_file_atomic(path, to_jsonl(rows));
}

}  // namespace cdviews
