#pragma once

// Scene manifests and QA files.
//
// Manifest JSON (schema_version 1):
//   { "schema_version": 1, "scene_id": "...",
//     "extrinsic_convention": "camera_to_world" | "world_to_camera",
//     "views": [ { "view_id": "...", "frame_index": 0, "image_path": "...",
//                  "extrinsic": [16 numbers, row-major 4x4] } ] }
// world_to_camera extrinsics are inverted on load; saved manifests are always
// camera_to_world.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cdviews/nms.hpp"
#include "cdviews/pose.hpp"

namespace cdviews {

inline constexpr int kManifestSchemaVersion = 1;

struct ViewRecord {
  std::string view_id;
  std::int64_t frame_index = 0;
  std::optional<std::string> image_path;
  CameraPose pose;
};

struct SceneManifest {
  std::string scene_id;
  std::vector<ViewRecord> views;

  std::optional<std::size_t> find(std::string_view view_id) const;
  std::vector<PosedView> posed_views() const;
  bool operator==(const SceneManifest& other) const;
};

/// Throws SchemaError (message carries the JSON path) or
/// NonOrthonormalExtrinsic (message carries the view_id).
SceneManifest manifest_from_json(const nlohmann::json& doc);
nlohmann::json manifest_to_json(const SceneManifest& manifest);

SceneManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const SceneManifest& manifest, const std::filesystem::path& path);

struct QAInstance {
  std::string question_id;
  std::string scene_id;
  std::string question;
  std::vector<std::string> answers;
};

QAInstance qa_from_json(const nlohmann::json& line);
nlohmann::json qa_to_json(const QAInstance& qa);

std::vector<QAInstance> load_qa(const std::filesystem::path& path);
void save_qa(const std::vector<QAInstance>& qa, const std::filesystem::path& path);

/// A {"provenance": ...} header line. Readers skip these.
bool is_provenance_row(const nlohmann::json& row);

/// Reads a JSON Lines file, skipping blank lines and provenance headers. Parse failures raise
/// SchemaError naming the line number.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);
std::string to_jsonl(const std::vector<nlohmann::json>& rows);

}  // namespace cdviews
