#pragma once

// Run configuration for the cdviews CLI: a JSON document merged over built-in
// defaults, with ${VAR} interpolation in string values and command-line flags
// applied last.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace cdviews::cli {

using nlohmann::json;

json default_config();

/// Replaces ${NAME} in every string value with the environment variable's
/// value. Throws ConfigError for an unset variable.
json interpolate_env(const json& doc);

/// Recursively overlays `patch` onto `base`; objects merge, everything else replaces.
void merge_into(json& base, const json& patch);

/// Defaults, then the file (if given), then interpolation.
json load_config(const std::filesystem::path& file);

struct Diagnostic {
  enum class Severity { Error, Warning } severity = Severity::Error;
  std::string field;  // JSON pointer
  std::string message;
};

/// Schema violations (unknown keys, wrong types, out-of-range values),
/// dangling input paths and cross-field rules.
std::vector<Diagnostic> validate_config(const json& config);

std::string format(const Diagnostic& d);

/// Throws ConfigError unless every named /paths entry is set and exists.
void require_paths(const json& config, const std::vector<std::string>& names);
std::filesystem::path path_of(const json& config, const std::string& name);
/// The output path; throws ConfigError when unset.
std::filesystem::path output_path(const json& config);

/// {tool, version, command, config}. No timestamps, so reruns are byte-identical.
json provenance(const std::string& command, const json& config);

}  // namespace cdviews::cli
