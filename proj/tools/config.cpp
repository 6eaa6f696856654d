#include "config.hpp"

#include <cstdlib>
#include <fstream>
#include <optional>
#include <set>

#include "cdviews/binary_io.hpp"
#include "cdviews/error.hpp"

#ifndef CDVIEWS_VERSION
#define CDVIEWS_VERSION "0.0.0"
#endif

namespace cdviews::cli {

namespace {

// d_in recorded in an embedding store index; accepts the store directory or its index.json.
std::optional<std::size_t> stored_d_in(const std::string& path) {
  if (path.empty()) return std::nullopt;
  std::filesystem::path index(path);
  if (std::filesystem::is_directory(index)) index /= "index.json";
  std::ifstream in(index);
  if (!in) return std::nullopt;
  const auto j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.contains("d_in") || !j.at("d_in").is_number_unsigned()) return std::nullopt;
  return j.at("d_in").get<std::size_t>();
}

// Paths that must exist whenever they are set.
const std::set<std::string> kInputPaths{"manifests", "qa",    "gold",  "embeddings",
                                        "truth",     "templates", "scores", "holdout_labels"};
// Paths some subcommands produce; a missing one only warns.
const std::set<std::string> kProducedPaths{"labels", "params", "selections", "answers"};

void check_types(const json& value, const json& schema, const std::string& ptr,
                 std::vector<Diagnostic>& out) {
  if (schema.is_object()) {
    if (!value.is_object()) {
      out.push_back({Diagnostic::Severity::Error, ptr, "expected an object"});
      return;
    }
    for (const auto& [key, v] : value.items()) {
      if (!schema.contains(key)) {
        // train.model may be a preset name or a dims object; checked separately.
        out.push_back({Diagnostic::Severity::Error, ptr + "/" + key, "unknown key"});
        continue;
      }
      if (ptr == "/train" && key == "model") continue;
      check_types(v, schema.at(key), ptr + "/" + key, out);
    }
    return;
  }
  auto fail = [&](const char* what) {
    out.push_back({Diagnostic::Severity::Error, ptr, std::string("expected ") + what});
  };
  if (schema.is_null()) {
    if (!value.is_null() && !value.is_number_unsigned()) fail("null or a non-negative integer");
  } else if (schema.is_string()) {
    if (!value.is_string()) fail("a string");
  } else if (schema.is_boolean()) {
    if (!value.is_boolean()) fail("a boolean");
  } else if (schema.is_number_unsigned()) {
    if (!value.is_number_unsigned()) fail("a non-negative integer");
  } else if (schema.is_number()) {
    if (!value.is_number()) fail("a number");
  } else if (schema.is_array()) {
    if (!value.is_array()) {
      fail("an array");
    } else {
      for (std::size_t i = 0; i < value.size(); ++i) {
        if (!schema.empty()) check_types(value[i], schema.at(0), ptr + "/" + std::to_string(i), out);
      }
    }
  }
}

template <class T>
T get_or(const json& doc, const char* ptr, T fallback) {
  const auto p = json::json_pointer(ptr);
  if (!doc.contains(p)) return fallback;
  try {
    return doc.at(p).get<T>();
  } catch (const json::exception&) {
    return fallback;
  }
}

}  // namespace

json default_config() {
  return json::parse(R"({
    "output": "",
    "execution": "parallel",
    "paths": {
      "manifests": "", "qa": "", "gold": "", "embeddings": "", "truth": "",
      "labels": "", "holdout_labels": "", "params": "", "selections": "", "answers": "",
      "scores": "", "templates": "", "cache_root": ""
    },
    "strategy": {
      "name": "cdviews", "k": 9, "threshold": 0.5, "seed": 0,
      "position_weight": 1.0, "orientation_weight": 1.0
    },
    "gateway": {
      "backend": "oracle", "base_url": "", "token_env": "CDVIEWS_API_KEY", "mock_script": "",
      "model": "default", "requests_per_minute": 0.0, "max_attempts": 5, "parallelism": 4,
      "timeout_seconds": 120.0, "max_images": null
    },
    "annotate": { "views_per_scene": 64, "direct": false },
    "train": {
      "model": "desk", "init_seed": 42, "epochs": 50, "learning_rate": 5e-5, "batch_size": 8,
      "pos_per_instance": 5, "neg_per_instance": 5, "seed": 0
    },
    "synth": {
      "scenes": 20, "views": 64, "objects": 8, "questions": 8, "trajectory": "orbit",
      "orbit_radius_fraction": 0.35, "seed": 0, "d_in": 64, "tokens_per_view": 4,
      "tokens_per_question": 4, "signal_strength": 1.0, "shared_offset": 0.0
    },
    "gradcheck": { "epsilon": 1e-4, "samples_per_tensor": 32, "tolerance": 1e-4, "seed": 0 },
    "ablate": {
      "strategies": ["uniform", "retrieval", "cdviews"],
      "k": [1, 3, 5, 9, 13, 17],
      "thresholds": [0.0, 0.25, 0.5, 0.75, 1.0]
    }
  })");
}

json interpolate_env(const json& doc) {
  if (doc.is_object()) {
    json out = json::object();
    for (const auto& [k, v] : doc.items()) out[k] = interpolate_env(v);
    return out;
  }
  if (doc.is_array()) {
    json out = json::array();
    for (const auto& v : doc) out.push_back(interpolate_env(v));
    return out;
  }
  if (!doc.is_string()) return doc;
  const auto& s = doc.get_ref<const std::string&>();
  std::string out;
  for (std::size_t i = 0; i < s.size();) {
    if (s.compare(i, 2, "${") == 0) {
      const auto close = s.find('}', i + 2);
      if (close == std::string::npos) {
        throw Error(ErrorCode::ConfigError, "unterminated ${ in '" + s + "'");
      }
      const std::string name = s.substr(i + 2, close - i - 2);
      const char* value = std::getenv(name.c_str());
      if (!value) throw Error(ErrorCode::ConfigError, "environment variable " + name + " is not set");
      out += value;
      i = close + 1;
    } else {
      out += s[i++];
    }
  }
  return out;
}

void merge_into(json& base, const json& patch) {
  if (!base.is_object() || !patch.is_object()) {
    base = patch;
    return;
  }
  for (const auto& [k, v] : patch.items()) {
    if (base.contains(k) && base[k].is_object() && v.is_object()) {
      merge_into(base[k], v);
    } else {
      base[k] = v;
    }
  }
}

json load_config(const std::filesystem::path& file) {
  json config = default_config();
  if (!file.empty()) {
    json doc;
    try {
      doc = json::parse(read_file(file));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ConfigError, file.string() + ": " + e.what());
    } catch (const Error& e) {
      throw Error(ErrorCode::ConfigError, e.what());
    }
    if (!doc.is_object()) throw Error(ErrorCode::ConfigError, file.string() + ": not a JSON object");
    merge_into(config, doc);
  }
  return interpolate_env(config);
}

std::vector<Diagnostic> validate_config(const json& config) {
  std::vector<Diagnostic> out;
  const json schema = default_config();
  check_types(config, schema, "", out);
  if (!out.empty()) return out;  // value rules below assume well-typed input

  auto error = [&](std::string field, std::string message) {
    out.push_back({Diagnostic::Severity::Error, std::move(field), std::move(message)});
  };
  auto warn = [&](std::string field, std::string message) {
    out.push_back({Diagnostic::Severity::Warning, std::move(field), std::move(message)});
  };

  for (const auto& [name, value] : config.at("paths").items()) {
    const auto p = value.get<std::string>();
    if (p.empty()) continue;
    if (kInputPaths.count(name) && !std::filesystem::exists(p)) {
      error("/paths/" + name, "path does not exist: " + p);
    } else if (kProducedPaths.count(name) && !std::filesystem::exists(p)) {
      warn("/paths/" + name, "path does not exist yet: " + p);
    }
  }
  const auto script = config.at("/gateway/mock_script"_json_pointer).get<std::string>();
  if (!script.empty() && !std::filesystem::exists(script)) {
    error("/gateway/mock_script", "path does not exist: " + script);
  }

  const auto exec = config.at("execution").get<std::string>();
  if (exec != "parallel" && exec != "serial") error("/execution", "must be parallel or serial");

  const auto strategy = get_or<std::string>(config, "/strategy/name", "");
  if (strategy != "uniform" && strategy != "evenly_spaced" && strategy != "retrieval" &&
      strategy != "cdviews") {
    error("/strategy/name", "unknown strategy '" + strategy + "'");
  }
  const auto k = get_or<std::size_t>(config, "/strategy/k", 0);
  if (k == 0) error("/strategy/k", "must be >= 1");
  if (get_or<double>(config, "/strategy/threshold", 0.0) < 0.0) {
    error("/strategy/threshold", "must be >= 0");
  }
  const auto views = get_or<std::size_t>(config, "/synth/views", 0);
  if (k > views) {
    warn("/strategy/k", "k = " + std::to_string(k) + " exceeds synth.views = " +
                            std::to_string(views) + "; selection would fail with KTooLarge");
  }
  if (views < 4) error("/synth/views", "must be >= 4");
  const auto traj = get_or<std::string>(config, "/synth/trajectory", "");
  if (traj != "orbit" && traj != "walk") error("/synth/trajectory", "must be orbit or walk");
  if (get_or<double>(config, "/synth/signal_strength", 0.0) < 0.0) {
    error("/synth/signal_strength", "must be >= 0");
  }

  const auto backend = get_or<std::string>(config, "/gateway/backend", "");
  if (backend != "http" && backend != "mock" && backend != "oracle") {
    error("/gateway/backend", "must be http, mock or oracle");
  }
  if (backend == "http" && get_or<std::string>(config, "/gateway/base_url", "").empty()) {
    error("/gateway/base_url", "required by the http backend");
  }
  if (backend == "mock" && script.empty()) error("/gateway/mock_script", "required by the mock backend");
  if (get_or<std::size_t>(config, "/gateway/max_attempts", 0) == 0) {
    error("/gateway/max_attempts", "must be >= 1");
  }
  if (get_or<std::size_t>(config, "/gateway/parallelism", 0) == 0) {
    error("/gateway/parallelism", "must be >= 1");
  }
  const auto& max_images = config.at("/gateway/max_images"_json_pointer);
  if (max_images.is_number_unsigned() && k > max_images.get<std::size_t>()) {
    warn("/strategy/k", "k exceeds gateway.max_images; answering would fail with TooManyImages");
  }

  const auto& model = config.at("/train/model"_json_pointer);
  if (model.is_string()) {
    const auto name = model.get<std::string>();
    if (name != "desk" && name != "paper") error("/train/model", "preset must be desk or paper");
  } else if (model.is_object()) {
    for (const char* key : {"d_in", "d_model", "n_heads", "d_ff", "n_layers"}) {
      if (!model.contains(key) || !model.at(key).is_number_unsigned() ||
          model.at(key).get<std::size_t>() == 0) {
        error(std::string("/train/model/") + key, "must be a positive integer");
      }
    }
    const auto d_model = get_or<std::size_t>(model, "/d_model", 0);
    const auto heads = get_or<std::size_t>(model, "/n_heads", 0);
    if (d_model > 0 && heads > 0 && d_model % heads != 0) {
      error("/train/model/n_heads", "must divide d_model");
    }
    if (const auto store = stored_d_in(get_or<std::string>(config, "/paths/embeddings", ""));
        store && model.contains("d_in") && model.at("d_in").is_number_unsigned() &&
        model.at("d_in").get<std::size_t>() != *store) {
      warn("/train/model/d_in", "differs from the embedding store's d_in = " + std::to_string(*store));
    }
  } else {
    error("/train/model", "expected a preset name or a dims object");
  }
  if (get_or<std::size_t>(config, "/train/pos_per_instance", 0) +
          get_or<std::size_t>(config, "/train/neg_per_instance", 0) == 0) {
    error("/train/pos_per_instance", "a batch needs at least one positive or negative view");
  }
  if (!(get_or<double>(config, "/train/learning_rate", 0.0) > 0.0)) {
    error("/train/learning_rate", "must be > 0");
  }
  return out;
}

std::string format(const Diagnostic& d) {
  return std::string(d.severity == Diagnostic::Severity::Error ? "error" : "warning") + ": " +
         d.field + ": " + d.message;
}

std::filesystem::path path_of(const json& config, const std::string& name) {
  return config.at("paths").value(name, "");
}

void require_paths(const json& config, const std::vector<std::string>& names) {
  std::string problems;
  for (const auto& name : names) {
    const auto p = path_of(config, name);
    if (p.empty()) {
      problems += "\n  /paths/" + name + " is not set";
    } else if (!std::filesystem::exists(p)) {
      problems += "\n  /paths/" + name + " does not exist: " + p.string();
    }
  }
  if (!problems.empty()) throw Error(ErrorCode::ConfigError, "missing inputs:" + problems);
}

std::filesystem::path output_path(const json& config) {
  const auto out = config.value("output", "");
  if (out.empty()) throw Error(ErrorCode::ConfigError, "no output path (--out)");
  return out;
}

json provenance(const std::string& command, const json& config) {
  return {{"tool", "cdviews"}, {"version", CDVIEWS_VERSION}, {"command", command}, {"config", config}};
}

}  // namespace cdviews::cli
