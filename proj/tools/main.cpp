#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cdviews/error.hpp"
#include "commands.hpp"
#include "config.hpp"

using cdviews::cli::json;

namespace {

// Flag name -> JSON pointer into the config. Values are parsed as JSON unless the
// default at that pointer is a string.
const std::vector<std::pair<std::string, std::string>> kFlags{
    {"out", "/output"},
    {"manifests", "/paths/manifests"},
    {"qa", "/paths/qa"},
    {"gold", "/paths/gold"},
    {"embeddings", "/paths/embeddings"},
    {"truth", "/paths/truth"},
    {"labels", "/paths/labels"},
    {"holdout-labels", "/paths/holdout_labels"},
    {"params", "/paths/params"},
    {"selections", "/paths/selections"},
    {"answers", "/paths/answers"},
    {"scores", "/paths/scores"},
    {"template-dir", "/paths/templates"},
    {"cache-dir", "/paths/cache_root"},
    {"execution", "/execution"},
    {"strategy", "/strategy/name"},
    {"k", "/strategy/k"},
    {"threshold", "/strategy/threshold"},
    {"seed", "/strategy/seed"},
    {"backend", "/gateway/backend"},
    {"base-url", "/gateway/base_url"},
    {"token-env", "/gateway/token_env"},
    {"mock-script", "/gateway/mock_script"},
    {"model", "/gateway/model"},
    {"rpm", "/gateway/requests_per_minute"},
    {"max-attempts", "/gateway/max_attempts"},
    {"parallelism", "/gateway/parallelism"},
    {"max-images", "/gateway/max_images"},
    {"views-per-scene", "/annotate/views_per_scene"},
    {"epochs", "/train/epochs"},
    {"lr", "/train/learning_rate"},
    {"batch-size", "/train/batch_size"},
    {"selector", "/train/model"},
    {"scenes", "/synth/scenes"},
    {"views", "/synth/views"},
    {"questions", "/synth/questions"},
    {"trajectory", "/synth/trajectory"},
    {"synth-seed", "/synth/seed"},
    {"d-in", "/synth/d_in"},
    {"epsilon", "/gradcheck/epsilon"},
    {"tolerance", "/gradcheck/tolerance"},
};

json parse_flag(const std::string& flag, const std::string& pointer, const std::string& value) {
  const json defaults = cdviews::cli::default_config();
  const json::json_pointer ptr(pointer);
  // String settings take the text verbatim, except that /train/model also accepts a dims object.
  if (defaults.contains(ptr) && defaults.at(ptr).is_string() && !value.starts_with('{')) return value;
  try {
    return json::parse(value);
  } catch (const json::exception&) {
    // Unquoted words such as --selector desk stay strings.
    if (defaults.contains(ptr) && defaults.at(ptr).is_number()) {
      throw cdviews::Error(cdviews::ErrorCode::ConfigError, "--" + flag + ": not a number: " + value);
    }
    return value;
  }
}

struct Invocation {
  std::string config_file;
  std::map<std::string, std::string> flags;
  std::vector<std::string> sets;
  bool serial = false;
  bool direct = false;
};

void add_common(CLI::App* sub, Invocation& inv) {
  sub->add_option("-c,--config", inv.config_file, "JSON run configuration");
  for (const auto& [flag, pointer] : kFlags) {
    sub->add_option_function<std::string>(
        "--" + flag, [&inv, flag = flag](const std::string& v) { inv.flags[flag] = v; },
        "sets " + pointer);
  }
  sub->add_option("--set", inv.sets, "POINTER=VALUE override, e.g. /strategy/k=5");
  sub->add_flag("--serial", inv.serial, "use the serial reference kernels");
  sub->add_flag("--direct", inv.direct, "annotate without captions");
}

json resolve(const Invocation& inv) {
  json config = cdviews::cli::load_config(inv.config_file);
  for (const auto& [flag, pointer] : kFlags) {
    auto it = inv.flags.find(flag);
    if (it != inv.flags.end()) config[json::json_pointer(pointer)] = parse_flag(flag, pointer, it->second);
  }
  for (const auto& s : inv.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || s.empty() || s[0] != '/') {
      throw cdviews::Error(cdviews::ErrorCode::ConfigError, "--set expects /pointer=value, got '" + s + "'");
    }
    const auto pointer = s.substr(0, eq);
    config[json::json_pointer(pointer)] = parse_flag("set", pointer, s.substr(eq + 1));
  }
  if (inv.serial) config["execution"] = "serial";
  if (inv.direct) config["annotate"]["direct"] = true;
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"View selection toolkit for zero-shot 3D question answering"};
  app.require_subcommand(1);
  app.set_version_flag("--version", CDVIEWS_VERSION);

  using Runner = int (*)(const json&);
  const std::vector<std::tuple<std::string, std::string, Runner>> commands{
      {"synth", "generate a synthetic dataset with ground truth", cdviews::cli::run_synth},
      {"annotate", "label views with the vision-language model", cdviews::cli::run_annotate},
      {"train", "train the view selector on labeled views", cdviews::cli::run_train},
      {"select", "pick views for every question", cdviews::cli::run_select},
      {"answer", "answer questions from selected views", cdviews::cli::run_answer},
      {"eval", "score answers against gold", cdviews::cli::run_eval},
      {"nms", "run pose-aware suppression on one scene's scores", cdviews::cli::run_nms},
      {"gradcheck", "compare analytic and numeric selector gradients", cdviews::cli::run_gradcheck},
      {"ablate", "sweep strategies, k and thresholds", cdviews::cli::run_ablate},
      {"validate", "check a configuration", cdviews::cli::run_validate},
  };
  Invocation inv;
  Runner chosen = nullptr;
  std::string chosen_name;
  for (const auto& [name, help, runner] : commands) {
    auto* sub = app.add_subcommand(name, help);
    add_common(sub, inv);
    sub->callback([&chosen, &chosen_name, name = name, runner = runner] {
      chosen = runner;
      chosen_name = name;
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const json config = resolve(inv);
    if (chosen_name != "validate") {
      // Refuse to start on a broken config; warnings are printed and ignored.
      bool broken = false;
      for (const auto& d : cdviews::cli::validate_config(config)) {
        std::cerr << cdviews::cli::format(d) << "\n";
        broken |= d.severity == cdviews::cli::Diagnostic::Severity::Error;
      }
      if (broken) return cdviews::exit_code_for(cdviews::ErrorCode::ConfigError);
    }
    return chosen(config);
  } catch (const cdviews::Error& e) {
    std::cerr << "cdviews " << chosen_name << ": " << e.what() << "\n";
    return cdviews::exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "cdviews " << chosen_name << ": " << e.what() << "\n";
    return 1;
  }
}
