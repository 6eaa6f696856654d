#include "commands.hpp"

#include <cstdio>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include "cdviews/annotator.hpp"
#include "cdviews/binary_io.hpp"
#include "cdviews/error.hpp"
#include "cdviews/gateway.hpp"
#include "cdviews/metrics.hpp"
#include "cdviews/nms.hpp"
#include "cdviews/selector_train.hpp"
#include "cdviews/strategies.hpp"
#include "cdviews/synth.hpp"

namespace cdviews::cli {

namespace fs = std::filesystem;

namespace {

Execution execution(const json& config) {
  return config.at("execution") == "serial" ? Execution::Serial : Execution::Parallel;
}

std::string jsonl_artifact(const json& header, const std::vector<json>& rows) {
  std::string out = json{{"provenance", header}}.dump() + "\n";
  for (const auto& r : rows) out += r.dump() + "\n";
  return out;
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

void write_artifact(const fs::path& path, std::string_view bytes) {
  ensure_parent(path);
  write_file_atomic(path, bytes);
}

std::vector<fs::path> json_files(const fs::path& path) {
  std::vector<fs::path> files;
  if (fs::is_directory(path)) {
    for (const auto& e : fs::directory_iterator(path)) {
      if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(path);
  }
  return files;
}

std::map<std::string, SceneManifest> load_scenes(const fs::path& path) {
  std::map<std::string, SceneManifest> scenes;
  for (const auto& f : json_files(path)) {
    auto m = load_manifest(f);
    const auto id = m.scene_id;
    if (!scenes.emplace(id, std::move(m)).second) {
      throw Error(ErrorCode::DataError, "scene '" + id + "' appears twice under " + path.string());
    }
  }
  if (scenes.empty()) throw Error(ErrorCode::DataError, "no manifests under " + path.string());
  return scenes;
}

std::vector<SyntheticScene> load_truth(const fs::path& path) {
  std::vector<SyntheticScene> out;
  for (const auto& f : json_files(path)) {
    try {
      out.push_back(scene_truth_from_json(json::parse(read_file(f))));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::SchemaError, f.string() + ": " + e.what());
    }
  }
  return out;
}

// The embeddings path may name the store directory or its index file.
EmbeddingStore open_store(const fs::path& path) {
  return load_store(fs::is_directory(path) ? path / "index.json" : path);
}

const SceneManifest& scene_for(const std::map<std::string, SceneManifest>& scenes,
                               const QAInstance& q) {
  auto it = scenes.find(q.scene_id);
  if (it == scenes.end()) {
    throw Error(ErrorCode::DataError,
                "question '" + q.question_id + "' references unknown scene '" + q.scene_id + "'");
  }
  return it->second;
}

std::unique_ptr<Gateway> make_gateway(const json& config) {
  const json& g = config.at("gateway");
  std::optional<std::size_t> max_images;
  if (g.at("max_images").is_number_unsigned()) max_images = g.at("max_images").get<std::size_t>();
  std::shared_ptr<Backend> backend;
  const auto kind = g.at("backend").get<std::string>();
  if (kind == "http") {
    HttpBackend::Options o;
    o.base_url = g.at("base_url").get<std::string>();
    o.token_env = g.at("token_env").get<std::string>();
    o.timeout_seconds = g.at("timeout_seconds").get<double>();
    o.max_images = max_images;
    if (o.base_url.empty()) throw Error(ErrorCode::ConfigError, "gateway.base_url is required");
    backend = std::make_shared<HttpBackend>(o);
  } else if (kind == "mock") {
    const auto script = g.at("mock_script").get<std::string>();
    if (script.empty()) throw Error(ErrorCode::ConfigError, "gateway.mock_script is required");
    backend = MockBackend::from_file(script);
  } else if (kind == "oracle") {
    require_paths(config, {"truth"});
    backend = std::make_shared<SyntheticOracleBackend>(load_truth(path_of(config, "truth")), max_images);
  } else {
    throw Error(ErrorCode::ConfigError, "unknown gateway backend '" + kind + "'");
  }
  GatewayConfig gc;
  gc.cache_root = path_of(config, "cache_root");
  gc.requests_per_minute = g.at("requests_per_minute").get<double>();
  gc.max_attempts = g.at("max_attempts").get<std::size_t>();
  return std::make_unique<Gateway>(backend, gc);
}

SelectorConfig model_config(const json& config, std::optional<std::uint32_t> d_in) {
  const json& m = config.at("/train/model"_json_pointer);
  SelectorConfig c;
  if (m.is_string()) {
    c = m == "paper" ? SelectorConfig::paper_scale() : SelectorConfig::desk();
    if (d_in) c.d_in = *d_in;
  } else {
    c.d_in = m.at("d_in").get<std::uint32_t>();
    c.d_model = m.at("d_model").get<std::uint32_t>();
    c.n_heads = m.at("n_heads").get<std::uint32_t>();
    c.d_ff = m.at("d_ff").get<std::uint32_t>();
    c.n_layers = m.at("n_layers").get<std::uint32_t>();
  }
  c.seed = config.at("/train/init_seed"_json_pointer).get<std::uint32_t>();
  c.validate();
  return c;
}

NmsConfig nms_config(const json& config, double threshold, std::size_t k) {
  NmsConfig n;
  n.threshold = threshold;
  n.max_views = k;
  n.weights.position = config.at("/strategy/position_weight"_json_pointer).get<double>();
  n.weights.orientation = config.at("/strategy/orientation_weight"_json_pointer).get<double>();
  n.validate();
  return n;
}

// Everything a selection strategy may need, loaded once.
struct SelectionContext {
  std::map<std::string, SceneManifest> scenes;
  std::vector<QAInstance> questions;
  std::optional<EmbeddingStore> store;
  std::optional<SelectorParams> params;
  std::optional<RetrievalScores> retrieval;
  // Per-scene view embeddings for the selector, parallel to manifest views.
  std::map<std::string, std::vector<EmbeddingSeq>> view_tokens;
};

SelectionContext load_selection_context(const json& config, const std::set<std::string>& strategies) {
  const bool needs_store = strategies.count("cdviews") ||
                           (strategies.count("retrieval") && path_of(config, "scores").empty());
  std::vector<std::string> required{"manifests", "qa"};
  if (needs_store) required.push_back("embeddings");
  if (strategies.count("cdviews")) required.push_back("params");
  require_paths(config, required);

  SelectionContext ctx;
  ctx.scenes = load_scenes(path_of(config, "manifests"));
  ctx.questions = load_qa(path_of(config, "qa"));
  if (needs_store) {
    ctx.store = open_store(path_of(config, "embeddings"));
    for (const auto& [id, scene] : ctx.scenes) ctx.store->require_views(scene);
  }
  if (strategies.count("cdviews")) {
    ctx.params = load_params(path_of(config, "params"));
    for (const auto& [id, scene] : ctx.scenes) {
      auto& seqs = ctx.view_tokens[id];
      for (const auto& v : scene.views) seqs.push_back({ctx.store->view_tokens(id, v.view_id), v.view_id});
    }
  }
  if (strategies.count("retrieval") && !path_of(config, "scores").empty()) {
    ctx.retrieval = load_retrieval_scores(path_of(config, "scores"));
  }
  return ctx;
}

SelectionResult select_one(const SelectionContext& ctx, const QAInstance& q, const std::string& strategy,
                           std::size_t k, double threshold, std::uint64_t seed, const json& config) {
  const SceneManifest& scene = scene_for(ctx.scenes, q);
  if (strategy == "uniform") return select_uniform(scene, k, question_seed(seed, q.question_id));
  if (strategy == "evenly_spaced") return select_evenly_spaced(scene, k);
  if (strategy == "retrieval") {
    if (ctx.retrieval) {
      auto it = ctx.retrieval->find({q.scene_id, q.question_id});
      if (it == ctx.retrieval->end()) {
        throw Error(ErrorCode::MissingScore, "no retrieval scores for question '" + q.question_id + "'");
      }
      return select_retrieval(scene, k, it->second);
    }
    return select_retrieval(scene, k,
                            embedding_similarity(scene, ctx.store->question_tokens(q.question_id), *ctx.store));
  }
  if (strategy == "cdviews") {
    return select_cdviews(scene, ctx.store->question_tokens(q.question_id), ctx.view_tokens.at(q.scene_id),
                          *ctx.params, nms_config(config, threshold, k), k, execution(config));
  }
  throw Error(ErrorCode::ConfigError, "unknown strategy '" + strategy + "'");
}

// Answers every question from its feed-ordered views; output parallel to `selections`.
std::vector<std::string> answer_all(const std::vector<std::pair<const QAInstance*, SelectionResult>>& selections,
                                    const std::map<std::string, SceneManifest>& scenes,
                                    const PromptTemplate& prompt, Gateway& gateway, const json& config) {
  AnswerOptions options;
  options.model = config.at("/gateway/model"_json_pointer).get<std::string>();
  const int threads = static_cast<int>(config.at("/gateway/parallelism"_json_pointer).get<std::size_t>());
  std::vector<std::string> answers(selections.size());
  std::vector<std::exception_ptr> failures(selections.size());
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
  for (std::size_t i = 0; i < selections.size(); ++i) {
    try {
      const QAInstance& q = *selections[i].first;
      const SceneManifest& scene = scene_for(scenes, q);
      std::vector<ImageRef> images;
      for (const auto& id : selections[i].second.feed_order) {
        const auto idx = scene.find(id);
        if (!idx) throw Error(ErrorCode::DataError, "view '" + id + "' is not in scene '" + q.scene_id + "'");
        images.push_back(view_image(q.scene_id, scene.views[*idx]));
      }
      answers[i] = answer_question(images, q.question, prompt, gateway, options,
                                   {{"scene_id", q.scene_id}, {"question_id", q.question_id}});
    } catch (...) {
      failures[i] = std::current_exception();
    }
  }
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }
  return answers;
}

PromptTemplate answer_template(const json& config) {
  const auto dir = path_of(config, "templates");
  return dir.empty() ? PromptTemplate::default_for(TemplateRole::Answer)
                     : PromptTemplate::load(TemplateRole::Answer, dir);
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

int run_synth(const json& config) {
  const fs::path out = output_path(config);
  const json& s = config.at("synth");
  const auto n_scenes = s.at("scenes").get<std::size_t>();
  if (n_scenes == 0) throw Error(ErrorCode::ConfigError, "synth.scenes must be >= 1");
  const json header = provenance("synth", config);

  std::vector<SyntheticScene> scenes;
  for (std::size_t i = 0; i < n_scenes; ++i) {
    SynthSpec spec;
    char id[32];
    std::snprintf(id, sizeof id, "scene%04zu", i);
    spec.scene_id = id;
    spec.seed = question_seed(s.at("seed").get<std::uint64_t>(), id);
    spec.n_views = s.at("views").get<std::size_t>();
    spec.n_objects = s.at("objects").get<std::size_t>();
    spec.max_questions = s.at("questions").get<std::size_t>();
    spec.trajectory = s.at("trajectory") == "walk" ? Trajectory::Walk : Trajectory::Orbit;
    spec.orbit_radius_fraction = s.at("orbit_radius_fraction").get<double>();
    scenes.push_back(synth_scene(spec));
  }
  EmbedOptions eo;
  eo.d_in = s.at("d_in").get<std::uint32_t>();
  eo.tokens_per_view = s.at("tokens_per_view").get<std::uint32_t>();
  eo.tokens_per_question = s.at("tokens_per_question").get<std::uint32_t>();
  eo.seed = s.at("seed").get<std::uint64_t>();
  eo.signal_strength = s.at("signal_strength").get<double>();
  eo.shared_offset = s.at("shared_offset").get<double>();
  const EmbeddingStore store = embed_synthetic(scenes, eo);

  std::vector<json> qa_rows, gold_rows;
  std::size_t n_views = 0;
  for (const auto& scene : scenes) {
    n_views += scene.manifest.views.size();
    json manifest = manifest_to_json(scene.manifest);
    manifest["provenance"] = header;
    write_artifact(out / "manifests" / (scene.manifest.scene_id + ".json"), manifest.dump(2) + "\n");
    json truth = scene_truth_to_json(scene);
    truth["provenance"] = header;
    write_artifact(out / "truth" / (scene.manifest.scene_id + ".json"), truth.dump(1) + "\n");
    for (const auto& q : scene.qas) {
      qa_rows.push_back(qa_to_json(q.qa));
      gold_rows.push_back({{"question_id", q.qa.question_id}, {"answers", q.qa.answers}});
    }
  }
  write_artifact(out / "qa.jsonl", jsonl_artifact(header, qa_rows));
  write_artifact(out / "gold.jsonl", jsonl_artifact(header, gold_rows));
  fs::create_directories(out / "embeddings");
  save_store(store, out / "embeddings", header);
  std::cout << "synth: " << scenes.size() << " scenes, " << n_views << " views, " << qa_rows.size()
            << " questions, visibility recovery " << fixed(visibility_recovery(scenes, store, eo), 3)
            << " -> " << out.string() << "\n";
  return 0;
}

int run_annotate(const json& config) {
  require_paths(config, {"manifests", "qa"});
  const fs::path out = output_path(config);
  auto scenes = load_scenes(path_of(config, "manifests"));
  const auto questions = load_qa(path_of(config, "qa"));
  auto gateway = make_gateway(config);
  const auto tdir = path_of(config, "templates");
  const AnnotationTemplates templates = tdir.empty() ? AnnotationTemplates{} : AnnotationTemplates::load(tdir);

  AnnotateOptions options;
  options.model.model = config.at("/gateway/model"_json_pointer).get<std::string>();
  options.parallelism = config.at("/gateway/parallelism"_json_pointer).get<std::size_t>();
  options.views_per_scene = config.at("/annotate/views_per_scene"_json_pointer).get<std::size_t>();
  options.direct = config.at("/annotate/direct"_json_pointer).get<bool>();
  options.header = provenance("annotate", config);
  ensure_parent(out);
  const auto summary = annotate_dataset(questions, scenes, templates, *gateway, out, options);

  json report{{"provenance", options.header}, {"summary", summary.to_json()}};
  auto summary_path = out;
  summary_path += ".summary.json";
  write_artifact(summary_path, report.dump(2) + "\n");
  std::cout << "annotate: " << summary.positive << " positive, " << summary.negative << " negative, "
            << summary.uncertain << " uncertain (" << summary.errors << " errors), " << summary.resumed
            << " resumed, " << summary.caption_requests << " caption + " << summary.match_requests
            << " match requests -> " << out.string() << "\n";
  return 0;
}

int run_train(const json& config) {
  require_paths(config, {"labels", "embeddings"});
  const fs::path out = output_path(config);
  const EmbeddingStore store = open_store(path_of(config, "embeddings"));
  const auto train = training_instances(load_labels(path_of(config, "labels")), store);
  std::vector<TrainingInstance> holdout;
  if (!path_of(config, "holdout_labels").empty()) {
    require_paths(config, {"holdout_labels"});
    holdout = training_instances(load_labels(path_of(config, "holdout_labels")), store);
  }
  const json& t = config.at("train");
  TrainConfig tc;
  tc.epochs = t.at("epochs").get<std::size_t>();
  tc.learning_rate = t.at("learning_rate").get<double>();
  tc.batch_size = t.at("batch_size").get<std::size_t>();
  tc.pos_per_instance = t.at("pos_per_instance").get<std::size_t>();
  tc.neg_per_instance = t.at("neg_per_instance").get<std::size_t>();
  tc.seed = t.at("seed").get<std::uint64_t>();
  const SelectorConfig mc = model_config(config, store.views.d_in());
  const auto result = train_selector(train, holdout, tc, mc, mc.seed);

  const json header = provenance("train", config);
  ensure_parent(out);
  save_params(result.params, out);
  json stats{{"provenance", header},
             {"param_count", param_count(result.params)},
             {"instances", train.size()},
             {"epoch_loss", result.stats.epoch_loss},
             {"epoch_labels", result.stats.epoch_labels},
             {"holdout_auc", result.stats.holdout_auc},
             {"holdout_epochs", result.stats.holdout_epochs}};
  auto stats_path = out;
  stats_path += ".json";
  write_artifact(stats_path, stats.dump(2) + "\n");
  std::cout << "train: " << train.size() << " instances, " << param_count(result.params)
            << " parameters, final loss " << fixed(result.stats.epoch_loss.back());
  if (!result.stats.holdout_auc.empty()) std::cout << ", holdout AUC " << fixed(result.stats.holdout_auc.back());
  std::cout << " -> " << out.string() << "\n";
  return 0;
}

int run_select(const json& config) {
  const fs::path out = output_path(config);
  const json& s = config.at("strategy");
  const auto strategy = s.at("name").get<std::string>();
  const auto ctx = load_selection_context(config, {strategy});
  const auto k = s.at("k").get<std::size_t>();
  std::vector<json> rows;
  std::size_t total = 0;
  for (const auto& q : ctx.questions) {
    const auto r = select_one(ctx, q, strategy, k, s.at("threshold").get<double>(),
                              s.at("seed").get<std::uint64_t>(), config);
    total += r.view_ids.size();
    rows.push_back(selection_to_json(r, q.scene_id, q.question_id));
  }
  write_artifact(out, jsonl_artifact(provenance("select", config), rows));
  std::cout << "select: " << strategy << " k=" << k << ", " << rows.size() << " questions, "
            << fixed(rows.empty() ? 0.0 : double(total) / double(rows.size()), 2)
            << " views per question -> " << out.string() << "\n";
  return 0;
}

int run_answer(const json& config) {
  require_paths(config, {"selections", "qa", "manifests"});
  const fs::path out = output_path(config);
  const auto scenes = load_scenes(path_of(config, "manifests"));
  std::map<std::string, QAInstance> questions;
  for (auto& q : load_qa(path_of(config, "qa"))) questions.emplace(q.question_id, q);
  std::vector<std::pair<const QAInstance*, SelectionResult>> selections;
  for (const auto& row : read_jsonl(path_of(config, "selections"))) {
    const auto qid = row.at("question_id").get<std::string>();
    auto it = questions.find(qid);
    if (it == questions.end()) throw Error(ErrorCode::DataError, "selection for unknown question '" + qid + "'");
    selections.emplace_back(&it->second, selection_from_json(row));
  }
  auto gateway = make_gateway(config);
  const auto answers = answer_all(selections, scenes, answer_template(config), *gateway, config);
  std::vector<json> rows;
  for (std::size_t i = 0; i < answers.size(); ++i) {
    rows.push_back({{"question_id", selections[i].first->question_id}, {"answer", answers[i]}});
  }
  write_artifact(out, jsonl_artifact(provenance("answer", config), rows));
  const auto st = gateway->stats();
  std::cout << "answer: " << rows.size() << " answers, " << st.cache_hits << " cache hits, "
            << st.backend_attempts << " backend calls -> " << out.string() << "\n";
  return 0;
}

int run_eval(const json& config) {
  require_paths(config, {"answers", "gold"});
  const auto report = evaluate_run(path_of(config, "answers"), path_of(config, "gold"), execution(config));
  const auto out = config.value("output", "");
  if (!out.empty()) {
    json doc = report.to_json();
    doc["provenance"] = provenance("eval", config);
    write_artifact(out, doc.dump(2) + "\n");
  }
  std::cout << report.to_table();
  std::cout << "eval: " << report.n_instances << " instances, EM@1 " << fixed(report.em_at_1)
            << (out.empty() ? "" : " -> " + out) << "\n";
  return 0;
}

int run_nms(const json& config) {
  require_paths(config, {"manifests", "scores"});
  const fs::path out = output_path(config);
  const auto scenes = load_scenes(path_of(config, "manifests"));
  if (scenes.size() != 1) throw Error(ErrorCode::ConfigError, "nms takes exactly one manifest");
  const SceneManifest& scene = scenes.begin()->second;
  std::map<std::string, double> table;
  for (const auto& row : read_jsonl(path_of(config, "scores"))) {
    try {
      table[row.at("view_id").get<std::string>()] = row.at("score").get<double>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::SchemaError, std::string("scores: ") + e.what());
    }
  }
  std::vector<double> scores;
  for (const auto& v : scene.views) {
    auto it = table.find(v.view_id);
    if (it == table.end()) throw Error(ErrorCode::MissingScore, "no score for view '" + v.view_id + "'");
    scores.push_back(it->second);
  }
  const json& s = config.at("strategy");
  const auto nms = nms_config(config, s.at("threshold").get<double>(), s.at("k").get<std::size_t>());
  const auto views = scene.posed_views();
  auto result = view_nms(views, scores, nms);
  json witnesses = json::object();
  for (const auto& [id, w] : suppression_witness(result, views, scores, nms)) {
    witnesses[id] = w.suppressed_by ? json{{"suppressed_by", *w.suppressed_by}, {"distance", w.distance}}
                                    : json{{"budget_exhausted", true}};
  }
  json doc{{"provenance", provenance("nms", config)},
           {"selection", selection_to_json(result, scene.scene_id, "")},
           {"suppressed", witnesses}};
  write_artifact(out, doc.dump(2) + "\n");
  std::cout << "nms: kept " << result.view_ids.size() << " of " << scene.views.size()
            << " views at T=" << nms.threshold << " -> " << out.string() << "\n";
  return 0;
}

int run_gradcheck(const json& config) {
  const json& g = config.at("gradcheck");
  const SelectorConfig mc = model_config(config, std::nullopt);
  const auto problem = gradient_check_problem(mc, g.at("seed").get<std::uint64_t>());
  const double eps = g.at("epsilon").get<double>();
  const auto report = gradient_check(problem.params, problem.data, problem.batch, eps,
                                     g.at("samples_per_tensor").get<std::size_t>(),
                                     g.at("seed").get<std::uint64_t>());
  const double tol = g.at("tolerance").get<double>();
  const bool ok = report.max_relative_error < tol;
  const auto out = config.value("output", "");
  if (!out.empty()) {
    json doc{{"provenance", provenance("gradcheck", config)},
             {"max_relative_error", report.max_relative_error},
             {"worst_tensor", report.worst_tensor},
             {"entries_checked", report.entries_checked},
             {"passed", ok}};
    write_artifact(out, doc.dump(2) + "\n");
  }
  std::cout << "gradcheck: " << (ok ? "PASS" : "FAIL") << " max relative error "
            << report.max_relative_error << " (" << report.worst_tensor << ") over "
            << report.entries_checked << " entries, tolerance " << tol << "\n";
  return ok ? 0 : 1;
}

int run_ablate(const json& config) {
  const fs::path out = output_path(config);
  const json& a = config.at("ablate");
  const auto strategies = a.at("strategies").get<std::vector<std::string>>();
  const auto ks = a.at("k").get<std::vector<std::size_t>>();
  const auto thresholds = a.at("thresholds").get<std::vector<double>>();
  if (strategies.empty() || ks.empty()) throw Error(ErrorCode::ConfigError, "ablate needs strategies and k values");
  const auto ctx = load_selection_context(config, {strategies.begin(), strategies.end()});
  auto gateway = make_gateway(config);
  const PromptTemplate prompt = answer_template(config);
  const auto seed = config.at("/strategy/seed"_json_pointer).get<std::uint64_t>();

  struct Row {
    std::string strategy;
    std::size_t k;
    std::optional<double> threshold;
    double mean_selected;
    double em;
  };
  std::vector<Row> rows;
  for (const auto& strategy : strategies) {
    std::vector<std::optional<double>> ts;
    if (strategy == "cdviews") {
      for (double t : thresholds) ts.push_back(t);
    } else {
      ts.push_back(std::nullopt);
    }
    for (std::size_t k : ks) {
      for (const auto& t : ts) {
        std::vector<std::pair<const QAInstance*, SelectionResult>> sel;
        double selected = 0.0;
        for (const auto& q : ctx.questions) {
          sel.emplace_back(&q, select_one(ctx, q, strategy, k, t.value_or(0.0), seed, config));
          selected += static_cast<double>(sel.back().second.view_ids.size());
        }
        const auto answers = answer_all(sel, ctx.scenes, prompt, *gateway, config);
        double em = 0.0;
        for (std::size_t i = 0; i < answers.size(); ++i) em += em_at_1(answers[i], sel[i].first->answers);
        const double n = static_cast<double>(answers.size());
        rows.push_back({strategy, k, t, selected / n, em / n});
      }
    }
  }

  std::ostringstream csv;
  csv << "# " << json{{"provenance", provenance("ablate", config)}}.dump() << "\n";
  csv << "# synthetic-world trend reproduction; values are not comparable to published numbers\n";
  csv << "strategy,k,threshold,mean_selected,em_at_1\n";
  for (const auto& r : rows) {
    csv << r.strategy << ',' << r.k << ',' << (r.threshold ? fixed(*r.threshold, 2) : "") << ','
        << fixed(r.mean_selected) << ',' << fixed(r.em) << "\n";
  }
  write_artifact(out, csv.str());

  // Plot-ready table: one row per k, one column per strategy/threshold.
  std::vector<std::string> columns;
  std::map<std::pair<std::string, std::size_t>, double> cell;
  for (const auto& r : rows) {
    const std::string col = r.strategy + (r.threshold ? "@T=" + fixed(*r.threshold, 2) : "");
    if (std::find(columns.begin(), columns.end(), col) == columns.end()) columns.push_back(col);
    cell[{col, r.k}] = r.em;
  }
  std::ostringstream table;
  table << "# EM@1 on synthetic scenes (trend reproduction)\n" << "k";
  for (const auto& c : columns) table << '\t' << c;
  table << "\n";
  for (std::size_t k : ks) {
    table << k;
    for (const auto& c : columns) table << '\t' << fixed(cell[{c, k}]);
    table << "\n";
  }
  auto table_path = out;
  table_path += ".table.tsv";
  write_artifact(table_path, table.str());
  std::cout << "ablate: " << rows.size() << " settings over " << ctx.questions.size()
            << " questions -> " << out.string() << "\n";
  return 0;
}

int run_validate(const json& config) {
  const auto diagnostics = validate_config(config);
  std::size_t errors = 0;
  for (const auto& d : diagnostics) {
    std::cout << format(d) << "\n";
    errors += d.severity == Diagnostic::Severity::Error;
  }
  std::cout << "validate: " << errors << " errors, " << diagnostics.size() - errors << " warnings\n";
  return errors == 0 ? 0 : 2;
}

}  // namespace cdviews::cli
