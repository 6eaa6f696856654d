#include "cdviews/annotator.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <optional>
#include <set>

#include "cdviews/binary_io.hpp"
#include "cdviews/error.hpp"
#include "cdviews/strategies.hpp"

namespace cdviews {

using nlohmann::json;

namespace {

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
}

ChatRequest match_request(const std::string& text, const ImageRef& image, const PromptTemplate& prompt,
                          const AnnotatorModel& model, std::string tag,
                          std::map<std::string, std::string> annotations) {
  ChatRequest request;
  request.model = model.model;
  request.max_tokens = model.match_max_tokens;
  request.request_tag = std::move(tag);
  request.annotations = std::move(annotations);
  if (prompt.system()) request.messages.push_back({"system", {ContentPart::of_text(*prompt.system())}});
  request.messages.push_back({"user", {ContentPart::of_image(image), ContentPart::of_text(text)}});
  return request;
}

ViewLabel run_match(const ChatRequest& request, Gateway& gateway) {
  return parse_label(gateway.complete(request).text);
}

// Reads JSONL rows, tolerating one torn line at the end of the file.
std::vector<json> read_rows_tolerant(const std::filesystem::path& path) {
  std::vector<json> rows;
  if (!std::filesystem::exists(path)) return rows;
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!blank(line)) lines.push_back(line);
  }
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      auto row = json::parse(lines[i]);
      if (!is_provenance_row(row)) rows.push_back(std::move(row));
    } catch (const json::exception& e) {
      if (i + 1 == lines.size()) break;  // interrupted write
      throw Error(ErrorCode::SchemaError,
                  path.string() + ":" + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return rows;
}

std::string dump_rows(const std::vector<json>& rows) {
  std::string out;
  for (const auto& r : rows) out += r.dump() + "\n";
  return out;
}

class Appender {
 public:
  explicit Appender(const std::filesystem::path& path) : out_(path, std::ios::app) {
    if (!out_) throw Error(ErrorCode::IoError, "cannot append to " + path.string());
  }
  void write(const json& row) {
    out_ << row.dump() << '\n';
    out_.flush();
    if (!out_) throw Error(ErrorCode::IoError, "write failed");
  }

 private:
  std::ofstream out_;
};

}  // namespace

std::string Caption::id() const {
  return sha256_hex(question_id + '\n' + answer + '\n' + text).substr(0, 16);
}

ViewLabel parse_label(std::string_view reply) {
  for (std::size_t i = 0; i < reply.size(); ++i) {
    const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(reply[i])));
    if (c != 'A' && c != 'B' && c != 'C') continue;
    if (i > 0 && is_word_char(reply[i - 1])) continue;
    if (i + 1 < reply.size() && is_word_char(reply[i + 1])) continue;
    const Label value = c == 'A' ? Label::Positive : c == 'B' ? Label::Negative : Label::Uncertain;
    return {value, std::string(reply),
            std::string("option ") + c + " at offset " + std::to_string(i)};
  }
  return {Label::Uncertain, std::string(reply), "no option token"};
}

Caption generate_caption(const std::string& question_id, const std::string& question,
                         const std::string& answer, const PromptTemplate& prompt,
                         Gateway& gateway, const AnnotatorModel& model,
                         std::map<std::string, std::string> annotations) {
  if (prompt.role() != TemplateRole::Rephrase) {
    throw Error(ErrorCode::InvalidTemplate, "captions need a rephrase template");
  }
  ChatRequest request;
  request.model = model.model;
  request.max_tokens = model.caption_max_tokens;
  request.request_tag = "caption";
  request.annotations = std::move(annotations);
  if (prompt.system()) request.messages.push_back({"system", {ContentPart::of_text(*prompt.system())}});
  request.messages.push_back(
      {"user", {ContentPart::of_text(prompt.render({{"question", question}, {"answer", answer}}))}});
  const auto response = gateway.complete(request);
  if (blank(response.text)) {
    throw Error(ErrorCode::EmptyCompletion, "empty caption for question '" + question_id + "'");
  }
  return {response.text, question_id, answer, model.model};
}

ViewLabel match_view(const Caption& caption, const ImageRef& image, const PromptTemplate& prompt,
                     Gateway& gateway, const AnnotatorModel& model,
                     std::map<std::string, std::string> annotations) {
  if (prompt.role() != TemplateRole::Match) {
    throw Error(ErrorCode::InvalidTemplate, "match_view needs a match template");
  }
  const auto text = prompt.render({{"caption", caption.text}});
  return run_match(match_request(text, image, prompt, model, "match", std::move(annotations)), gateway);
}

ViewLabel match_view_direct(const std::string& question, const std::string& answer,
                            const ImageRef& image, const PromptTemplate& prompt, Gateway& gateway,
                            const AnnotatorModel& model,
                            std::map<std::string, std::string> annotations) {
  if (prompt.role() != TemplateRole::MatchDirect) {
    throw Error(ErrorCode::InvalidTemplate, "match_view_direct needs a match_direct template");
  }
  const auto text = prompt.render({{"question", question}, {"answer", answer}});
  return run_match(match_request(text, image, prompt, model, "match_direct", std::move(annotations)),
                   gateway);
}

AnnotationTemplates AnnotationTemplates::load(const std::filesystem::path& dir) {
  return {PromptTemplate::load(TemplateRole::Rephrase, dir),
          PromptTemplate::load(TemplateRole::Match, dir),
          PromptTemplate::load(TemplateRole::MatchDirect, dir)};
}

json AnnotationSummary::to_json() const {
  return {{"positive", positive},         {"negative", negative},
          {"uncertain", uncertain},       {"errors", errors},
          {"resumed", resumed},           {"caption_requests", caption_requests},
          {"match_requests", match_requests}};
}

json LabelRow::to_json() const {
  json row{{"scene_id", scene_id},
           {"question_id", question_id},
           {"view_id", view_id},
           {"label", std::string(cdviews::to_string(label))},
           {"caption_id", caption_id.empty() ? json(nullptr) : json(caption_id)},
           {"raw_reply_digest", raw_reply_digest.empty() ? json(nullptr) : json(raw_reply_digest)}};
  if (!error.empty()) row["error"] = error;
  return row;
}

LabelRow LabelRow::from_json(const json& row) {
  try {
    LabelRow r;
    r.scene_id = row.at("scene_id").get<std::string>();
    r.question_id = row.at("question_id").get<std::string>();
    r.view_id = row.at("view_id").get<std::string>();
    r.label = label_from_string(row.at("label").get<std::string>());
    if (row.contains("caption_id") && row["caption_id"].is_string()) r.caption_id = row["caption_id"];
    if (row.contains("raw_reply_digest") && row["raw_reply_digest"].is_string()) {
      r.raw_reply_digest = row["raw_reply_digest"];
    }
    if (row.contains("error")) r.error = row.at("error").get<std::string>();
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaError, std::string("label row: ") + e.what());
  }
}

std::filesystem::path captions_path(const std::filesystem::path& labels_path) {
  auto p = labels_path;
  p += ".captions.jsonl";
  return p;
}

std::vector<LabelRow> load_labels(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::IoError, "no labels file " + path.string());
  std::vector<LabelRow> out;
  for (const auto& row : read_rows_tolerant(path)) out.push_back(LabelRow::from_json(row));
  return out;
}

std::vector<std::size_t> candidate_views(const SceneManifest& scene, std::size_t views_per_scene) {
  const std::size_t n = scene.views.size();
  if (views_per_scene == 0 || views_per_scene >= n) {
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    return all;
  }
  return select_evenly_spaced(scene, views_per_scene).indices;
}

AnnotationSummary annotate_dataset(const std::vector<QAInstance>& questions,
                                   const std::map<std::string, SceneManifest>& scenes,
                                   const AnnotationTemplates& templates, Gateway& gateway,
                                   const std::filesystem::path& labels_path,
                                   const AnnotateOptions& options) {
  for (const auto& q : questions) {
    if (!scenes.count(q.scene_id)) {
      throw Error(ErrorCode::DataError,
                  "question '" + q.question_id + "' references unknown scene '" + q.scene_id + "'");
    }
    if (q.answers.empty()) {
      throw Error(ErrorCode::DataError, "question '" + q.question_id + "' has no answer");
    }
  }
  if (options.parallelism == 0) throw Error(ErrorCode::ConfigError, "parallelism must be >= 1");
  if (labels_path.has_parent_path()) std::filesystem::create_directories(labels_path.parent_path());

  AnnotationSummary summary;
  auto count = [&](const LabelRow& r) {
    switch (r.label) {
      case Label::Positive: ++summary.positive; break;
      case Label::Negative: ++summary.negative; break;
      case Label::Uncertain: ++summary.uncertain; break;
    }
    summary.errors += !r.error.empty();
  };

  // Resume: keep finished rows, drop failed ones so they are retried.
  std::set<std::pair<std::string, std::string>> done;
  {
    const auto existing = read_rows_tolerant(labels_path);
    std::vector<json> kept;
    for (const auto& raw : existing) {
      const auto row = LabelRow::from_json(raw);
      if (!row.error.empty()) continue;
      if (!done.emplace(row.question_id, row.view_id).second) continue;
      kept.push_back(raw);
      count(row);
      ++summary.resumed;
    }
    if (!options.header.is_null()) kept.insert(kept.begin(), json{{"provenance", options.header}});
    if (std::filesystem::exists(labels_path) || !options.header.is_null()) {
      write_file_atomic(labels_path, dump_rows(kept));
    }
  }
  const auto captions_file = captions_path(labels_path);
  std::map<std::pair<std::string, std::string>, Caption> captions;
  for (const auto& row : read_rows_tolerant(captions_file)) {
    Caption c{row.at("text"), row.at("question_id"), row.at("answer"), row.at("model")};
    captions[{c.question_id, c.answer}] = c;
  }
  if (std::filesystem::exists(captions_file)) {
    std::vector<json> rows;
    for (const auto& [key, c] : captions) {
      rows.push_back({{"caption_id", c.id()}, {"question_id", c.question_id},
                      {"answer", c.answer}, {"model", c.model}, {"text", c.text}});
    }
    write_file_atomic(captions_file, dump_rows(rows));
  }

  Appender labels_out(labels_path);
  std::optional<Appender> captions_out;

  for (const auto& q : questions) {
    const SceneManifest& scene = scenes.at(q.scene_id);
    std::vector<std::size_t> pending;
    for (std::size_t v : candidate_views(scene, options.views_per_scene)) {
      if (!done.count({q.question_id, scene.views[v].view_id})) pending.push_back(v);
    }
    if (pending.empty()) continue;
    const std::string& answer = q.answers.front();
    std::map<std::string, std::string> route{{"scene_id", q.scene_id}, {"question_id", q.question_id}};

    std::optional<Caption> caption;
    std::string caption_error;
    if (!options.direct) {
      if (auto it = captions.find({q.question_id, answer}); it != captions.end()) {
        caption = it->second;
      } else {
        ++summary.caption_requests;
        try {
          caption = generate_caption(q.question_id, q.question, answer, templates.rephrase, gateway,
                                     options.model, route);
          if (!captions_out) captions_out.emplace(captions_file);
          captions_out->write({{"caption_id", caption->id()}, {"question_id", q.question_id},
                               {"answer", answer}, {"model", caption->model},
                               {"text", caption->text}});
          captions.emplace(std::make_pair(q.question_id, answer), *caption);
        } catch (const std::exception& e) {
          caption_error = std::string("caption failed: ") + e.what();
        }
      }
    }

    std::vector<LabelRow> rows(pending.size());
    const bool can_match = options.direct || caption.has_value();
    if (can_match) summary.match_requests += pending.size();
#pragma omp parallel for schedule(dynamic, 1) num_threads(static_cast<int>(options.parallelism)) if (can_match && options.parallelism > 1)
    for (std::size_t i = 0; i < pending.size(); ++i) {
      const ViewRecord& view = scene.views[pending[i]];
      LabelRow& row = rows[i];
      row.scene_id = q.scene_id;
      row.question_id = q.question_id;
      row.view_id = view.view_id;
      if (!can_match) {
        row.error = caption_error;
        continue;
      }
      if (caption) row.caption_id = caption->id();
      auto annotations = route;
      annotations["view_id"] = view.view_id;
      try {
        const ImageRef image = view_image(q.scene_id, view);
        const ViewLabel label =
            options.direct
                ? match_view_direct(q.question, answer, image, templates.match_direct, gateway,
                                    options.model, annotations)
                : match_view(*caption, image, templates.match, gateway, options.model, annotations);
        row.label = label.value;
        row.raw_reply_digest = sha256_hex(label.raw);
      } catch (const std::exception& e) {
        row.label = Label::Uncertain;
        row.error = e.what();
      }
    }
    for (const auto& row : rows) {
      labels_out.write(row.to_json());
      count(row);
    }
  }
  return summary;
}

std::vector<TrainingInstance> training_instances(const std::vector<LabelRow>& rows,
                                                 const EmbeddingStore& store) {
  std::vector<TrainingInstance> out;
  std::map<std::string, std::size_t> slot;
  for (const auto& r : rows) {
    if (!is_trainable(r.label) || !r.error.empty()) continue;
    auto [it, fresh] = slot.emplace(r.question_id, out.size());
    if (fresh) {
      TrainingInstance inst;
      inst.question_id = r.question_id;
      inst.question = store.question_tokens(r.question_id);
      out.push_back(std::move(inst));
    }
    TrainingInstance& inst = out[it->second];
    inst.views.push_back(store.view_tokens(r.scene_id, r.view_id));
    inst.labels.push_back(r.label);
  }
  return out;
}

}  // namespace cdviews
