#pragma once

// Automatic view labels: the question and answer are rephrased into a caption,
// then each candidate view is asked whether it matches the caption.
//
// Labels JSONL rows:
//   {scene_id, question_id, view_id, label, caption_id, raw_reply_digest[, error]}
// Captions sidecar (<labels>.captions.jsonl) rows:
//   {caption_id, question_id, answer, model, text}

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "cdviews/embeddings.hpp"
#include "cdviews/gateway.hpp"
#include "cdviews/label.hpp"
#include "cdviews/scene.hpp"
#include "cdviews/selector_train.hpp"
#include "cdviews/templates.hpp"

namespace cdviews {

struct Caption {
  std::string text;
  std::string question_id;
  std::string answer;
  std::string model;

  /// First 16 hex digits of SHA-256 over question_id, answer and text.
  std::string id() const;
};

struct ViewLabel {
  Label value = Label::Uncertain;
  std::string raw;
  /// Human-readable description of how `raw` was parsed.
  std::string rule;
};

/// First standalone A, B or C (case-insensitive, not adjacent to an ASCII letter
/// or digit) decides the label; no such token means Uncertain. Total.
ViewLabel parse_label(std::string_view reply);

struct AnnotatorModel {
  std::string model = "default";
  std::uint32_t caption_max_tokens = 128;
  std::uint32_t match_max_tokens = 256;
};

/// Text-only request tagged "caption". Throws EmptyCompletion on a blank reply.
Caption generate_caption(const std::string& question_id, const std::string& question,
                         const std::string& answer, const PromptTemplate& prompt,
                         Gateway& gateway, const AnnotatorModel& model = {},
                         std::map<std::string, std::string> annotations = {});

/// Caption text plus one image, tagged "match".
ViewLabel match_view(const Caption& caption, const ImageRef& image, const PromptTemplate& prompt,
                     Gateway& gateway, const AnnotatorModel& model = {},
                     std::map<std::string, std::string> annotations = {});

/// Ablation: the question-answer pair instead of a caption, tagged "match_direct".
ViewLabel match_view_direct(const std::string& question, const std::string& answer,
                            const ImageRef& image, const PromptTemplate& prompt, Gateway& gateway,
                            const AnnotatorModel& model = {},
                            std::map<std::string, std::string> annotations = {});

struct AnnotationTemplates {
  PromptTemplate rephrase = PromptTemplate::default_for(TemplateRole::Rephrase);
  PromptTemplate match = PromptTemplate::default_for(TemplateRole::Match);
  PromptTemplate match_direct = PromptTemplate::default_for(TemplateRole::MatchDirect);

  /// Files in `dir` override the defaults role by role.
  static AnnotationTemplates load(const std::filesystem::path& dir);
};

struct AnnotateOptions {
  AnnotatorModel model;
  /// Match requests in flight at once.
  std::size_t parallelism = 4;
  /// Evenly spaced candidate views per scene; 0 keeps every view.
  std::size_t views_per_scene = 64;
  /// Skip captions and match on the question-answer pair.
  bool direct = false;
  /// When not null, written as the first line of the labels file as
  /// {"provenance": header}.
  nlohmann::json header;
};

struct AnnotationSummary {
  std::size_t positive = 0;
  std::size_t negative = 0;
  std::size_t uncertain = 0;
  /// Uncertain rows caused by a failed request rather than the model's reply.
  std::size_t errors = 0;
  /// (question, view) pairs already present in the output.
  std::size_t resumed = 0;
  std::size_t caption_requests = 0;
  std::size_t match_requests = 0;

  nlohmann::json to_json() const;
};

/// Candidate views of a scene for annotation (indices into scene.views).
std::vector<std::size_t> candidate_views(const SceneManifest& scene, std::size_t views_per_scene);

/// Labels every (question, candidate view) pair and appends rows to `labels_path`
/// in question order, then view order. Pairs already present without an error
/// are kept and not requested again; rows carrying an error are retried. A
/// failed request never aborts the run: the pair is written as Uncertain with
/// the error message. Throws DataError if a question names an unknown scene.
AnnotationSummary annotate_dataset(const std::vector<QAInstance>& questions,
                                   const std::map<std::string, SceneManifest>& scenes,
                                   const AnnotationTemplates& templates, Gateway& gateway,
                                   const std::filesystem::path& labels_path,
                                   const AnnotateOptions& options = {});

struct LabelRow {
  std::string scene_id;
  std::string question_id;
  std::string view_id;
  Label label = Label::Uncertain;
  std::string caption_id;
  std::string raw_reply_digest;
  std::string error;

  nlohmann::json to_json() const;
  static LabelRow from_json(const nlohmann::json& row);
};

std::filesystem::path captions_path(const std::filesystem::path& labels_path);

/// Reads a labels file. A torn final line (from an interrupted run) is ignored.
std::vector<LabelRow> load_labels(const std::filesystem::path& path);

/// Groups rows by question (in first-appearance order) and attaches embeddings.
/// Uncertain rows are dropped; questions left without a trainable view are
/// skipped. Throws DataError for missing embeddings.
std::vector<TrainingInstance> training_instances(const std::vector<LabelRow>& rows,
                                                 const EmbeddingStore& store);

}  // namespace cdviews
