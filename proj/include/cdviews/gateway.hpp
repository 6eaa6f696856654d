#pragma once

// The only module that talks to a vision-language model. Requests are
// canonicalized, hashed and cached on disk; misses go to a backend with retries
// and a requests-per-minute ceiling.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cdviews/synth.hpp"
#include "cdviews/templates.hpp"

namespace cdviews {

struct ImageRef {
  enum class Kind { Path, Base64, Uri };
  Kind kind = Kind::Path;
  /// File path, base64 payload, or URI, depending on kind.
  std::string value;
  std::string mime = "image/jpeg";

  static ImageRef path(std::string p) { return {Kind::Path, std::move(p)}; }
  static ImageRef base64(std::string data, std::string mime = "image/jpeg") {
    return {Kind::Base64, std::move(data), std::move(mime)};
  }
  static ImageRef uri(std::string u) { return {Kind::Uri, std::move(u)}; }
};

struct ContentPart {
  enum class Type { Text, Image };
  Type type = Type::Text;
  std::string text;
  ImageRef image;

  static ContentPart of_text(std::string t) { return {Type::Text, std::move(t), {}}; }
  static ContentPart of_image(ImageRef ref) { return {Type::Image, {}, std::move(ref)}; }
};

struct ChatMessage {
  std::string role;  // "system" or "user"
  std::vector<ContentPart> parts;
};

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  std::uint32_t max_tokens = 256;
  /// "caption", "match", "match_direct", "answer", ...
  std::string request_tag;
  /// Routing hints for local backends (scene, question, view ids). Not part of
  /// the cache key and never sent over the wire.
  std::map<std::string, std::string> annotations;

  std::size_t image_count() const;
  /// Concatenated text of all parts, in order, newline separated.
  std::string all_text() const;
  /// Throws InvalidArgument on an empty message list, unknown role or empty message.
  void validate() const;
};

struct ChatResponse {
  std::string text;
  std::string finish_reason;
  double latency_ms = 0.0;
  bool served_from_cache = false;
  std::size_t attempts = 0;
};

/// Reply of one backend attempt.
struct BackendReply {
  std::string text;
  std::string finish_reason = "stop";
};

/// Transport to a model. Throw Error(GatewayError) for retryable failures; any
/// other error aborts the call.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string name() const = 0;
  /// `wire` is the chat-completions body with images inlined as data URLs.
  virtual BackendReply send(const ChatRequest& request, const nlohmann::json& wire) = 0;
  /// Largest number of images per request, if limited.
  virtual std::optional<std::size_t> max_images() const { return std::nullopt; }
};

/// Canonical JSON of the request: sorted keys, compact, images replaced by a
/// content digest (paths and base64) or kept verbatim (URIs). Throws
/// ImageUnreadable if a path image cannot be read.
std::string canonical_request(const ChatRequest& request);
/// Hex SHA-256 of canonical_request.
std::string cache_key(const ChatRequest& request);

/// Chat-completions request body with images as data URLs (URIs pass through).
nlohmann::json wire_body(const ChatRequest& request);

std::string sha256_hex(std::string_view bytes);
std::string base64_encode(std::string_view bytes);

struct GatewayConfig {
  /// Empty disables the on-disk cache.
  std::filesystem::path cache_root;
  /// 0 means unlimited.
  double requests_per_minute = 0.0;
  std::size_t max_attempts = 5;
  double backoff_base_seconds = 1.0;
  double backoff_factor = 2.0;
};

struct GatewayStats {
  std::size_t requests = 0;
  std::size_t cache_hits = 0;
  std::size_t backend_attempts = 0;
  std::size_t backend_successes = 0;
};

class Gateway {
 public:
  using Sleeper = std::function<void(std::chrono::duration<double>)>;

  /// Throws ConfigError if backend is null.
  Gateway(std::shared_ptr<Backend> backend, GatewayConfig config, Sleeper sleeper = {});

  /// Cache first; on a miss, sends with exponential backoff and persists the
  /// reply. Concurrent identical requests share one backend call. Throws
  /// GatewayError once attempts are exhausted.
  ChatResponse complete(const ChatRequest& request);

  GatewayStats stats() const;
  const Backend& backend() const { return *backend_; }
  std::optional<std::size_t> max_images() const { return backend_->max_images(); }

 private:
  ChatResponse complete_uncached(const ChatRequest& request, const std::string& key);
  std::optional<ChatResponse> cache_lookup(const std::string& key) const;
  void cache_store(const std::string& key, const ChatRequest& request,
                   const ChatResponse& response) const;
  void throttle();

  std::shared_ptr<Backend> backend_;
  GatewayConfig config_;
  Sleeper sleeper_;
  mutable std::mutex mutex_;
  GatewayStats stats_;
  std::map<std::string, std::shared_future<ChatResponse>> in_flight_;
  std::mutex rate_mutex_;
  std::optional<std::chrono::steady_clock::time_point> last_send_;
};

/// Path of a cache entry: <root>/<first two hex>/<key>.json.
std::filesystem::path cache_entry_path(const std::filesystem::path& root, const std::string& key);

/// Scripted replies matched against requests. The first rule whose every given
/// field matches wins; its replies are consumed in order and the last repeats.
/// Unmatched requests throw UnscriptedRequest. Requests are recorded.
class MockBackend : public Backend {
 public:
  struct Matcher {
    std::optional<std::string> tag;
    /// Substring of all_text().
    std::optional<std::string> contains;
    /// Substring of some image reference value.
    std::optional<std::string> image;
    std::map<std::string, std::string> annotations;
  };
  struct Reply {
    /// Text to return; ignored when error or echo is set.
    std::string text;
    /// Simulated transient failure with this message.
    std::optional<std::string> error;
    /// Return the text of the last user message.
    bool echo = false;
  };
  struct Rule {
    Matcher match;
    std::vector<Reply> replies;
  };

  explicit MockBackend(std::vector<Rule> rules, std::optional<std::size_t> max_images = {});
  /// {"max_images": n?, "rules": [{"match": {...}, "replies": [{"text"|"error"|"echo"}]}]}
  static std::shared_ptr<MockBackend> from_json(const nlohmann::json& script);
  static std::shared_ptr<MockBackend> from_file(const std::filesystem::path& path);

  std::string name() const override { return "mock"; }
  BackendReply send(const ChatRequest& request, const nlohmann::json& wire) override;
  std::optional<std::size_t> max_images() const override { return max_images_; }

  std::vector<ChatRequest> requests() const;
  std::size_t request_count() const;
  std::size_t count_tag(const std::string& tag) const;

 private:
  std::vector<Rule> rules_;
  std::vector<std::size_t> cursor_;
  std::optional<std::size_t> max_images_;
  mutable std::mutex mutex_;
  std::vector<ChatRequest> log_;
};

/// Adapts a callable.
class FunctionBackend : public Backend {
 public:
  using Fn = std::function<BackendReply(const ChatRequest&)>;
  explicit FunctionBackend(Fn fn, std::string name = "function") : fn_(std::move(fn)), name_(std::move(name)) {}
  std::string name() const override { return name_; }
  BackendReply send(const ChatRequest& request, const nlohmann::json&) override { return fn_(request); }

 private:
  Fn fn_;
  std::string name_;
};

/// HTTPS chat-completions client. The bearer token is read from the named
/// environment variable at construction (absent variable means no token).
class HttpBackend : public Backend {
 public:
  struct Options {
    std::string base_url;  // e.g. https://host/v1
    std::string token_env = "CDVIEWS_API_KEY";
    double timeout_seconds = 120.0;
    std::optional<std::size_t> max_images;
  };
  explicit HttpBackend(Options options);
  std::string name() const override { return "http"; }
  BackendReply send(const ChatRequest& request, const nlohmann::json& wire) override;
  std::optional<std::size_t> max_images() const override { return options_.max_images; }

 private:
  Options options_;
  std::string token_;
};

/// Image reference of a view: its file when known, else synthetic://scene/view.
ImageRef view_image(const std::string& scene_id, const ViewRecord& view);

/// Answers from synthetic scene truth, reading annotations scene_id,
/// question_id and (for match requests) view_id, or synthetic:// image URIs.
///   caption: "the <anchor> next to the <answer>"
///   match / match_direct: "Answer: A|B|C" per oracle_labels
///   answer: the gold answer iff some image is answer-bearing, else "unknown"
class SyntheticOracleBackend : public Backend {
 public:
  explicit SyntheticOracleBackend(std::vector<SyntheticScene> scenes,
                                  std::optional<std::size_t> max_images = {});
  std::string name() const override { return "synthetic-oracle"; }
  BackendReply send(const ChatRequest& request, const nlohmann::json& wire) override;
  std::optional<std::size_t> max_images() const override { return max_images_; }

 private:
  const SyntheticScene& scene(const std::string& id) const;
  std::map<std::string, SyntheticScene> scenes_;
  std::optional<std::size_t> max_images_;
};

struct AnswerOptions {
  std::string model = "default";
  std::uint32_t max_tokens = 64;
};

/// One request carrying every view image (in the given order) followed by the
/// rendered question. Throws TooManyImages above the backend limit,
/// InvalidArgument with no views. Returns the reply verbatim.
std::string answer_question(const std::vector<ImageRef>& views, const std::string& question,
                            const PromptTemplate& prompt, Gateway& gateway,
                            const AnswerOptions& options = {},
                            std::map<std::string, std::string> annotations = {});

}  // namespace cdviews
