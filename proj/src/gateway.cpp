#include "cdviews/gateway.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <ctime>
#include <fstream>
#include <sstream>
#include <thread>

#include "cdviews/binary_io.hpp"
#include "cdviews/error.hpp"

namespace cdviews {

using nlohmann::json;

namespace {

std::string_view kind_name(ImageRef::Kind k) {
  switch (k) {
    case ImageRef::Kind::Path: return "path";
    case ImageRef::Kind::Base64: return "base64";
    case ImageRef::Kind::Uri: return "uri";
  }
  return "unknown";
}

std::string read_image(const ImageRef& ref) {
  std::ifstream in(ref.value, std::ios::binary);
  if (!in) throw Error(ErrorCode::ImageUnreadable, "cannot read image '" + ref.value + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (!in.good() && !in.eof()) {
    throw Error(ErrorCode::ImageUnreadable, "error reading image '" + ref.value + "'");
  }
  return ss.str();
}

json canonical_json(const ChatRequest& request) {
  json messages = json::array();
  for (const auto& m : request.messages) {
    json parts = json::array();
    for (const auto& p : m.parts) {
      if (p.type == ContentPart::Type::Text) {
        parts.push_back({{"type", "text"}, {"text", p.text}});
        continue;
      }
      json image{{"kind", kind_name(p.image.kind)}, {"mime", p.image.mime}};
      switch (p.image.kind) {
        case ImageRef::Kind::Path: image["sha256"] = sha256_hex(read_image(p.image)); break;
        case ImageRef::Kind::Base64: image["sha256"] = sha256_hex(p.image.value); break;
        case ImageRef::Kind::Uri: image["uri"] = p.image.value; break;
      }
      parts.push_back({{"type", "image"}, {"image", std::move(image)}});
    }
    messages.push_back({{"role", m.role}, {"parts", std::move(parts)}});
  }
  return {{"model", request.model},
          {"temperature", request.temperature},
          {"max_tokens", request.max_tokens},
          {"tag", request.request_tag},
          {"messages", std::move(messages)}};
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

std::size_t ChatRequest::image_count() const {
  std::size_t n = 0;
  for (const auto& m : messages)
    for (const auto& p : m.parts) n += p.type == ContentPart::Type::Image;
  return n;
}

std::string ChatRequest::all_text() const {
  std::string out;
  for (const auto& m : messages) {
    for (const auto& p : m.parts) {
      if (p.type != ContentPart::Type::Text) continue;
      if (!out.empty()) out += '\n';
      out += p.text;
    }
  }
  return out;
}

void ChatRequest::validate() const {
  if (messages.empty()) throw Error(ErrorCode::InvalidArgument, "request has no messages");
  for (const auto& m : messages) {
    if (m.role != "system" && m.role != "user") {
      throw Error(ErrorCode::InvalidArgument, "unsupported role '" + m.role + "'");
    }
    if (m.parts.empty()) throw Error(ErrorCode::InvalidArgument, "empty message");
  }
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::IoError, "SHA-256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 15]);
  }
  return out;
}

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string canonical_request(const ChatRequest& request) { return canonical_json(request).dump(); }

std::string cache_key(const ChatRequest& request) { return sha256_hex(canonical_request(request)); }

json wire_body(const ChatRequest& request) {
  json messages = json::array();
  for (const auto& m : request.messages) {
    json content = json::array();
    for (const auto& p : m.parts) {
      if (p.type == ContentPart::Type::Text) {
        content.push_back({{"type", "text"}, {"text", p.text}});
        continue;
      }
      std::string url;
      switch (p.image.kind) {
        case ImageRef::Kind::Path:
          url = "data:" + p.image.mime + ";base64," + base64_encode(read_image(p.image));
          break;
        case ImageRef::Kind::Base64: url = "data:" + p.image.mime + ";base64," + p.image.value; break;
        case ImageRef::Kind::Uri: url = p.image.value; break;
      }
      content.push_back({{"type", "image_url"}, {"image_url", {{"url", std::move(url)}}}});
    }
    messages.push_back({{"role", m.role}, {"content", std::move(content)}});
  }
  return {{"model", request.model},
          {"temperature", request.temperature},
          {"max_tokens", request.max_tokens},
          {"messages", std::move(messages)}};
}

std::filesystem::path cache_entry_path(const std::filesystem::path& root, const std::string& key) {
  return root / key.substr(0, 2) / (key + ".json");
}

Gateway::Gateway(std::shared_ptr<Backend> backend, GatewayConfig config, Sleeper sleeper)
    : backend_(std::move(backend)), config_(std::move(config)), sleeper_(std::move(sleeper)) {
  if (!backend_) throw Error(ErrorCode::ConfigError, "no gateway backend configured");
  if (config_.max_attempts == 0) throw Error(ErrorCode::ConfigError, "max_attempts must be >= 1");
  if (!sleeper_) sleeper_ = [](std::chrono::duration<double> d) { std::this_thread::sleep_for(d); };
}

GatewayStats Gateway::stats() const {
  std::lock_guard lock(mutex_);
  return stats_;
}

std::optional<ChatResponse> Gateway::cache_lookup(const std::string& key) const {
  if (config_.cache_root.empty()) return std::nullopt;
  const auto path = cache_entry_path(config_.cache_root, key);
  if (!std::filesystem::exists(path)) return std::nullopt;
  try {
    const auto doc = json::parse(read_file(path));
    ChatResponse r;
    r.text = doc.at("response").at("text").get<std::string>();
    r.finish_reason = doc.at("response").at("finish_reason").get<std::string>();
    r.served_from_cache = true;
    return r;
  } catch (const std::exception&) {
    return std::nullopt;  // unreadable entry: treated as a miss and rewritten
  }
}

void Gateway::cache_store(const std::string& key, const ChatRequest& request,
                          const ChatResponse& response) const {
  if (config_.cache_root.empty()) return;
  const auto path = cache_entry_path(config_.cache_root, key);
  std::filesystem::create_directories(path.parent_path());
  const json doc{{"key", key},
                 {"model", request.model},
                 {"request", canonical_json(request)},
                 {"response", {{"text", response.text}, {"finish_reason", response.finish_reason}}},
                 {"created_at", utc_now()}};
  write_file_atomic(path, doc.dump(1) + "\n");
}

void Gateway::throttle() {
  if (config_.requests_per_minute <= 0.0) return;
  const std::chrono::duration<double> interval(60.0 / config_.requests_per_minute);
  std::lock_guard lock(rate_mutex_);
  const auto now = std::chrono::steady_clock::now();
  auto next = now;
  if (last_send_) {
    next = std::max(now, *last_send_ + std::chrono::duration_cast<std::chrono::steady_clock::duration>(interval));
  }
  if (next > now) sleeper_(next - now);
  last_send_ = next;
}

ChatResponse Gateway::complete_uncached(const ChatRequest& request, const std::string& key) {
  const json wire = wire_body(request);
  std::string last_error;
  for (std::size_t attempt = 1; attempt <= config_.max_attempts; ++attempt) {
    throttle();
    {
      std::lock_guard lock(mutex_);
      ++stats_.backend_attempts;
    }
    const auto start = std::chrono::steady_clock::now();
    try {
      const BackendReply reply = backend_->send(request, wire);
      ChatResponse r;
      r.text = reply.text;
      r.finish_reason = reply.finish_reason;
      r.latency_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      r.attempts = attempt;
      {
        std::lock_guard lock(mutex_);
        ++stats_.backend_successes;
      }
      if (!r.text.empty()) cache_store(key, request, r);
      return r;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::GatewayError) throw;
      last_error = e.what();
    }
    if (attempt < config_.max_attempts) {
      const double delay =
          config_.backoff_base_seconds * std::pow(config_.backoff_factor, double(attempt - 1));
      sleeper_(std::chrono::duration<double>(delay));
    }
  }
  throw Error(ErrorCode::GatewayError, "request '" + request.request_tag + "' failed after " +
                                           std::to_string(config_.max_attempts) +
                                           " attempts: " + last_error);
}

ChatResponse Gateway::complete(const ChatRequest& request) {
  request.validate();
  const std::string key = cache_key(request);

  std::shared_future<ChatResponse> pending;
  {
    std::lock_guard lock(mutex_);
    ++stats_.requests;
    if (auto it = in_flight_.find(key); it != in_flight_.end()) pending = it->second;
  }
  if (!pending.valid()) {
    if (auto hit = cache_lookup(key)) {
      std::lock_guard lock(mutex_);
      ++stats_.cache_hits;
      return *hit;
    }
  }

  std::promise<ChatResponse> promise;
  if (!pending.valid()) {
    std::lock_guard lock(mutex_);
    if (auto it = in_flight_.find(key); it != in_flight_.end()) {
      pending = it->second;
    } else {
      in_flight_.emplace(key, promise.get_future().share());
    }
  }
  if (pending.valid()) {
    ChatResponse r = pending.get();
    r.served_from_cache = true;
    std::lock_guard lock(mutex_);
    ++stats_.cache_hits;
    return r;
  }

  try {
    ChatResponse r = complete_uncached(request, key);
    promise.set_value(r);
    std::lock_guard lock(mutex_);
    in_flight_.erase(key);
    return r;
  } catch (...) {
    promise.set_exception(std::current_exception());
    std::lock_guard lock(mutex_);
    in_flight_.erase(key);
    throw;
  }
}

// ---------------------------------------------------------------------------
// MockBackend

MockBackend::MockBackend(std::vector<Rule> rules, std::optional<std::size_t> max_images)
    : rules_(std::move(rules)), cursor_(rules_.size(), 0), max_images_(max_images) {
  for (const auto& r : rules_) {
    if (r.replies.empty()) throw Error(ErrorCode::ConfigError, "mock rule without replies");
  }
}

std::shared_ptr<MockBackend> MockBackend::from_json(const json& script) {
  try {
    std::vector<Rule> rules;
    for (const auto& r : script.at("rules")) {
      Rule rule;
      const json match = r.value("match", json::object());
      if (match.contains("tag")) rule.match.tag = match.at("tag").get<std::string>();
      if (match.contains("contains")) rule.match.contains = match.at("contains").get<std::string>();
      if (match.contains("image")) rule.match.image = match.at("image").get<std::string>();
      if (match.contains("annotations")) {
        rule.match.annotations = match.at("annotations").get<std::map<std::string, std::string>>();
      }
      for (const auto& rep : r.at("replies")) {
        Reply reply;
        if (rep.is_string()) {
          reply.text = rep.get<std::string>();
        } else {
          reply.text = rep.value("text", "");
          if (rep.contains("error")) reply.error = rep.at("error").get<std::string>();
          reply.echo = rep.value("echo", false);
        }
        rule.replies.push_back(std::move(reply));
      }
      rules.push_back(std::move(rule));
    }
    std::optional<std::size_t> max_images;
    if (script.contains("max_images")) max_images = script.at("max_images").get<std::size_t>();
    return std::make_shared<MockBackend>(std::move(rules), max_images);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("mock script: ") + e.what());
  }
}

std::shared_ptr<MockBackend> MockBackend::from_file(const std::filesystem::path& path) {
  try {
    return from_json(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, path.string() + ": " + e.what());
  }
}

BackendReply MockBackend::send(const ChatRequest& request, const json&) {
  std::lock_guard lock(mutex_);
  log_.push_back(request);
  const std::string text = request.all_text();
  for (std::size_t i = 0; i < rules_.size(); ++i) {
    const auto& m = rules_[i].match;
    if (m.tag && *m.tag != request.request_tag) continue;
    if (m.contains && text.find(*m.contains) == std::string::npos) continue;
    if (m.image) {
      bool found = false;
      for (const auto& msg : request.messages)
        for (const auto& p : msg.parts)
          found = found || (p.type == ContentPart::Type::Image &&
                            p.image.value.find(*m.image) != std::string::npos);
      if (!found) continue;
    }
    bool annotations_match = true;
    for (const auto& [k, v] : m.annotations) {
      auto it = request.annotations.find(k);
      annotations_match = annotations_match && it != request.annotations.end() && it->second == v;
    }
    if (!annotations_match) continue;

    const auto& replies = rules_[i].replies;
    const Reply& reply = replies[std::min(cursor_[i], replies.size() - 1)];
    ++cursor_[i];
    if (reply.error) throw Error(ErrorCode::GatewayError, "mock failure: " + *reply.error);
    if (reply.echo) {
      std::string last;
      for (const auto& msg : request.messages) {
        if (msg.role != "user") continue;
        last.clear();
        for (const auto& p : msg.parts)
          if (p.type == ContentPart::Type::Text) last += p.text;
      }
      return {last, "stop"};
    }
    return {reply.text, "stop"};
  }
  throw Error(ErrorCode::UnscriptedRequest,
              "no mock rule for tag '" + request.request_tag + "': " + text.substr(0, 120));
}

std::vector<ChatRequest> MockBackend::requests() const {
  std::lock_guard lock(mutex_);
  return log_;
}

std::size_t MockBackend::request_count() const {
  std::lock_guard lock(mutex_);
  return log_.size();
}

std::size_t MockBackend::count_tag(const std::string& tag) const {
  std::lock_guard lock(mutex_);
  std::size_t n = 0;
  for (const auto& r : log_) n += r.request_tag == tag;
  return n;
}

// ---------------------------------------------------------------------------
// Synthetic oracle

ImageRef view_image(const std::string& scene_id, const ViewRecord& view) {
  if (view.image_path) return ImageRef::path(*view.image_path);
  return ImageRef::uri("synthetic://" + scene_id + "/" + view.view_id);
}

SyntheticOracleBackend::SyntheticOracleBackend(std::vector<SyntheticScene> scenes,
                                               std::optional<std::size_t> max_images)
    : max_images_(max_images) {
  for (auto& s : scenes) {
    const std::string id = s.manifest.scene_id;
    if (!scenes_.emplace(id, std::move(s)).second) {
      throw Error(ErrorCode::DataError, "duplicate scene '" + id + "'");
    }
  }
}

const SyntheticScene& SyntheticOracleBackend::scene(const std::string& id) const {
  auto it = scenes_.find(id);
  if (it == scenes_.end()) throw Error(ErrorCode::UnscriptedRequest, "unknown scene '" + id + "'");
  return it->second;
}

BackendReply SyntheticOracleBackend::send(const ChatRequest& request, const json&) {
  auto annotation = [&](const std::string& name) -> std::string {
    auto it = request.annotations.find(name);
    if (it == request.annotations.end()) {
      throw Error(ErrorCode::UnscriptedRequest, "oracle request lacks annotation '" + name + "'");
    }
    return it->second;
  };
  const SyntheticScene& s = scene(annotation("scene_id"));
  const SyntheticQA& qa = s.qa(annotation("question_id"));

  // View indices named by synthetic://<scene>/<view> images.
  std::vector<std::size_t> shown;
  const std::string prefix = "synthetic://" + s.manifest.scene_id + "/";
  for (const auto& m : request.messages) {
    for (const auto& p : m.parts) {
      if (p.type != ContentPart::Type::Image) continue;
      if (p.image.kind != ImageRef::Kind::Uri || p.image.value.rfind(prefix, 0) != 0) {
        throw Error(ErrorCode::UnscriptedRequest, "oracle cannot read image '" + p.image.value + "'");
      }
      const auto idx = s.manifest.find(p.image.value.substr(prefix.size()));
      if (!idx) throw Error(ErrorCode::UnscriptedRequest, "unknown view " + p.image.value);
      shown.push_back(*idx);
    }
  }

  const auto& tag = request.request_tag;
  if (tag == "caption") {
    return {"The " + s.objects[qa.anchor].label + " is next to the " + s.objects[qa.answer].label + ".",
            "stop"};
  }
  if (tag == "match" || tag == "match_direct") {
    if (shown.size() != 1) throw Error(ErrorCode::UnscriptedRequest, "match needs one image");
    const auto labels = oracle_labels(s, qa);
    switch (labels[shown[0]]) {
      case Label::Positive: return {"Answer: A", "stop"};
      case Label::Negative: return {"Answer: B", "stop"};
      case Label::Uncertain: return {"Answer: C", "stop"};
    }
  }
  if (tag == "answer") {
    for (std::size_t v : shown) {
      if (std::find(qa.answer_views.begin(), qa.answer_views.end(), v) != qa.answer_views.end()) {
        return {qa.qa.answers.front(), "stop"};
      }
    }
    return {"unknown", "stop"};
  }
  throw Error(ErrorCode::UnscriptedRequest, "oracle has no behavior for tag '" + tag + "'");
}

// ---------------------------------------------------------------------------

std::string answer_question(const std::vector<ImageRef>& views, const std::string& question,
                            const PromptTemplate& prompt, Gateway& gateway,
                            const AnswerOptions& options,
                            std::map<std::string, std::string> annotations) {
  if (views.empty()) throw Error(ErrorCode::InvalidArgument, "answering needs at least one view");
  if (prompt.role() != TemplateRole::Answer) {
    throw Error(ErrorCode::InvalidTemplate, "answer_question needs an answer template");
  }
  if (const auto limit = gateway.max_images(); limit && views.size() > *limit) {
    throw Error(ErrorCode::TooManyImages, std::to_string(views.size()) +
                                              " images exceed the backend limit of " +
                                              std::to_string(*limit));
  }
  ChatRequest request;
  request.model = options.model;
  request.max_tokens = options.max_tokens;
  request.request_tag = "answer";
  request.annotations = std::move(annotations);
  if (prompt.system()) {
    request.messages.push_back({"system", {ContentPart::of_text(*prompt.system())}});
  }
  ChatMessage user{"user", {}};
  for (const auto& v : views) user.parts.push_back(ContentPart::of_image(v));
  user.parts.push_back(ContentPart::of_text(prompt.render({{"question", question}})));
  request.messages.push_back(std::move(user));
  return gateway.complete(request).text;
}

}  // namespace cdviews
