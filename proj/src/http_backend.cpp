// Our headers (and Eigen) come first: OpenSSL, pulled in by httplib, defines
// macros that collide with Eigen internals.
#include "cdviews/error.hpp"
#include "cdviews/gateway.hpp"

#include <cstdlib>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

namespace cdviews {

namespace {

// Splits "https://host:port/prefix" into ("https://host:port", "/prefix").
std::pair<std::string, std::string> split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) {
    throw Error(ErrorCode::ConfigError, "backend URL lacks a scheme: '" + url + "'");
  }
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, ""};
  std::string prefix = url.substr(slash);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {url.substr(0, slash), prefix};
}

std::string content_text(const nlohmann::json& content) {
  if (content.is_string()) return content.get<std::string>();
  std::string out;
  if (content.is_array()) {
    for (const auto& part : content) {
      if (part.value("type", "") == "text") out += part.value("text", "");
    }
  }
  return out;
}

}  // namespace

HttpBackend::HttpBackend(Options options) : options_(std::move(options)) {
  split_url(options_.base_url);
  if (const char* token = std::getenv(options_.token_env.c_str())) token_ = token;
}

BackendReply HttpBackend::send(const ChatRequest&, const nlohmann::json& wire) {
  const auto [host, prefix] = split_url(options_.base_url);
  httplib::Client client(host);
  const auto timeout = std::chrono::duration<double>(options_.timeout_seconds);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  httplib::Headers headers;
  if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);

  const auto res = client.Post(prefix + "/chat/completions", headers, wire.dump(), "application/json");
  if (!res) {
    throw Error(ErrorCode::GatewayError, "transport error: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw Error(ErrorCode::GatewayError,
                "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
  }
  try {
    const auto doc = nlohmann::json::parse(res->body);
    const auto& choice = doc.at("choices").at(0);
    BackendReply reply;
    reply.text = content_text(choice.at("message").at("content"));
    if (choice.contains("finish_reason") && choice.at("finish_reason").is_string()) {
      reply.finish_reason = choice.at("finish_reason").get<std::string>();
    }
    return reply;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::GatewayError, std::string("malformed completion: ") + e.what());
  }
}

}  // namespace cdviews
