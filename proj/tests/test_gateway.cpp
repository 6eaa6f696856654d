#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include "cdviews/error.hpp"
#include "cdviews/gateway.hpp"
#include "cdviews/templates.hpp"

using namespace cdviews;
using nlohmann::json;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::InvalidArgument;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) : path(std::filesystem::temp_directory_path() / name) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

ChatRequest text_request(const std::string& text, const std::string& tag = "t") {
  ChatRequest r;
  r.model = "m";
  r.request_tag = tag;
  r.messages.push_back({"user", {ContentPart::of_text(text)}});
  return r;
}

std::vector<ImageRef> uris(std::size_t n) {
  std::vector<ImageRef> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(ImageRef::uri("synthetic://s/v" + std::to_string(i)));
  return out;
}

}  // namespace

TEST_CASE("templates") {
  const PromptTemplate t(TemplateRole::Answer, "Q: {question} {{literal}}");
  CHECK(t.render({{"question", "What is the black couch facing?"}}) ==
        "Q: What is the black couch facing? {literal}");
  CHECK(placeholders_in("{a} {b} {a} {{c}}") == std::vector<std::string>{"a", "b"});
  CHECK(code_of([] { PromptTemplate(TemplateRole::Answer, "no field"); }) == ErrorCode::InvalidTemplate);
  CHECK(code_of([] { PromptTemplate(TemplateRole::Match, "{caption} {question}"); }) == ErrorCode::InvalidTemplate);
  CHECK(code_of([] { PromptTemplate(TemplateRole::Answer, ""); }) == ErrorCode::InvalidTemplate);
  CHECK(code_of([] { template_role_from_string("summary"); }) == ErrorCode::ConfigError);
  CHECK(required_placeholders(TemplateRole::Rephrase) == std::vector<std::string>{"question", "answer"});

  for (auto role : {TemplateRole::Rephrase, TemplateRole::Match, TemplateRole::MatchDirect, TemplateRole::Answer}) {
    CHECK(template_role_from_string(to_string(role)) == role);
    const auto d = PromptTemplate::default_for(role);
    for (const auto& p : required_placeholders(role))
      CHECK(d.text().find("{" + p + "}") != std::string::npos);
  }
  const auto rephrase = PromptTemplate::default_for(TemplateRole::Rephrase);
  const auto text = rephrase.render({{"question", "What is the black couch facing?"}, {"answer", "coffee table"}});
  CHECK(text.find("What is the black couch facing?") != std::string::npos);
  CHECK(text.find("coffee table") != std::string::npos);
  CHECK(PromptTemplate::default_for(TemplateRole::Match).system());

  TempDir dir("cdviews_templates");
  { std::ofstream(dir.path / "answer.txt") << "Answer briefly: {question}"; }
  { std::ofstream(dir.path / "answer.system.txt") << "Be terse."; }
  const auto loaded = PromptTemplate::load(TemplateRole::Answer, dir.path);
  CHECK(loaded.text() == "Answer briefly: {question}");
  CHECK(loaded.system() == std::optional<std::string>("Be terse."));
  CHECK(PromptTemplate::load(TemplateRole::Match, dir.path).text() ==
        PromptTemplate::default_for(TemplateRole::Match).text());
}

TEST_CASE("cache keys") {
  TempDir dir("cdviews_keys");
  { std::ofstream(dir.path / "a.jpg", std::ios::binary) << "image-bytes-1"; }
  { std::ofstream(dir.path / "b.jpg", std::ios::binary) << "image-bytes-2"; }
  { std::ofstream(dir.path / "c.jpg", std::ios::binary) << "image-bytes-1"; }
  auto with_images = [&](std::vector<std::string> files) {
    ChatRequest r = text_request("look");
    for (const auto& f : files) r.messages[0].parts.push_back(ContentPart::of_image(ImageRef::path((dir.path / f).string())));
    return r;
  };
  // Same bytes under another path share a key; different bytes do not.
  CHECK(cache_key(with_images({"a.jpg"})) == cache_key(with_images({"c.jpg"})));
  CHECK(cache_key(with_images({"a.jpg"})) != cache_key(with_images({"b.jpg"})));
  CHECK(cache_key(with_images({"a.jpg", "b.jpg"})) != cache_key(with_images({"b.jpg", "a.jpg"})));
  CHECK(code_of([&] { cache_key(with_images({"missing.jpg"})); }) == ErrorCode::ImageUnreadable);

  // Annotations route local backends and never change the key.
  auto a = text_request("x"), b = text_request("x");
  b.annotations["scene_id"] = "s";
  CHECK(cache_key(a) == cache_key(b));
  b.temperature = 0.5;
  CHECK(cache_key(a) != cache_key(b));
  CHECK(cache_key(a).size() == 64);
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(base64_encode("hello") == "aGVsbG8=");

  const auto wire = wire_body(with_images({"a.jpg"}));
  const auto url = wire["messages"][0]["content"][1]["image_url"]["url"].get<std::string>();
  CHECK(url == "data:image/jpeg;base64," + base64_encode("image-bytes-1"));
}

TEST_CASE("gateway cache and retries") {
  TempDir dir("cdviews_gateway");
  auto mock = MockBackend::from_json(json::parse(R"({"rules": [
    {"match": {"contains": "flaky"}, "replies": [{"error": "503"}, {"error": "503"}, {"text": "ok"}]},
    {"match": {"contains": "dead"}, "replies": [{"error": "down"}]},
    {"match": {}, "replies": [{"echo": true}]}]})"));
  std::vector<double> sleeps;
  Gateway gw(mock, {.cache_root = dir.path, .max_attempts = 3},
             [&](std::chrono::duration<double> d) { sleeps.push_back(d.count()); });

  const auto r1 = gw.complete(text_request("flaky call"));
  CHECK(r1.text == "ok");
  CHECK(r1.attempts == 3);
  CHECK(!r1.served_from_cache);
  CHECK(sleeps == std::vector<double>{1.0, 2.0});
  CHECK(std::filesystem::exists(cache_entry_path(dir.path, cache_key(text_request("flaky call")))));

  const auto r2 = gw.complete(text_request("flaky call"));
  CHECK(r2.served_from_cache);
  CHECK(r2.text == "ok");
  CHECK(mock->request_count() == 3);

  CHECK(code_of([&] { gw.complete(text_request("dead end")); }) == ErrorCode::GatewayError);
  CHECK(mock->request_count() == 6);

  // A fresh gateway over the same directory is served from disk.
  auto silent = std::make_shared<FunctionBackend>([](const ChatRequest&) -> BackendReply {
    throw Error(ErrorCode::InvalidArgument, "should not be called");
  });
  Gateway warm(silent, {.cache_root = dir.path});
  CHECK(warm.complete(text_request("flaky call")).text == "ok");
  CHECK(warm.stats().cache_hits == 1);
  CHECK(code_of([] { Gateway(nullptr, {}); }) == ErrorCode::ConfigError);
}

TEST_CASE("mock backend rules") {
  auto mock = MockBackend::from_json(json::parse(R"({"max_images": 9, "rules": [
    {"match": {"tag": "caption"}, "replies": [{"text": "first"}, {"text": "second"}]},
    {"match": {"annotations": {"view_id": "v1"}}, "replies": [{"text": "Answer: A"}]},
    {"match": {"image": "v3"}, "replies": [{"text": "B"}]}]})"));
  Gateway gw(mock, {});
  CHECK(gw.complete(text_request("x", "caption")).text == "first");
  CHECK(gw.complete(text_request("y", "caption")).text == "second");
  CHECK(gw.complete(text_request("z", "caption")).text == "second");
  auto routed = text_request("m", "match");
  routed.annotations["view_id"] = "v1";
  CHECK(gw.complete(routed).text == "Answer: A");
  auto img = text_request("n", "match");
  img.messages[0].parts.push_back(ContentPart::of_image(ImageRef::uri("synthetic://s/v3")));
  CHECK(gw.complete(img).text == "B");
  CHECK(code_of([&] { gw.complete(text_request("other", "answer")); }) == ErrorCode::UnscriptedRequest);
  CHECK(mock->count_tag("caption") == 3);

  const auto prompt = PromptTemplate::default_for(TemplateRole::Answer);
  CHECK(code_of([&] { answer_question(uris(10), "q?", prompt, gw); }) == ErrorCode::TooManyImages);
  CHECK_THROWS_AS(answer_question({}, "q?", prompt, gw), Error);
}

TEST_CASE("answer_question sends every view in order") {
  auto mock = MockBackend::from_json(json::parse(R"({"rules": [{"match": {"tag": "answer"}, "replies": [{"text": "coffee table"}]}]})"));
  Gateway gw(mock, {});
  const auto reply = answer_question(uris(9), "What is the black couch facing?",
                                     PromptTemplate::default_for(TemplateRole::Answer), gw);
  CHECK(reply == "coffee table");
  const auto req = mock->requests().at(0);
  CHECK(req.image_count() == 9);
  const auto& parts = req.messages.back().parts;
  for (std::size_t i = 0; i < 9; ++i) CHECK(parts[i].image.value == "synthetic://s/v" + std::to_string(i));
  CHECK(parts.back().text.find("What is the black couch facing?") != std::string::npos);

  // Feeding the same views in another order is a different request.
  auto reversed = uris(9);
  std::reverse(reversed.begin(), reversed.end());
  answer_question(reversed, "What is the black couch facing?", PromptTemplate::default_for(TemplateRole::Answer), gw);
  CHECK(mock->request_count() == 2);
}

TEST_CASE("concurrent identical requests share one backend call") {
  std::atomic<int> calls{0};
  auto slow = std::make_shared<FunctionBackend>([&](const ChatRequest&) {
    ++calls;
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    return BackendReply{"done"};
  });
  Gateway gw(slow, {});
  std::vector<std::thread> threads;
  std::atomic<int> ok{0};
  for (int i = 0; i < 8; ++i)
    threads.emplace_back([&] { ok += gw.complete(text_request("same")).text == "done"; });
  for (auto& t : threads) t.join();
  CHECK(ok == 8);
  CHECK(calls == 1);
  CHECK(gw.stats().requests == 8);
}

TEST_CASE("requests-per-minute ceiling spaces sends") {
  std::vector<double> sleeps;
  auto echo = std::make_shared<FunctionBackend>([](const ChatRequest& r) { return BackendReply{r.all_text()}; });
  Gateway gw(echo, {.requests_per_minute = 60}, [&](std::chrono::duration<double> d) { sleeps.push_back(d.count()); });
  gw.complete(text_request("a"));
  gw.complete(text_request("b"));
  REQUIRE(sleeps.size() == 1);
  CHECK(sleeps[0] > 0.9);
  CHECK(sleeps[0] <= 1.0);
}
