#include "cdviews/templates.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "cdviews/error.hpp"

namespace cdviews {

namespace {

constexpr std::string_view kRephrase =
    "Rewrite the question and its answer as one short, declarative image caption that "
    "describes what a picture answering the question would show. Mention every object and "
    "relation needed to answer it. Reply with the caption only.\n"
    "Question: {question}\n"
    "Answer: {answer}";

constexpr std::string_view kMatchSystem =
    "You judge whether a single image supports a description. Work step by step:\n"
    "1. List the objects the description mentions.\n"
    "2. For each object, check whether it is visible in the image.\n"
    "3. Check the attributes (color, size, material) the description states.\n"
    "4. Check the spatial relations the description states.\n"
    "Then choose exactly one option:\n"
    "A. The image shows everything the description needs.\n"
    "B. The image shows none of the described content.\n"
    "C. Cannot decide (partially visible, ambiguous, or unclear).\n"
    "Example. Description: \"A lamp stands on the nightstand beside the bed.\" The image "
    "shows a bed and a nightstand with a lamp on it, so all objects and the relation are "
    "present. Answer: A\n"
    "End your reply with the letter of your choice.";

constexpr std::string_view kMatch =
    "Description: {caption}\n"
    "Does the image match the description? Options: A (matches), B (does not match), "
    "C (cannot decide).";

constexpr std::string_view kMatchDirect =
    "Question-answer pair: Q: {question} A: {answer}\n"
    "Does the image contain what is needed to answer the question with this answer? "
    "Options: A (yes), B (no), C (cannot decide).";

constexpr std::string_view kAnswer =
    "{question}\nAnswer the question using a single word or phrase.";

std::vector<std::string> allowed_placeholders(TemplateRole role) {
  switch (role) {
    case TemplateRole::Rephrase: return {"question", "answer"};
    case TemplateRole::Match: return {"caption"};
    case TemplateRole::MatchDirect: return {"question", "answer"};
    case TemplateRole::Answer: return {"question"};
  }
  return {};
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Walks `text`, calling on_literal / on_field for each piece.
template <typename Lit, typename Field>
void scan(std::string_view text, Lit on_literal, Field on_field) {
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (c == '{' && i + 1 < text.size() && text[i + 1] == '{') {
      on_literal('{');
      i += 2;
    } else if (c == '}' && i + 1 < text.size() && text[i + 1] == '}') {
      on_literal('}');
      i += 2;
    } else if (c == '{') {
      const auto close = text.find('}', i + 1);
      if (close == std::string_view::npos) {
        throw Error(ErrorCode::InvalidTemplate, "unterminated placeholder");
      }
      const auto name = text.substr(i + 1, close - i - 1);
      if (name.empty() ||
          !std::all_of(name.begin(), name.end(), [](char ch) {
            return std::isalnum(static_cast<unsigned char>(ch)) || ch == '_';
          })) {
        throw Error(ErrorCode::InvalidTemplate, "bad placeholder '{" + std::string(name) + "}'");
      }
      on_field(std::string(name));
      i = close + 1;
    } else {
      on_literal(c);
      ++i;
    }
  }
}

}  // namespace

std::string_view to_string(TemplateRole role) noexcept {
  switch (role) {
    case TemplateRole::Rephrase: return "rephrase";
    case TemplateRole::Match: return "match";
    case TemplateRole::MatchDirect: return "match_direct";
    case TemplateRole::Answer: return "answer";
  }
  return "unknown";
}

TemplateRole template_role_from_string(std::string_view name) {
  for (auto r : {TemplateRole::Rephrase, TemplateRole::Match, TemplateRole::MatchDirect,
                 TemplateRole::Answer}) {
    if (to_string(r) == name) return r;
  }
  throw Error(ErrorCode::ConfigError, "unknown template role '" + std::string(name) + "'");
}

std::vector<std::string> required_placeholders(TemplateRole role) {
  return allowed_placeholders(role);
}

std::vector<std::string> placeholders_in(std::string_view text) {
  std::vector<std::string> out;
  scan(text, [](char) {}, [&](std::string name) {
    if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(std::move(name));
  });
  return out;
}

PromptTemplate::PromptTemplate(TemplateRole role, std::string text,
                               std::optional<std::string> system)
    : role_(role), text_(std::move(text)), system_(std::move(system)) {
  if (text_.empty()) throw Error(ErrorCode::InvalidTemplate, "empty template");
  const auto present = placeholders_in(text_);
  const auto allowed = allowed_placeholders(role_);
  for (const auto& name : allowed) {
    if (std::find(present.begin(), present.end(), name) == present.end()) {
      throw Error(ErrorCode::InvalidTemplate, std::string(to_string(role_)) +
                                                  " template lacks {" + name + "}");
    }
  }
  for (const auto& name : present) {
    if (std::find(allowed.begin(), allowed.end(), name) == allowed.end()) {
      throw Error(ErrorCode::InvalidTemplate, "{" + name + "} is not valid in a " +
                                                  std::string(to_string(role_)) + " template");
    }
  }
  if (system_ && !placeholders_in(*system_).empty()) {
    throw Error(ErrorCode::InvalidTemplate, "system preamble must not contain placeholders");
  }
}

std::string PromptTemplate::render(const std::map<std::string, std::string>& values) const {
  std::string out;
  scan(text_, [&](char c) { out.push_back(c); }, [&](const std::string& name) {
    auto it = values.find(name);
    if (it == values.end()) {
      throw Error(ErrorCode::InvalidTemplate, "no value for {" + name + "}");
    }
    out += it->second;
  });
  return out;
}

PromptTemplate PromptTemplate::default_for(TemplateRole role) {
  switch (role) {
    case TemplateRole::Rephrase: return {role, std::string(kRephrase)};
    case TemplateRole::Match: return {role, std::string(kMatch), std::string(kMatchSystem)};
    case TemplateRole::MatchDirect:
      return {role, std::string(kMatchDirect), std::string(kMatchSystem)};
    case TemplateRole::Answer: return {role, std::string(kAnswer)};
  }
  throw Error(ErrorCode::InvalidArgument, "unknown template role");
}

PromptTemplate PromptTemplate::load(TemplateRole role, const std::filesystem::path& dir) {
  const auto name = std::string(to_string(role));
  const auto prompt = dir / (name + ".txt");
  if (!std::filesystem::exists(prompt)) return default_for(role);
  const auto system = dir / (name + ".system.txt");
  std::optional<std::string> preamble;
  if (std::filesystem::exists(system)) {
    preamble = read_text(system);
  } else {
    preamble = default_for(role).system();
  }
  return {role, read_text(prompt), std::move(preamble)};
}

}  // namespace cdviews
