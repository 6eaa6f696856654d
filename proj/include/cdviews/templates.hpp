#pragma once

// Prompt templates with {placeholder} fields.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cdviews {

enum class TemplateRole { Rephrase, Match, MatchDirect, Answer };

std::string_view to_string(TemplateRole role) noexcept;
/// Throws ConfigError for unknown names.
TemplateRole template_role_from_string(std::string_view name);

/// Placeholders the role must contain, e.g. {question} and {answer} for Rephrase.
std::vector<std::string> required_placeholders(TemplateRole role);

class PromptTemplate {
 public:
  /// Throws InvalidTemplate if the text is empty, a required placeholder is
  /// missing, or a placeholder is not allowed for the role.
  PromptTemplate(TemplateRole role, std::string text, std::optional<std::string> system = {});

  TemplateRole role() const noexcept { return role_; }
  const std::string& text() const noexcept { return text_; }
  const std::optional<std::string>& system() const noexcept { return system_; }

  /// Substitutes every {name}. "{{" and "}}" produce literal braces. Throws
  /// InvalidTemplate if a placeholder has no value.
  std::string render(const std::map<std::string, std::string>& values) const;

  /// Built-in defaults.
  static PromptTemplate default_for(TemplateRole role);

  /// Reads `<dir>/<role>.txt` and, when present, `<dir>/<role>.system.txt`;
  /// falls back to the default when the prompt file is absent.
  static PromptTemplate load(TemplateRole role, const std::filesystem::path& dir);

 private:
  TemplateRole role_;
  std::string text_;
  std::optional<std::string> system_;
};

/// Placeholder names appearing in `text`, in order of first appearance.
std::vector<std::string> placeholders_in(std::string_view text);

}  // namespace cdviews
