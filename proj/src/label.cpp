#include "cdviews/label.hpp"

#include <string>

#include "cdviews/error.hpp"

namespace cdviews {

std::string_view to_string(Label label) noexcept {
  switch (label) {
    case Label::Positive: return "positive";
    case Label::Negative: return "negative";
    case Label::Uncertain: return "uncertain";
  }
  return "uncertain";
}

Label label_from_string(std::string_view text) {
  if (text == "positive") return Label::Positive;
  if (text == "negative") return Label::Negative;
  if (text == "uncertain") return Label::Uncertain;
  throw Error(ErrorCode::SchemaError, "unknown label '" + std::string(text) + "'");
}

}  // namespace cdviews
