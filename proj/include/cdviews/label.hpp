#pragma once

#include <string_view>

namespace cdviews {

/// Three-way annotator verdict. Only Positive/Negative are trainable.
enum class Label { Positive, Negative, Uncertain };

std::string_view to_string(Label label) noexcept;
/// Accepts "positive" | "negative" | "uncertain"; throws SchemaError otherwise.
Label label_from_string(std::string_view text);

inline bool is_trainable(Label label) noexcept { return label != Label::Uncertain; }

}  // namespace cdviews
