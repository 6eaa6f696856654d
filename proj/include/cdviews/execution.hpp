#pragma once

namespace cdviews {

/// Selects the OpenMP kernel or its serial reference. Both produce identical
/// results; the serial path exists for testing and benchmarking.
enum class Execution { Serial, Parallel };

}  // namespace cdviews
