#pragma once

#include <string>

#include "config.hpp"

namespace cdviews::cli {

// Each subcommand takes the fully resolved config, writes its artifact and
// prints a one-line summary. Errors propagate as cdviews::Error.
int run_synth(const json& config);
int run_annotate(const json& config);
int run_train(const json& config);
int run_select(const json& config);
int run_answer(const json& config);
int run_eval(const json& config);
int run_nms(const json& config);
int run_gradcheck(const json& config);
int run_ablate(const json& config);
int run_validate(const json& config);

}  // namespace cdviews::cli
