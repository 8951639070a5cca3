#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "flowgs/pipeline.hpp"

namespace flowgs {

/// Every tunable of a run. Serialized as nested JSON objects; keys are the
/// dotted paths accepted by apply_override, e.g. "densify.grad_threshold".
struct RunConfig {
  PipelineConfig pipeline;
  SynthConfig synth;
  int threads = 0;  // 0 = all cores
};

/// Full JSON form with every effective value.
std::string to_json(const RunConfig& config, int indent = 2);

/// Parses JSON over the defaults. Unknown keys and mistyped values throw
/// ConfigError naming the key.
RunConfig parse_run_config(std::string_view json);
RunConfig load_run_config(const std::filesystem::path& path);

/// `key=value`, where value is JSON (bare words are taken as strings).
void apply_override(RunConfig& config, std::string_view assignment);

}  // namespace flowgs
