#pragma once

#include <stdexcept>
#include <string>

#include "segnas/search.hpp"
#include "segnas/tasks.hpp"

namespace segnas {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Everything tunable in one place; populated from a key-value file.
struct RunConfig {
  SyntheticTaskConfig task;
  SearchConfig search;
  FullTrainConfig train;
};

/// Parses `key = value` lines ('#' starts a comment). Unknown keys are
/// rejected with a ConfigError naming the key.
RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::string& path);

/// Applies one override (same key syntax as the file).
void apply_key(RunConfig& config, const std::string& key, const std::string& value);

/// Deterministic echo of the effective configuration, one key per line.
std::string echo_config(const RunConfig& config);

}  // namespace segnas
