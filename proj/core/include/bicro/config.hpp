#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "bicro/co_train.hpp"
#include "bicro/datagen.hpp"

namespace bicro {

struct ExperimentConfig {
  GenSpec gen;
  TrainConfig train;
};

// `key = value` lines, `#` starts a comment. Unknown keys and malformed or
// out-of-range values throw kConfig naming the key and line.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

// Applies one assignment; used by the parser and by command-line overrides.
void set_config_value(ExperimentConfig& cfg, std::string_view key, std::string_view value);

std::string format_config(const ExperimentConfig& cfg);

}  // namespace bicro
