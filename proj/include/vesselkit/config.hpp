#pragma once

// INI-style configuration ([section] key = value). Every key has a default;
// unknown sections or keys are rejected.

#include <string>
#include <vector>

#include "vesselkit/pipeline.hpp"

namespace vk {

struct ConfigKey {
  std::string section;
  std::string key;
  std::string description;
};

/// All recognised keys, in documentation order.
const std::vector<ConfigKey>& config_keys();

/// Parses INI text over the defaults of `base` (preset rows via [pipeline] row).
PipelineConfig parse_config(const std::string& text);
PipelineConfig load_config(const std::string& path);

/// Writes every key with its current value.
std::string dump_config(const PipelineConfig& cfg);

}  // namespace vk
