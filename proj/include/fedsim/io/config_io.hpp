// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fedsim/fed/experiment.hpp"

namespace fedsim::io {

/// Config text that is malformed or fails validation. Carries every problem
/// found, not just the first.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

/// Parses JSON config text. Missing keys keep their defaults; unknown keys,
/// wrong types and failed validation all raise ConfigError.
fed::ExperimentConfig parse_config(std::string_view json_text);
fed::ExperimentConfig load_config(const std::string& path);

/// Canonical JSON: every field present, keys sorted, fixed indentation.
std::string to_canonical_json(const fed::ExperimentConfig& cfg);

/// FNV-1a 64 of the canonical JSON with output_dir blanked, as 16 hex digits.
std::string config_hash(const fed::ExperimentConfig& cfg);

}  // namespace fedsim::io
