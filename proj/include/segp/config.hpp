// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "segp/experiment.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace segp {

/// One configurable hyperparameter. The same table drives the YAML loader,
/// the CLI flags (--<key>), the canonical dump and the config hash.
struct ConfigField {
    std::string key; // dotted path, e.g. "train.learning_rate"
    std::string help;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

[[nodiscard]] const std::vector<ConfigField>& config_fields();

/// Parses `value` into the field named `key`; ConfigError on an unknown key or a bad value.
void set_config_field(ExperimentConfig& config, const std::string& key, const std::string& value);

/// Nested YAML mapping whose leaves are config keys. Unknown keys are errors;
/// missing keys keep their defaults.
[[nodiscard]] ExperimentConfig load_config_file(const std::filesystem::path& path);
void apply_config_text(ExperimentConfig& config, const std::string& yaml_text);

/// Every field in table order as nested YAML; round-trips through load_config_file.
[[nodiscard]] std::string dump_config(const ExperimentConfig& config);

/// 16 hex digits of FNV-1a over dump_config.
[[nodiscard]] std::string config_hash(const ExperimentConfig& config);

} // namespace segp
