// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "fedadapt/orchestrator.hpp"

namespace fedadapt {

// Malformed configuration; the message carries "path:line:" context.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Flat sectioned key-value format ([model], [data], [partition], [federated],
// [run]); '#' and ';' start comments. Unknown sections, unknown keys and
// duplicate keys are rejected with line numbers. Keys absent from the file
// take their defaults; when `defaults_log` is given, one line per defaulted
// key is appended.
ExperimentConfig load_config(const std::string& path,
                             std::vector<std::string>* defaults_log = nullptr);

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin,
                                   std::vector<std::string>* defaults_log = nullptr);

}  // namespace fedadapt
