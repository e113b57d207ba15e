// Copyright 2026 The bdiff Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "bdiff/infer.hpp"
#include "bdiff/model.hpp"
#include "bdiff/schedule.hpp"
#include "bdiff/train.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace bdiff {

/// Everything a run needs, in four INI sections: model, schedule, train and
/// decode. The model is initialized from train.seed.
struct RunConfig {
    ModelConfig model;
    GrowthSchedule schedule;
    TrainSettings train;
    DecodeConfig decode;

    // Runs each section's validate(); rethrows as ConfigError naming the
    // section.
    void validate() const;
};

using ConfigEntries = std::vector<std::pair<std::string, std::string>>;

// Fully resolved "section.key" = value pairs in a fixed order. Doubles use
// the shortest round-trip form and unset optionals are "none".
ConfigEntries to_entries(const RunConfig &cfg);

// Starts from defaults and applies each entry. Throws ConfigError with the
// key on unknown keys or unparsable values.
RunConfig from_entries(const ConfigEntries &entries);

// "[section]" headers followed by key = value lines. Lines starting with
// '#' or ';' are comments.
RunConfig parse_ini(const std::string &text);
RunConfig load_ini(const std::filesystem::path &path);
std::string to_ini(const RunConfig &cfg);

} // namespace bdiff
