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

#include "bdiff/config.hpp"
#include "bdiff/model.hpp"
#include "bdiff/tensor.hpp"
#include "bdiff/train.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace bdiff {

/// On-disk layout:
///
///   NBDF1
///   config <n>
///   <key>=<value>            n lines, run config then state.* entries
///   tensors <m>
///   <name> <rows>x<cols> <byte offset>   m lines
///   end
///   <little-endian float32 payload, tensors in directory order>
struct Checkpoint {
    RunConfig config;
    std::map<std::string, std::string> state; // keys without the "state." prefix
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor *find(const std::string &name) const;
};

std::string serialize_checkpoint(const Checkpoint &ckpt);
// Throws ConfigError on a bad magic, malformed header or truncated payload.
Checkpoint parse_checkpoint(const std::string &bytes);

void save_checkpoint(const std::filesystem::path &path, const Checkpoint &ckpt);
Checkpoint load_checkpoint(const std::filesystem::path &path);

// Model parameters, plus optimizer moments and the step counter when `state`
// is given.
Checkpoint make_checkpoint(const RunConfig &cfg, const Model &model, const TrainState *state = nullptr);

// Builds the model described by the embedded config and loads its weights.
// Throws ConfigError when a parameter is missing or has the wrong shape.
Model restore_model(const Checkpoint &ckpt);

// Restores step and optimizer moments for `model`. Returns false when the
// checkpoint carries no optimizer state.
bool restore_train_state(const Checkpoint &ckpt, const Model &model, TrainState &state);

} // namespace bdiff
