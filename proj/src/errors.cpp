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

#include "bdiff/errors.hpp"

#include <utility>

namespace bdiff {

NonFiniteError::NonFiniteError(std::string op, std::size_t index)
    : std::runtime_error("non-finite input to " + op + " at element " + std::to_string(index)),
      op_(std::move(op)),
      index_(index) {}

ConfigError::ConfigError(const std::string &key, const std::string &message)
    : std::runtime_error(key.empty() ? message : key + ": " + message),
      key_(key) {}

DivergenceError::DivergenceError(std::size_t step, unsigned long long seed)
    : std::runtime_error("non-finite loss at step " + std::to_string(step) + " (batch seed " +
                         std::to_string(seed) + ")"),
      step_(step),
      seed_(seed) {}

} // namespace bdiff
