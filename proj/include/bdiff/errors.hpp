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

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bdiff {

// Operand shapes do not conform for an op.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A NaN or Inf reached an op input. `op()` names the op and `index()` the
// flat element position.
class NonFiniteError : public std::runtime_error {
public:
    NonFiniteError(std::string op, std::size_t index);

    const std::string &op() const { return op_; }
    std::size_t index() const { return index_; }

private:
    std::string op_;
    std::size_t index_;
};

// Config or checkpoint contents are malformed. `key()` is the offending key
// when one is known.
class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string &key, const std::string &message);

    const std::string &key() const { return key_; }

private:
    std::string key_;
};

// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(std::size_t step, unsigned long long seed);

    std::size_t step() const { return step_; }
    unsigned long long seed() const { return seed_; }

private:
    std::size_t step_;
    unsigned long long seed_;
};

} // namespace bdiff
