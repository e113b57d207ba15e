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

#include <cstdint>

namespace bdiff {

/// Counter-based generator. Draw `n` of a stream is a pure function of
/// (key, n), so any draw can be replayed without replaying its predecessors,
/// and `split` derives independent child streams by tag.
///
/// Draw n = splitmix64_finalize(key + (n + 1) * 0x9e3779b97f4a7c15).
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : key_(seed) {}

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }

    std::uint64_t next_u64() { return at(counter_++); }

    // Uniform in [0, 1) with 53 bits of resolution.
    double uniform() { return uniform_at(counter_++); }

    // Uniform integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n);

    // Standard normal (Box-Muller, consumes two draws).
    double normal();

    std::uint64_t at(std::uint64_t n) const;
    double uniform_at(std::uint64_t n) const;

    Rng split(std::uint64_t tag) const;

    static std::uint64_t mix(std::uint64_t z);

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

} // namespace bdiff
