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
#include <cstdint>
#include <optional>

namespace bdiff {

/// Block-size curriculum b(s) = min(b_max, b0 · r^floor(max(0, s - s0) / Δ)),
/// with the refinement-step budget and AR-loss weight co-scheduled on it.
struct GrowthSchedule {
    std::size_t b0 = 1;
    std::size_t growth_base = 2;   // r
    std::size_t interval = 1000;   // Δ, steps per plateau
    std::size_t warmup = 0;        // s0
    std::size_t b_max = 32;
    std::optional<std::size_t> refine_budget; // c; T = clamp(round(c / b), 1, b)
    double lambda0 = 0.5;
    std::optional<double> lambda_end;

    // Throws std::invalid_argument on inconsistent fields or negative λ.
    void validate() const;
};

std::size_t block_size_at(std::size_t step, const GrowthSchedule &g);
std::size_t refine_steps_at(std::size_t step, const GrowthSchedule &g);
double lambda_at(std::size_t step, const GrowthSchedule &g);

// First step at which b(s) == b_max.
std::size_t full_size_step(const GrowthSchedule &g);

} // namespace bdiff
