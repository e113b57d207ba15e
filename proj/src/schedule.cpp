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

#include "bdiff/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bdiff {

void GrowthSchedule::validate() const {
    if (b0 < 1) {
        throw std::invalid_argument("schedule: b0 must be >= 1");
    }
    if (growth_base < 2) {
        throw std::invalid_argument("schedule: growth base r must be >= 2");
    }
    if (interval < 1) {
        throw std::invalid_argument("schedule: interval must be >= 1");
    }
    if (b0 > b_max) {
        throw std::invalid_argument("schedule: b0 must not exceed b_max");
    }
    if (refine_budget && *refine_budget < 1) {
        throw std::invalid_argument("schedule: refine budget must be positive");
    }
    if (!(lambda0 >= 0.0) || (lambda_end && !(*lambda_end >= 0.0))) {
        throw std::invalid_argument("schedule: lambda must be non-negative");
    }
}

std::size_t block_size_at(std::size_t step, const GrowthSchedule &g) {
    const std::size_t exponent = step > g.warmup ? (step - g.warmup) / g.interval : 0;
    std::size_t b = g.b0;
    // Multiply until capped so large exponents never overflow.
    for (std::size_t k = 0; k < exponent && b < g.b_max; ++k) {
        b *= g.growth_base;
    }
    return std::min(b, g.b_max);
}

std::size_t refine_steps_at(std::size_t step, const GrowthSchedule &g) {
    const std::size_t b = block_size_at(step, g);
    if (!g.refine_budget) {
        return b;
    }
    const auto t = static_cast<std::size_t>(
        std::llround(static_cast<double>(*g.refine_budget) / static_cast<double>(b)));
    return std::clamp<std::size_t>(t, 1, b);
}

std::size_t full_size_step(const GrowthSchedule &g) {
    std::size_t k = 0;
    for (std::size_t b = g.b0; b < g.b_max; b *= g.growth_base) {
        ++k;
    }
    return g.warmup + k * g.interval;
}

double lambda_at(std::size_t step, const GrowthSchedule &g) {
    if (!(g.lambda0 >= 0.0) || (g.lambda_end && !(*g.lambda_end >= 0.0))) {
        throw std::invalid_argument("schedule: lambda must be non-negative");
    }
    if (!g.lambda_end) {
        return g.lambda0;
    }
    const std::size_t begin = g.warmup;
    const std::size_t end = full_size_step(g);
    if (step < begin) {
        return g.lambda0;
    }
    if (step >= end) {
        return *g.lambda_end;
    }
    const double frac = static_cast<double>(step - begin) / static_cast<double>(end - begin);
    return g.lambda0 + frac * (*g.lambda_end - g.lambda0);
}

} // namespace bdiff
