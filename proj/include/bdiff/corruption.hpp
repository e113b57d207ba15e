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

#include "bdiff/masks.hpp"
#include "bdiff/rng.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace bdiff {

using TokenId = std::int32_t;

/// Corrupted sequence plus per-position visibility.
/// visible[i] == false exactly when tokens[i] == the mask token.
struct NoisedView {
    std::vector<TokenId> tokens;
    std::vector<bool> visible;
    double step = 0.0;
    std::vector<double> per_block_t; // empty in per_sequence mode

    std::size_t masked_count() const;
};

enum class CorruptionMode { per_block, per_sequence };

std::string_view to_string(CorruptionMode mode);
CorruptionMode parse_corruption_mode(std::string_view name);

// Stream tags. With rng R, the step for block k (or the whole sequence, k=0)
// is R.split(kStepStream).uniform_at(k) and position i is masked iff
// R.split(kPositionStream).uniform_at(i) < t of its block.
inline constexpr std::uint64_t kStepStream = 1;
inline constexpr std::uint64_t kPositionStream = 2;

// t ~ Uniform[0, 1); advances rng by one draw.
double sample_step(Rng &rng);

// Absorbing-state corruption of every block. `forced_t` overrides every draw
// of t. Throws std::invalid_argument when mask_token_id occurs in x.
NoisedView corrupt_blocks(std::span<const TokenId> x, const BlockPartition &p, CorruptionMode mode,
                          const Rng &rng, TokenId mask_token_id,
                          std::optional<double> forced_t = std::nullopt);

// Corrupts only the last block at rate t; earlier positions stay visible.
NoisedView corrupt_last_block(std::span<const TokenId> x, const BlockPartition &p, double t,
                              const Rng &rng, TokenId mask_token_id);

} // namespace bdiff
