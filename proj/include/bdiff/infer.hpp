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

#include "bdiff/corruption.hpp"
#include "bdiff/masks.hpp"
#include "bdiff/model.hpp"
#include "bdiff/rng.hpp"

#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace bdiff {

struct DecodeConfig {
    std::size_t macro_block = 32;
    std::size_t small_block = 4;
    double tau = std::numbers::ln2;
    // Refinement budget per macro block; unset means the block length.
    std::optional<std::size_t> max_refine_steps;
    // 0 decodes greedily.
    double temperature = 0.0;
    std::size_t max_new_tokens = 64;
    std::optional<TokenId> stop_token;
    std::uint64_t seed = 0;

    // Throws std::invalid_argument on zero block sizes, a refinement budget
    // outside [1, macro_block] or negative tau.
    void validate() const;
};

/// Decoding session: committed prefix, its KV cache, and the active block.
struct DecodeState {
    std::vector<TokenId> committed;
    KVCache cache;
    std::vector<TokenId> active;
    std::size_t step_count = 0;
    std::size_t block_index = 0;
};

/// One refinement step. Positions are offsets inside the active block.
struct StepTrace {
    std::size_t block = 0;
    std::size_t step = 0;
    std::vector<std::size_t> committed;
    std::vector<std::pair<std::size_t, double>> entropies;
    Tensor logits; // active-block logits this step was decided from
};

// "block <k> step <j> commit <p,...> entropy <p>:<H>,..."
std::string format_trace(const StepTrace &t);

struct GenerateOptions {
    // false recomputes committed context every step instead of reading K/V
    // from the cache; the result must not change.
    bool use_cache = true;
    std::function<void(const StepTrace &)> on_step;
};

// Shannon entropy in nats, 0·ln 0 = 0, clamped to ln(size) against
// roundoff. Throws std::invalid_argument unless entries are >= 0 and sum to
// 1 within 1e-9.
double entropy(std::span<const double> p);

// Indices i with entropies[i] <= tau, plus the lowest-index argmin. Sorted,
// never empty for non-empty input.
std::vector<std::size_t> commit_set(std::span<const double> entropies, double tau);

// Refines state.active until no mask remains, committing entropy-selected
// positions each step. Returns the number of steps taken.
std::size_t refine_block(DecodeState &state, const Model &model, const DecodeConfig &cfg, Rng &rng,
                         const GenerateOptions &opts = {});

// As refine_block but completes sub-blocks of cfg.small_block left to right;
// attention stays over the whole active block, commits stay inside the
// current sub-block.
std::size_t refine_block_smallblocks(DecodeState &state, const Model &model, const DecodeConfig &cfg,
                                     Rng &rng, const GenerateOptions &opts = {});

// Prompt followed by the continuation. Throws std::invalid_argument before
// any compute when prompt + max_new_tokens exceeds max_positions.
std::vector<TokenId> generate(std::span<const TokenId> prompt, const Model &model,
                              const DecodeConfig &cfg, const GenerateOptions &opts = {});

struct EvalReport {
    double mdm_per_token = 0.0;
    double ar_per_token = 0.0;
    double total_per_token = 0.0; // mean over spans of mdm_sum/L + λ·ar_sum/L
    std::size_t spans = 0;
};

/// Denoising and AR losses on held-out spans with noise drawn from `seed`
/// (span i uses Rng(seed).split(i)). Throws std::invalid_argument when empty.
EvalReport perplexity_eval(const std::vector<std::vector<TokenId>> &spans, const Model &model,
                           std::size_t block_size, double lambda, std::uint64_t seed,
                           const MaskScheme &scheme = {},
                           CorruptionMode mode = CorruptionMode::per_block);

} // namespace bdiff
