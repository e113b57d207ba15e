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

#include "bdiff/corruption.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

namespace bdiff {

std::size_t NoisedView::masked_count() const {
    return static_cast<std::size_t>(std::count(visible.begin(), visible.end(), false));
}

std::string_view to_string(CorruptionMode mode) {
    return mode == CorruptionMode::per_block ? "per_block" : "per_sequence";
}

CorruptionMode parse_corruption_mode(std::string_view name) {
    if (name == "per_block") {
        return CorruptionMode::per_block;
    }
    if (name == "per_sequence") {
        return CorruptionMode::per_sequence;
    }
    throw std::invalid_argument("unknown corruption mode '" + std::string(name) + "'");
}

double sample_step(Rng &rng) { return rng.uniform(); }

namespace {

void check_clean(std::span<const TokenId> x, const BlockPartition &p, TokenId mask_token_id) {
    if (x.size() != p.seq_len()) {
        throw std::invalid_argument("corruption: sequence length " + std::to_string(x.size()) +
                                    " does not match partition length " +
                                    std::to_string(p.seq_len()));
    }
    const auto it = std::find(x.begin(), x.end(), mask_token_id);
    if (it != x.end()) {
        throw std::invalid_argument("corruption: mask token found in clean input at position " +
                                    std::to_string(it - x.begin()) + " (corrupt tokenization)");
    }
}

void mask_range(NoisedView &view, const BlockRange &block, double t, const Rng &positions,
                TokenId mask_token_id) {
    for (std::size_t i = block.begin; i <= block.end; ++i) {
        if (positions.uniform_at(i) < t) {
            view.tokens[i] = mask_token_id;
            view.visible[i] = false;
        }
    }
}

} // namespace

NoisedView corrupt_blocks(std::span<const TokenId> x, const BlockPartition &p, CorruptionMode mode,
                          const Rng &rng, TokenId mask_token_id, std::optional<double> forced_t) {
    check_clean(x, p, mask_token_id);
    NoisedView view{{x.begin(), x.end()}, std::vector<bool>(x.size(), true), 0.0, {}};
    const Rng steps = rng.split(kStepStream);
    const Rng positions = rng.split(kPositionStream);
    if (mode == CorruptionMode::per_sequence) {
        view.step = forced_t.value_or(steps.uniform_at(0));
        for (const auto &block : p.blocks()) {
            mask_range(view, block, view.step, positions, mask_token_id);
        }
        return view;
    }
    for (std::size_t k = 0; k < p.num_blocks(); ++k) {
        const double t = forced_t.value_or(steps.uniform_at(k));
        view.per_block_t.push_back(t);
        mask_range(view, p.block(k), t, positions, mask_token_id);
    }
    view.step = std::accumulate(view.per_block_t.begin(), view.per_block_t.end(), 0.0) /
                static_cast<double>(view.per_block_t.size());
    return view;
}

NoisedView corrupt_last_block(std::span<const TokenId> x, const BlockPartition &p, double t,
                              const Rng &rng, TokenId mask_token_id) {
    check_clean(x, p, mask_token_id);
    NoisedView view{{x.begin(), x.end()}, std::vector<bool>(x.size(), true), t, {}};
    mask_range(view, p.blocks().back(), t, rng.split(kPositionStream), mask_token_id);
    return view;
}

} // namespace bdiff
