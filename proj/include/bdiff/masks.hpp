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

#include "bdiff/rng.hpp"
#include "bdiff/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace bdiff {

struct BlockRange {
    std::size_t begin; // s_k
    std::size_t end;   // e_k, inclusive

    std::size_t length() const { return end - begin + 1; }
    friend bool operator==(const BlockRange &, const BlockRange &) = default;
};

/// Contiguous tiling of [0, seq_len) into blocks of block_size; only the last
/// block may be shorter.
class BlockPartition {
public:
    BlockPartition(std::size_t seq_len, std::size_t block_size);

    std::size_t seq_len() const { return seq_len_; }
    std::size_t block_size() const { return block_size_; }
    std::size_t num_blocks() const { return blocks_.size(); }
    const std::vector<BlockRange> &blocks() const { return blocks_; }
    const BlockRange &block(std::size_t k) const { return blocks_.at(k); }
    std::size_t block_of(std::size_t i) const { return i / block_size_; }

private:
    std::size_t seq_len_;
    std::size_t block_size_;
    std::vector<BlockRange> blocks_;
};

// Throws std::invalid_argument when L == 0 or b == 0.
BlockPartition partition(std::size_t seq_len, std::size_t block_size);

/// Dense boolean allow-matrix: allowed(i, j) means query i may attend key j.
class AttentionMask {
public:
    AttentionMask() = default;
    AttentionMask(std::size_t n_query, std::size_t n_key, bool fill = false);

    static AttentionMask from_predicate(std::size_t n_query, std::size_t n_key,
                                        const std::function<bool(std::size_t, std::size_t)> &pred);

    std::size_t n_query() const { return n_query_; }
    std::size_t n_key() const { return n_key_; }

    bool allowed(std::size_t i, std::size_t j) const { return allow_[i * n_key_ + j] != 0; }
    void set(std::size_t i, std::size_t j, bool v) { allow_[i * n_key_ + j] = v ? 1 : 0; }

    std::size_t count_allowed() const;

    // Sub-block [row0, row0+rows) × [col0, col0+cols).
    AttentionMask tile(std::size_t row0, std::size_t col0, std::size_t rows, std::size_t cols) const;
    void set_tile(std::size_t row0, std::size_t col0, const AttentionMask &t);

    // true → 0, false → -1e30.
    Tensor to_additive() const;

    // One line of '0'/'1' characters per query row.
    std::string to_text() const;

    friend bool operator==(const AttentionMask &, const AttentionMask &) = default;

private:
    std::size_t n_query_ = 0;
    std::size_t n_key_ = 0;
    std::vector<std::uint8_t> allow_;
};

enum class MaskSchemeTag { context_causal, block_causal, annealed };

/// Attention family used inside the clean context during training.
struct MaskScheme {
    MaskSchemeTag tag = MaskSchemeTag::context_causal;
    double anneal_ratio = 0.0; // annealed only
    std::uint64_t rng_seed = 0; // annealed only
};

std::string_view to_string(MaskSchemeTag tag);
// Throws std::invalid_argument on unknown names.
MaskSchemeTag parse_mask_scheme(std::string_view name);

AttentionMask context_causal_mask(std::size_t seq_len);
AttentionMask block_diagonal_mask(const BlockPartition &p);
AttentionMask offset_block_causal_mask(const BlockPartition &p);
AttentionMask block_causal_mask(const BlockPartition &p);

// Causal mask whose strictly-upper entries each flip to allowed with
// probability ratio; draw for entry (i, j) is rng.uniform_at(i * L + j).
AttentionMask annealed_mask(std::size_t seq_len, double ratio, const Rng &rng);

// (ctx_len + b_active)² mask: causal context, active rows see everything.
AttentionMask active_block_inference_mask(std::size_t ctx_len, std::size_t b_active);

// 2L×2L training mask [[BD, OBC], [0, CC]].
AttentionMask assemble_parallel_mask(const BlockPartition &p);
// Same layout with a caller-supplied clean-context tile (L×L).
AttentionMask assemble_parallel_mask(const BlockPartition &p, const AttentionMask &clean_tile);

// Clean-context tile for a scheme at the given partition.
AttentionMask clean_context_mask(const BlockPartition &p, const MaskScheme &scheme);

} // namespace bdiff
