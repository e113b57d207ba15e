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

#include "bdiff/masks.hpp"

#include "bdiff/errors.hpp"
#include "bdiff/ops.hpp"

#include <algorithm>
#include <stdexcept>

namespace bdiff {

BlockPartition::BlockPartition(std::size_t seq_len, std::size_t block_size)
    : seq_len_(seq_len), block_size_(block_size) {
    if (seq_len == 0 || block_size == 0) {
        throw std::invalid_argument("partition: seq_len and block_size must be positive (got L=" +
                                    std::to_string(seq_len) + ", b=" +
                                    std::to_string(block_size) + ")");
    }
    for (std::size_t s = 0; s < seq_len; s += block_size) {
        blocks_.push_back({s, std::min(s + block_size, seq_len) - 1});
    }
}

BlockPartition partition(std::size_t seq_len, std::size_t block_size) {
    return BlockPartition(seq_len, block_size);
}

AttentionMask::AttentionMask(std::size_t n_query, std::size_t n_key, bool fill)
    : n_query_(n_query), n_key_(n_key), allow_(n_query * n_key, fill ? 1 : 0) {}

AttentionMask AttentionMask::from_predicate(
    std::size_t n_query, std::size_t n_key,
    const std::function<bool(std::size_t, std::size_t)> &pred) {
    AttentionMask m(n_query, n_key);
    for (std::size_t i = 0; i < n_query; ++i) {
        for (std::size_t j = 0; j < n_key; ++j) {
            m.set(i, j, pred(i, j));
        }
    }
    return m;
}

std::size_t AttentionMask::count_allowed() const {
    return static_cast<std::size_t>(std::count(allow_.begin(), allow_.end(), std::uint8_t{1}));
}

AttentionMask AttentionMask::tile(std::size_t row0, std::size_t col0, std::size_t rows,
                                  std::size_t cols) const {
    if (row0 + rows > n_query_ || col0 + cols > n_key_) {
        throw ShapeError("AttentionMask::tile out of range");
    }
    AttentionMask t(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            t.set(i, j, allowed(row0 + i, col0 + j));
        }
    }
    return t;
}

void AttentionMask::set_tile(std::size_t row0, std::size_t col0, const AttentionMask &t) {
    if (row0 + t.n_query() > n_query_ || col0 + t.n_key() > n_key_) {
        throw ShapeError("AttentionMask::set_tile out of range");
    }
    for (std::size_t i = 0; i < t.n_query(); ++i) {
        for (std::size_t j = 0; j < t.n_key(); ++j) {
            set(row0 + i, col0 + j, t.allowed(i, j));
        }
    }
}

Tensor AttentionMask::to_additive() const {
    Tensor t(n_query_, n_key_);
    for (std::size_t k = 0; k < allow_.size(); ++k) {
        t[k] = allow_[k] ? 0.0 : ops::kMaskedLogit;
    }
    return t;
}

std::string AttentionMask::to_text() const {
    std::string out;
    out.reserve(n_query_ * (n_key_ + 1));
    for (std::size_t i = 0; i < n_query_; ++i) {
        for (std::size_t j = 0; j < n_key_; ++j) {
            out.push_back(allowed(i, j) ? '1' : '0');
        }
        out.push_back('\n');
    }
    return out;
}

std::string_view to_string(MaskSchemeTag tag) {
    switch (tag) {
    case MaskSchemeTag::context_causal:
        return "context_causal";
    case MaskSchemeTag::block_causal:
        return "block_causal";
    case MaskSchemeTag::annealed:
        return "annealed";
    }
    return "?";
}

MaskSchemeTag parse_mask_scheme(std::string_view name) {
    if (name == "context_causal") {
        return MaskSchemeTag::context_causal;
    }
    if (name == "block_causal") {
        return MaskSchemeTag::block_causal;
    }
    if (name == "annealed") {
        return MaskSchemeTag::annealed;
    }
    throw std::invalid_argument("unknown mask scheme '" + std::string(name) + "'");
}

AttentionMask context_causal_mask(std::size_t seq_len) {
    return AttentionMask::from_predicate(seq_len, seq_len,
                                         [](std::size_t i, std::size_t j) { return j <= i; });
}

AttentionMask block_diagonal_mask(const BlockPartition &p) {
    return AttentionMask::from_predicate(p.seq_len(), p.seq_len(), [&](std::size_t i, std::size_t j) {
        return p.block_of(i) == p.block_of(j);
    });
}

AttentionMask offset_block_causal_mask(const BlockPartition &p) {
    return AttentionMask::from_predicate(p.seq_len(), p.seq_len(), [&](std::size_t i, std::size_t j) {
        return p.block_of(j) < p.block_of(i);
    });
}

AttentionMask block_causal_mask(const BlockPartition &p) {
    return AttentionMask::from_predicate(p.seq_len(), p.seq_len(), [&](std::size_t i, std::size_t j) {
        return p.block_of(j) <= p.block_of(i);
    });
}

AttentionMask annealed_mask(std::size_t seq_len, double ratio, const Rng &rng) {
    if (!(ratio >= 0.0 && ratio <= 1.0)) {
        throw std::invalid_argument("annealed_mask: ratio must lie in [0, 1]");
    }
    AttentionMask m = context_causal_mask(seq_len);
    for (std::size_t i = 0; i < seq_len; ++i) {
        for (std::size_t j = i + 1; j < seq_len; ++j) {
            if (rng.uniform_at(i * seq_len + j) < ratio) {
                m.set(i, j, true);
            }
        }
    }
    return m;
}

AttentionMask active_block_inference_mask(std::size_t ctx_len, std::size_t b_active) {
    const std::size_t n = ctx_len + b_active;
    return AttentionMask::from_predicate(n, n, [ctx_len](std::size_t i, std::size_t j) {
        if (i >= ctx_len) {
            return true;
        }
        return j <= i;
    });
}

AttentionMask assemble_parallel_mask(const BlockPartition &p) {
    return assemble_parallel_mask(p, context_causal_mask(p.seq_len()));
}

AttentionMask assemble_parallel_mask(const BlockPartition &p, const AttentionMask &clean_tile) {
    const std::size_t L = p.seq_len();
    if (clean_tile.n_query() != L || clean_tile.n_key() != L) {
        throw ShapeError("assemble_parallel_mask: clean tile must be " + std::to_string(L) + "x" +
                         std::to_string(L));
    }
    AttentionMask m(2 * L, 2 * L);
    m.set_tile(0, 0, block_diagonal_mask(p));
    m.set_tile(0, L, offset_block_causal_mask(p));
    m.set_tile(L, L, clean_tile);
    return m;
}

AttentionMask clean_context_mask(const BlockPartition &p, const MaskScheme &scheme) {
    switch (scheme.tag) {
    case MaskSchemeTag::context_causal:
        return context_causal_mask(p.seq_len());
    case MaskSchemeTag::block_causal:
        return block_causal_mask(p);
    case MaskSchemeTag::annealed:
        return annealed_mask(p.seq_len(), scheme.anneal_ratio, Rng(scheme.rng_seed));
    }
    throw std::invalid_argument("clean_context_mask: bad scheme");
}

} // namespace bdiff
