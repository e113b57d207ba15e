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
#include "bdiff/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace bdiff {

// Byte-level vocabulary: ids 0-255 are bytes, then BOS, then the mask token.
inline constexpr TokenId kBosToken = 256;
inline constexpr std::size_t kByteVocabSize = 258;

struct ModelConfig {
    std::size_t vocab_size = kByteVocabSize;
    std::size_t d_model = 128;
    std::size_t n_heads = 4;
    std::size_t n_layers = 4;
    std::size_t d_ff = 0; // 0 means 4 · d_model
    std::size_t max_positions = 1024;
    double rope_base = 10000.0;
    double init_std = 0.02;
    // 0 gives a zero LM head, i.e. uniform predictions at initialization.
    double head_init_std = 0.0;

    // The last vocabulary id is reserved for the mask token.
    TokenId mask_token_id() const { return static_cast<TokenId>(vocab_size - 1); }
    std::size_t ff_dim() const { return d_ff == 0 ? 4 * d_model : d_ff; }
    std::size_t head_dim() const { return d_model / n_heads; }

    void validate() const;
};

/// Post-rotary keys and values of committed positions, per layer and head.
/// Rows are never modified once appended.
class KVCache {
public:
    KVCache() = default;
    KVCache(std::size_t n_layers, std::size_t n_heads, std::size_t head_dim);

    std::size_t committed_len() const { return committed_len_; }
    const std::vector<TokenId> &tokens() const { return tokens_; }
    const Tensor &keys(std::size_t layer, std::size_t head) const;
    const Tensor &values(std::size_t layer, std::size_t head) const;

private:
    friend class Model;

    std::size_t n_heads_ = 0;
    std::size_t committed_len_ = 0;
    std::vector<TokenId> tokens_;
    std::vector<Tensor> keys_;
    std::vector<Tensor> values_;
};

/// Decoder-only pre-LN transformer with rotary positions and an untied LM
/// head shared by the AR and denoising predictions.
class Model {
public:
    Model(const ModelConfig &config, std::uint64_t seed);
    Model(const Model &other);
    Model &operator=(const Model &other);
    Model(Model &&) noexcept = default;
    Model &operator=(Model &&) noexcept = default;

    const ModelConfig &config() const { return config_; }
    std::vector<Parameter> &parameters() { return params_; }
    const std::vector<Parameter> &parameters() const { return params_; }
    // Throws std::out_of_range for unknown names.
    Parameter &parameter(const std::string &name);

    /// Logits [tokens × vocab] under an arbitrary square mask. Records a graph
    /// unless a NoGradGuard is active.
    Var forward(std::span<const TokenId> tokens, const AttentionMask &mask,
                std::span<const std::int32_t> positions) const;

    /// As forward(), with the value vectors of keys flagged in `scrub_values`
    /// zeroed at every layer. Used to check that masked keys are inert.
    Var forward_scrubbed(std::span<const TokenId> tokens, const AttentionMask &mask,
                         std::span<const std::int32_t> positions,
                         const std::vector<bool> &scrub_values) const;

    KVCache make_cache() const;

    /// Logits for an active block that attends every cached position and
    /// every active position. Positions continue from committed_len. The cache
    /// is not modified.
    Tensor forward_cached(std::span<const TokenId> new_tokens, const KVCache &cache) const;

    /// Appends fully decoded tokens to the cache, encoding them causally.
    void commit_to_cache(KVCache &cache, std::span<const TokenId> tokens) const;

private:
    struct LayerParams {
        std::size_t ln1_gain, ln1_bias, wq, wk, wv, wo, ln2_gain, ln2_bias, w1, b1, w2, b2;
    };

    const Var &p(std::size_t idx) const { return params_[idx].var; }
    std::size_t add_param(const std::string &name, Tensor value);
    void check_positions(std::span<const std::int32_t> positions) const;

    // Runs the stack over `tokens` whose queries see the cached prefix (if
    // any) followed by themselves under `additive_mask`
    // [n × (prefix + n)]. Appends new post-rotary K/V when kv_out is set.
    Var run(std::span<const TokenId> tokens, std::span<const std::int32_t> positions,
            const Tensor &additive_mask, const KVCache *prefix, std::vector<Tensor> *kv_out,
            const std::vector<bool> *scrub_values) const;

    ModelConfig config_;
    std::vector<Parameter> params_;
    std::size_t tok_emb_ = 0;
    std::vector<LayerParams> layers_;
    std::size_t lnf_gain_ = 0, lnf_bias_ = 0, head_ = 0;
};

} // namespace bdiff
