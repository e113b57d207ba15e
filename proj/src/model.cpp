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

#include "bdiff/model.hpp"

#include "bdiff/errors.hpp"
#include "bdiff/ops.hpp"
#include "bdiff/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace bdiff {

void ModelConfig::validate() const {
    if (vocab_size < 2) {
        throw std::invalid_argument("model: vocab_size must be >= 2");
    }
    if (d_model == 0 || n_heads == 0 || n_layers == 0 || max_positions == 0) {
        throw std::invalid_argument("model: d_model, n_heads, n_layers, max_positions must be positive");
    }
    if (d_model % n_heads != 0) {
        throw std::invalid_argument("model: d_model must be divisible by n_heads");
    }
    if (head_dim() % 2 != 0) {
        throw std::invalid_argument("model: head dimension must be even for rotary encoding");
    }
    if (!(rope_base > 1.0)) {
        throw std::invalid_argument("model: rope_base must exceed 1");
    }
}

KVCache::KVCache(std::size_t n_layers, std::size_t n_heads, std::size_t head_dim)
    : n_heads_(n_heads),
      keys_(n_layers * n_heads, Tensor(0, head_dim)),
      values_(n_layers * n_heads, Tensor(0, head_dim)) {}

const Tensor &KVCache::keys(std::size_t layer, std::size_t head) const {
    return keys_.at(layer * n_heads_ + head);
}

const Tensor &KVCache::values(std::size_t layer, std::size_t head) const {
    return values_.at(layer * n_heads_ + head);
}

std::size_t Model::add_param(const std::string &name, Tensor value) {
    params_.push_back({name, leaf(std::move(value), true)});
    return params_.size() - 1;
}

Model::Model(const ModelConfig &config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(seed);
    const std::size_t d = config_.d_model;
    const std::size_t ff = config_.ff_dim();
    auto normal = [&](std::size_t r, std::size_t c, double std_dev) {
        Tensor t(r, c);
        if (std_dev != 0.0) {
            for (auto &v : t.data()) {
                v = std_dev * rng.normal();
            }
        }
        return t;
    };
    const double s = config_.init_std;
    tok_emb_ = add_param("tok_emb", normal(config_.vocab_size, d, s));
    for (std::size_t l = 0; l < config_.n_layers; ++l) {
        const std::string pre = "layers." + std::to_string(l) + ".";
        LayerParams lp{};
        lp.ln1_gain = add_param(pre + "ln1.gain", Tensor(1, d, 1.0));
        lp.ln1_bias = add_param(pre + "ln1.bias", Tensor(1, d));
        lp.wq = add_param(pre + "attn.wq", normal(d, d, s));
        lp.wk = add_param(pre + "attn.wk", normal(d, d, s));
        lp.wv = add_param(pre + "attn.wv", normal(d, d, s));
        lp.wo = add_param(pre + "attn.wo", normal(d, d, s));
        lp.ln2_gain = add_param(pre + "ln2.gain", Tensor(1, d, 1.0));
        lp.ln2_bias = add_param(pre + "ln2.bias", Tensor(1, d));
        lp.w1 = add_param(pre + "mlp.w1", normal(d, ff, s));
        lp.b1 = add_param(pre + "mlp.b1", Tensor(1, ff));
        lp.w2 = add_param(pre + "mlp.w2", normal(ff, d, s));
        lp.b2 = add_param(pre + "mlp.b2", Tensor(1, d));
        layers_.push_back(lp);
    }
    lnf_gain_ = add_param("ln_f.gain", Tensor(1, d, 1.0));
    lnf_bias_ = add_param("ln_f.bias", Tensor(1, d));
    head_ = add_param("head.w", normal(d, config_.vocab_size, config_.head_init_std));
}

Model::Model(const Model &other)
    : config_(other.config_),
      tok_emb_(other.tok_emb_),
      layers_(other.layers_),
      lnf_gain_(other.lnf_gain_),
      lnf_bias_(other.lnf_bias_),
      head_(other.head_) {
    params_.reserve(other.params_.size());
    for (const auto &prm : other.params_) {
        params_.push_back({prm.name, leaf(prm.var->value, true)});
    }
}

Model &Model::operator=(const Model &other) {
    if (this != &other) {
        Model copy(other);
        *this = std::move(copy);
    }
    return *this;
}

Parameter &Model::parameter(const std::string &name) {
    for (auto &prm : params_) {
        if (prm.name == name) {
            return prm;
        }
    }
    throw std::out_of_range("no parameter named '" + name + "'");
}

void Model::check_positions(std::span<const std::int32_t> positions) const {
    for (auto pos : positions) {
        if (pos < 0 || static_cast<std::size_t>(pos) >= config_.max_positions) {
            throw std::out_of_range("position id " + std::to_string(pos) +
                                    " outside [0, max_positions=" +
                                    std::to_string(config_.max_positions) + ")");
        }
    }
}

Var Model::run(std::span<const TokenId> tokens, std::span<const std::int32_t> positions,
               const Tensor &additive_mask, const KVCache *prefix, std::vector<Tensor> *kv_out,
               const std::vector<bool> *scrub_values) const {
    const std::size_t n = tokens.size();
    const std::size_t n_heads = config_.n_heads;
    const std::size_t dh = config_.head_dim();
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    Var scrub;
    if (scrub_values != nullptr) {
        Tensor diag(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            diag(i, i) = (*scrub_values)[i] ? 0.0 : 1.0;
        }
        scrub = constant(std::move(diag));
    }

    Var x = ops::embedding_lookup(p(tok_emb_), tokens);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const LayerParams &lp = layers_[l];
        const Var h = ops::layer_norm(x, p(lp.ln1_gain), p(lp.ln1_bias));
        const Var q = ops::matmul(h, p(lp.wq));
        const Var k = ops::matmul(h, p(lp.wk));
        Var v = ops::matmul(h, p(lp.wv));
        if (scrub) {
            v = ops::matmul(scrub, v);
        }
        std::vector<Var> heads;
        heads.reserve(n_heads);
        for (std::size_t hd = 0; hd < n_heads; ++hd) {
            const Var qh = ops::rotary(ops::slice_cols(q, hd * dh, dh), positions, config_.rope_base);
            Var kh = ops::rotary(ops::slice_cols(k, hd * dh, dh), positions, config_.rope_base);
            Var vh = ops::slice_cols(v, hd * dh, dh);
            if (kv_out != nullptr) {
                kv_out->push_back(kh->value);
                kv_out->push_back(vh->value);
            }
            if (prefix != nullptr && prefix->committed_len() > 0) {
                kh = ops::concat_rows({constant(prefix->keys(l, hd)), kh});
                vh = ops::concat_rows({constant(prefix->values(l, hd)), vh});
            }
            const Var scores = ops::scale(ops::matmul(qh, kh, true), inv_sqrt_dh);
            const Var probs = ops::softmax_with_additive_mask(scores, additive_mask);
            heads.push_back(ops::matmul(probs, vh));
        }
        const Var attn = heads.size() == 1 ? heads.front() : ops::concat_cols(heads);
        x = ops::add(x, ops::matmul(attn, p(lp.wo)));
        const Var h2 = ops::layer_norm(x, p(lp.ln2_gain), p(lp.ln2_bias));
        const Var f = ops::gelu(ops::add(ops::matmul(h2, p(lp.w1)), p(lp.b1)));
        x = ops::add(x, ops::add(ops::matmul(f, p(lp.w2)), p(lp.b2)));
    }
    const Var hf = ops::layer_norm(x, p(lnf_gain_), p(lnf_bias_));
    return ops::matmul(hf, p(head_));
}

Var Model::forward(std::span<const TokenId> tokens, const AttentionMask &mask,
                   std::span<const std::int32_t> positions) const {
    if (mask.n_query() != tokens.size() || mask.n_key() != tokens.size()) {
        throw ShapeError("forward: mask " + std::to_string(mask.n_query()) + "x" +
                         std::to_string(mask.n_key()) + " for " + std::to_string(tokens.size()) +
                         " tokens");
    }
    if (positions.size() != tokens.size()) {
        throw ShapeError("forward: " + std::to_string(positions.size()) + " positions for " +
                         std::to_string(tokens.size()) + " tokens");
    }
    check_positions(positions);
    return run(tokens, positions, mask.to_additive(), nullptr, nullptr, nullptr);
}

Var Model::forward_scrubbed(std::span<const TokenId> tokens, const AttentionMask &mask,
                            std::span<const std::int32_t> positions,
                            const std::vector<bool> &scrub_values) const {
    if (mask.n_query() != tokens.size() || mask.n_key() != tokens.size() ||
        positions.size() != tokens.size() || scrub_values.size() != tokens.size()) {
        throw ShapeError("forward_scrubbed: operand lengths disagree");
    }
    check_positions(positions);
    return run(tokens, positions, mask.to_additive(), nullptr, nullptr, &scrub_values);
}

KVCache Model::make_cache() const {
    return KVCache(config_.n_layers, config_.n_heads, config_.head_dim());
}

namespace {

std::vector<std::int32_t> continue_positions(std::size_t start, std::size_t count) {
    std::vector<std::int32_t> pos(count);
    for (std::size_t i = 0; i < count; ++i) {
        pos[i] = static_cast<std::int32_t>(start + i);
    }
    return pos;
}

} // namespace

Tensor Model::forward_cached(std::span<const TokenId> new_tokens, const KVCache &cache) const {
    if (new_tokens.empty()) {
        return Tensor(0, config_.vocab_size);
    }
    const std::size_t c = cache.committed_len();
    if (c + new_tokens.size() > config_.max_positions) {
        throw std::out_of_range("forward_cached: " + std::to_string(c) + " cached + " +
                                std::to_string(new_tokens.size()) + " new tokens exceed max_positions=" +
                                std::to_string(config_.max_positions));
    }
    const auto positions = continue_positions(c, new_tokens.size());
    NoGradGuard no_grad;
    const Tensor all_allowed(new_tokens.size(), c + new_tokens.size(), 0.0);
    return run(new_tokens, positions, all_allowed, &cache, nullptr, nullptr)->value;
}

void Model::commit_to_cache(KVCache &cache, std::span<const TokenId> tokens) const {
    if (tokens.empty()) {
        return;
    }
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] == config_.mask_token_id()) {
            throw std::invalid_argument("commit_to_cache: mask token at offset " + std::to_string(i));
        }
    }
    const std::size_t c = cache.committed_len();
    if (c + tokens.size() > config_.max_positions) {
        throw std::out_of_range("commit_to_cache: cache would exceed max_positions=" +
                                std::to_string(config_.max_positions));
    }
    const auto positions = continue_positions(c, tokens.size());
    Tensor additive(tokens.size(), c + tokens.size(), 0.0);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        for (std::size_t j = i + 1; j < tokens.size(); ++j) {
            additive(i, c + j) = ops::kMaskedLogit;
        }
    }
    NoGradGuard no_grad;
    std::vector<Tensor> kv;
    run(tokens, positions, additive, &cache, &kv, nullptr);
    // kv holds (K, V) per head, layer-major.
    for (std::size_t slot = 0; slot < cache.keys_.size(); ++slot) {
        cache.keys_[slot].append_rows(kv[2 * slot]);
        cache.values_[slot].append_rows(kv[2 * slot + 1]);
    }
    cache.tokens_.insert(cache.tokens_.end(), tokens.begin(), tokens.end());
    cache.committed_len_ += tokens.size();
}

} // namespace bdiff
