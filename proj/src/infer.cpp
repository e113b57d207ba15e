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

#include "bdiff/infer.hpp"

#include "bdiff/ops.hpp"
#include "bdiff/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace bdiff {

void DecodeConfig::validate() const {
    if (macro_block == 0 || small_block == 0) {
        throw std::invalid_argument("decode: block sizes must be positive");
    }
    if (max_refine_steps && (*max_refine_steps < 1 || *max_refine_steps > macro_block)) {
        throw std::invalid_argument("decode: refinement steps must lie in [1, macro_block]");
    }
    if (!(tau >= 0.0)) {
        throw std::invalid_argument("decode: tau must be non-negative");
    }
    if (!(temperature >= 0.0)) {
        throw std::invalid_argument("decode: temperature must be non-negative");
    }
}

std::string format_trace(const StepTrace &t) {
    std::string out = "block " + std::to_string(t.block) + " step " + std::to_string(t.step) + " commit ";
    for (std::size_t i = 0; i < t.committed.size(); ++i) {
        out += (i ? "," : "") + std::to_string(t.committed[i]);
    }
    out += " entropy ";
    char buf[48];
    for (std::size_t i = 0; i < t.entropies.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%s%zu:%.6f", i ? "," : "", t.entropies[i].first,
                      t.entropies[i].second);
        out += buf;
    }
    return out;
}

double entropy(std::span<const double> p) {
    double sum = 0.0;
    double h = 0.0;
    for (double v : p) {
        if (!(v >= 0.0)) {
            throw std::invalid_argument("entropy: negative or NaN probability");
        }
        sum += v;
        if (v > 0.0) {
            h -= v * std::log(v);
        }
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw std::invalid_argument("entropy: probabilities sum to " + std::to_string(sum));
    }
    return std::min(h, std::log(static_cast<double>(p.size())));
}

std::vector<std::size_t> commit_set(std::span<const double> entropies, double tau) {
    std::vector<std::size_t> out;
    if (entropies.empty()) {
        return out;
    }
    const auto argmin = static_cast<std::size_t>(
        std::min_element(entropies.begin(), entropies.end()) - entropies.begin());
    for (std::size_t i = 0; i < entropies.size(); ++i) {
        if (entropies[i] <= tau || i == argmin) {
            out.push_back(i);
        }
    }
    return out;
}

namespace {

Tensor active_logits(const DecodeState &st, const Model &model, bool use_cache) {
    if (use_cache) {
        return model.forward_cached(st.active, st.cache);
    }
    NoGradGuard no_grad;
    const std::size_t c = st.committed.size();
    const std::size_t b = st.active.size();
    std::vector<TokenId> seq = st.committed;
    seq.insert(seq.end(), st.active.begin(), st.active.end());
    std::vector<std::int32_t> positions(c + b);
    for (std::size_t i = 0; i < positions.size(); ++i) {
        positions[i] = static_cast<std::int32_t>(i);
    }
    const Var logits = model.forward(seq, active_block_inference_mask(c, b), positions);
    return ops::slice_rows(logits, c, b)->value;
}

std::vector<double> softmax(std::span<const double> z, double temperature) {
    std::vector<double> p(z.size());
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        p[i] = std::exp((z[i] - mx) / temperature);
        sum += p[i];
    }
    for (auto &v : p) {
        v /= sum;
    }
    return p;
}

// Highest-logit id other than the mask token; lowest id wins ties.
TokenId argmax_token(std::span<const double> z, TokenId mask_id) {
    TokenId best = -1;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const auto id = static_cast<TokenId>(i);
        if (id != mask_id && (best < 0 || z[i] > z[static_cast<std::size_t>(best)])) {
            best = id;
        }
    }
    return best;
}

TokenId sample_token(std::span<const double> z, double temperature, TokenId mask_id, Rng &rng) {
    std::vector<double> p = softmax(z, temperature);
    p[static_cast<std::size_t>(mask_id)] = 0.0;
    double total = 0.0;
    for (double v : p) {
        total += v;
    }
    const double u = rng.uniform() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        acc += p[i];
        if (p[i] > 0.0 && u < acc) {
            return static_cast<TokenId>(i);
        }
    }
    return argmax_token(z, mask_id);
}

// Decodes active positions [lo, hi) within `budget` steps.
std::size_t refine_range(DecodeState &st, const Model &model, const DecodeConfig &cfg, Rng &rng,
                         const GenerateOptions &opts, std::size_t lo, std::size_t hi,
                         std::size_t budget) {
    const TokenId mask_id = model.config().mask_token_id();
    std::size_t steps = 0;
    for (;;) {
        std::vector<std::size_t> masked;
        for (std::size_t i = lo; i < hi; ++i) {
            if (st.active[i] == mask_id) {
                masked.push_back(i);
            }
        }
        if (masked.empty()) {
            break;
        }
        const Tensor logits = active_logits(st, model, opts.use_cache);
        std::vector<double> h(masked.size());
        for (std::size_t k = 0; k < masked.size(); ++k) {
            h[k] = entropy(softmax(logits.row(masked[k]), 1.0));
        }
        const bool last = steps + 1 >= budget;
        std::vector<std::size_t> chosen = commit_set(h, cfg.tau);
        std::vector<bool> picked(masked.size(), false);
        for (auto k : chosen) {
            picked[k] = true;
        }
        StepTrace trace;
        trace.block = st.block_index;
        trace.step = steps;
        for (std::size_t k = 0; k < masked.size(); ++k) {
            trace.entropies.emplace_back(masked[k], h[k]);
            if (!picked[k] && !last) {
                continue;
            }
            const auto row = logits.row(masked[k]);
            const bool sample = picked[k] && cfg.temperature > 0.0;
            st.active[masked[k]] =
                sample ? sample_token(row, cfg.temperature, mask_id, rng) : argmax_token(row, mask_id);
            trace.committed.push_back(masked[k]);
        }
        ++steps;
        ++st.step_count;
        if (opts.on_step) {
            trace.logits = logits;
            opts.on_step(trace);
        }
    }
    return steps;
}

std::size_t budget_for(const DecodeConfig &cfg, std::size_t block_len) {
    return cfg.max_refine_steps.value_or(block_len);
}

} // namespace

std::size_t refine_block(DecodeState &state, const Model &model, const DecodeConfig &cfg, Rng &rng,
                         const GenerateOptions &opts) {
    cfg.validate();
    return refine_range(state, model, cfg, rng, opts, 0, state.active.size(),
                        budget_for(cfg, state.active.size()));
}

std::size_t refine_block_smallblocks(DecodeState &state, const Model &model, const DecodeConfig &cfg,
                                     Rng &rng, const GenerateOptions &opts) {
    cfg.validate();
    const std::size_t b = state.active.size();
    const std::size_t total_budget = budget_for(cfg, b);
    std::size_t steps = 0;
    for (std::size_t lo = 0; lo < b; lo += cfg.small_block) {
        const std::size_t hi = std::min(b, lo + cfg.small_block);
        const std::size_t len = hi - lo;
        // Budget shared out in proportion to sub-block length.
        const std::size_t budget = std::clamp<std::size_t>((total_budget * len + b - 1) / b, 1, len);
        steps += refine_range(state, model, cfg, rng, opts, lo, hi,
                              len == b ? total_budget : budget);
    }
    return steps;
}

std::vector<TokenId> generate(std::span<const TokenId> prompt, const Model &model,
                              const DecodeConfig &cfg, const GenerateOptions &opts) {
    cfg.validate();
    if (prompt.size() + cfg.max_new_tokens > model.config().max_positions) {
        throw std::invalid_argument("generate: prompt (" + std::to_string(prompt.size()) + ") + " +
                                    std::to_string(cfg.max_new_tokens) +
                                    " new tokens exceed max_positions=" +
                                    std::to_string(model.config().max_positions));
    }
    const TokenId mask_id = model.config().mask_token_id();
    DecodeState st;
    st.committed.assign(prompt.begin(), prompt.end());
    if (opts.use_cache) {
        st.cache = model.make_cache();
        model.commit_to_cache(st.cache, prompt);
    }
    Rng rng = Rng(cfg.seed).split(0x6465'636fULL);
    std::size_t produced = 0;
    while (produced < cfg.max_new_tokens) {
        const std::size_t len = std::min(cfg.macro_block, cfg.max_new_tokens - produced);
        st.active.assign(len, mask_id);
        if (cfg.small_block < len) {
            refine_block_smallblocks(st, model, cfg, rng, opts);
        } else {
            refine_block(st, model, cfg, rng, opts);
        }
        auto stop = st.active.end();
        if (cfg.stop_token) {
            stop = std::find(st.active.begin(), st.active.end(), *cfg.stop_token);
            if (stop != st.active.end()) {
                ++stop;
            }
        }
        const std::vector<TokenId> block(st.active.begin(), stop);
        st.committed.insert(st.committed.end(), block.begin(), block.end());
        if (stop != st.active.end()) {
            break;
        }
        if (opts.use_cache) {
            model.commit_to_cache(st.cache, block);
        }
        produced += len;
        ++st.block_index;
    }
    return st.committed;
}

EvalReport perplexity_eval(const std::vector<std::vector<TokenId>> &spans, const Model &model,
                           std::size_t block_size, double lambda, std::uint64_t seed,
                           const MaskScheme &scheme, CorruptionMode mode) {
    if (spans.empty()) {
        throw std::invalid_argument("perplexity_eval: no held-out spans");
    }
    NoGradGuard no_grad;
    double mdm_sum = 0.0, ar_sum = 0.0, total = 0.0;
    std::size_t mdm_count = 0, ar_count = 0;
    for (std::size_t i = 0; i < spans.size(); ++i) {
        const Rng rng = Rng(seed).split(i);
        BatchOptions opts;
        opts.mode = mode;
        opts.scheme = scheme;
        opts.scheme.rng_seed = rng.split(2).key();
        opts.mask_token_id = model.config().mask_token_id();
        const TrainBatch batch = build_training_batch(spans[i], block_size, rng.split(1), opts);
        const LossReport r = total_loss(batch, model, lambda);
        mdm_sum += r.mdm_sum;
        ar_sum += r.ar_sum;
        mdm_count += r.mdm_count;
        ar_count += r.ar_count;
        total += r.total;
    }
    EvalReport rep;
    rep.mdm_per_token = mdm_count ? mdm_sum / static_cast<double>(mdm_count) : 0.0;
    rep.ar_per_token = ar_count ? ar_sum / static_cast<double>(ar_count) : 0.0;
    rep.total_per_token = total / static_cast<double>(spans.size());
    rep.spans = spans.size();
    return rep;
}

} // namespace bdiff
