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

#include "bdiff/train.hpp"

#include "bdiff/errors.hpp"
#include "bdiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace bdiff {

namespace {

constexpr std::uint64_t kTrainStream = 0x7472'6169'6eULL;

Var zero_scalar() { return constant(Tensor::scalar(0.0)); }

} // namespace

std::vector<bool> ar_supervision_rows(const AttentionMask &clean_tile) {
    const std::size_t L = clean_tile.n_query();
    std::vector<bool> supervised(L, false);
    if (L < 2) {
        return supervised;
    }
    const std::size_t words = (L + 63) / 64;
    std::vector<std::uint64_t> reach(L * words, 0);
    auto bit = [&](std::size_t i, std::size_t j) -> bool {
        return (reach[i * words + j / 64] >> (j % 64)) & 1U;
    };
    for (std::size_t i = 0; i < L; ++i) {
        for (std::size_t j = 0; j < L; ++j) {
            if (clean_tile.allowed(i, j)) {
                reach[i * words + j / 64] |= std::uint64_t{1} << (j % 64);
            }
        }
    }
    // Warshall closure over bitset rows.
    for (std::size_t k = 0; k < L; ++k) {
        for (std::size_t i = 0; i < L; ++i) {
            if (bit(i, k)) {
                for (std::size_t w = 0; w < words; ++w) {
                    reach[i * words + w] |= reach[k * words + w];
                }
            }
        }
    }
    for (std::size_t i = 0; i + 1 < L; ++i) {
        supervised[i] = !bit(i, i + 1);
    }
    return supervised;
}

TrainBatch build_training_batch(std::span<const TokenId> x, std::size_t block_size, const Rng &rng,
                                const BatchOptions &opts) {
    if (x.empty()) {
        throw std::invalid_argument("build_training_batch: empty sequence");
    }
    const std::size_t L = x.size();
    TrainBatch batch;
    batch.partition = partition(L, block_size);
    batch.noised = corrupt_blocks(x, batch.partition, opts.mode, rng, opts.mask_token_id, opts.forced_t);
    const AttentionMask clean_tile = clean_context_mask(batch.partition, opts.scheme);
    batch.mask = assemble_parallel_mask(batch.partition, clean_tile);
    batch.ar_supervised = opts.scheme.tag == MaskSchemeTag::context_causal
                              ? std::vector<bool>(L, true)
                              : ar_supervision_rows(clean_tile);
    batch.ar_supervised[L - 1] = false;
    batch.tokens = batch.noised.tokens;
    batch.tokens.insert(batch.tokens.end(), x.begin(), x.end());
    batch.positions.resize(2 * L);
    for (std::size_t i = 0; i < L; ++i) {
        batch.positions[i] = static_cast<std::int32_t>(i);
        batch.positions[L + i] = static_cast<std::int32_t>(i);
    }
    batch.visible = batch.noised.visible;
    batch.targets.assign(x.begin(), x.end());
    return batch;
}

LossTerm mdm_loss(const Var &noised_logits, std::span<const TokenId> targets,
                  const std::vector<bool> &visible, std::span<const double> weights) {
    const std::size_t L = targets.size();
    if (noised_logits->value.rows() != L || visible.size() != L ||
        (!weights.empty() && weights.size() != L)) {
        throw ShapeError("mdm_loss: logits " + noised_logits->value.shape_str() + " for " +
                         std::to_string(L) + " targets");
    }
    std::vector<double> w(L, 0.0);
    std::size_t count = 0;
    for (std::size_t i = 0; i < L; ++i) {
        if (!visible[i]) {
            w[i] = weights.empty() ? 1.0 : weights[i];
            ++count;
        }
    }
    if (count == 0) {
        return {zero_scalar(), 0};
    }
    const Var nll = ops::cross_entropy_from_logits(noised_logits, targets);
    return {ops::weighted_sum(nll, w), count};
}

LossTerm ar_loss(const Var &clean_logits, std::span<const TokenId> x,
                 const std::vector<bool> *supervised) {
    const std::size_t L = x.size();
    if (clean_logits->value.rows() != L) {
        throw ShapeError("ar_loss: logits " + clean_logits->value.shape_str() + " for " +
                         std::to_string(L) + " tokens");
    }
    if (L < 2) {
        return {zero_scalar(), 0};
    }
    std::vector<double> w(L - 1, 0.0);
    std::size_t count = 0;
    for (std::size_t i = 0; i + 1 < L; ++i) {
        if (supervised == nullptr || (*supervised)[i]) {
            w[i] = 1.0;
            ++count;
        }
    }
    if (count == 0) {
        return {zero_scalar(), 0};
    }
    const Var nll = ops::cross_entropy_from_logits(ops::slice_rows(clean_logits, 0, L - 1), x.subspan(1));
    return {ops::weighted_sum(nll, w), count};
}

double LossReport::mdm_per_token() const {
    return mdm_count == 0 ? 0.0 : mdm_sum / static_cast<double>(mdm_count);
}

double LossReport::ar_per_token() const {
    return ar_count == 0 ? 0.0 : ar_sum / static_cast<double>(ar_count);
}

namespace {

LossReport compute_total_loss(const TrainBatch &batch, const Model &model, double lambda,
                              bool elbo_weighting, unsigned long long batch_seed) {
    const std::size_t L = batch.seq_len();
    const Var logits = model.forward(batch.tokens, batch.mask, batch.positions);
    const Var noised = ops::slice_rows(logits, 0, L);
    const Var clean = ops::slice_rows(logits, L, L);

    std::vector<double> weights;
    if (elbo_weighting) {
        weights.assign(L, 1.0);
        for (std::size_t i = 0; i < L; ++i) {
            const double t = batch.noised.per_block_t.empty()
                                 ? batch.noised.step
                                 : batch.noised.per_block_t[batch.partition.block_of(i)];
            if (t > 0.0) {
                weights[i] = 1.0 / t;
            }
        }
    }
    const LossTerm mdm = mdm_loss(noised, batch.targets, batch.visible, weights);
    const LossTerm ar = ar_loss(clean, batch.targets, &batch.ar_supervised);

    LossReport r;
    r.seq_len = L;
    r.lambda = lambda;
    r.mdm_sum = mdm.sum->value[0];
    r.mdm_count = mdm.count;
    r.ar_sum = ar.sum->value[0];
    r.ar_count = ar.count;
    const double inv_l = 1.0 / static_cast<double>(L);
    r.objective = ops::add(ops::scale(mdm.sum, inv_l), ops::scale(ar.sum, lambda * inv_l));
    r.total = r.objective->value[0];
    if (!std::isfinite(r.total)) {
        throw DivergenceError(0, batch_seed);
    }
    return r;
}

} // namespace


LossReport total_loss(const TrainBatch &batch, const Model &model, double lambda,
                      bool elbo_weighting, unsigned long long batch_seed) {
    try {
        return compute_total_loss(batch, model, lambda, elbo_weighting, batch_seed);
    } catch (const NonFiniteError &) {
        throw DivergenceError(0, batch_seed);
    }
}

double naive_block_loss(std::span<const TokenId> x, const BlockPartition &p, const Model &model,
                        const NoisedView &noise) {
    const std::size_t L = x.size();
    if (p.seq_len() != L || noise.tokens.size() != L) {
        throw ShapeError("naive_block_loss: length mismatch");
    }
    NoGradGuard no_grad;
    double sum = 0.0;
    for (const auto &block : p.blocks()) {
        const std::size_t ctx = block.begin;
        const std::size_t n = block.length();
        std::vector<TokenId> seq(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(ctx));
        std::vector<TokenId> targets;
        std::vector<bool> visible;
        for (std::size_t i = block.begin; i <= block.end; ++i) {
            seq.push_back(noise.tokens[i]);
            targets.push_back(x[i]);
            visible.push_back(noise.visible[i]);
        }
        if (std::find(visible.begin(), visible.end(), false) == visible.end()) {
            continue;
        }
        std::vector<std::int32_t> positions(ctx + n);
        for (std::size_t i = 0; i < positions.size(); ++i) {
            positions[i] = static_cast<std::int32_t>(i);
        }
        const Var logits = model.forward(seq, active_block_inference_mask(ctx, n), positions);
        const Var block_logits = ops::slice_rows(logits, ctx, n);
        sum += mdm_loss(block_logits, targets, visible).sum->value[0];
    }
    return sum / static_cast<double>(L);
}

Adam::Adam(const std::vector<Parameter> &params) {
    for (const auto &p : params) {
        m_.emplace_back(p.var->value.rows(), p.var->value.cols());
        v_.emplace_back(p.var->value.rows(), p.var->value.cols());
    }
}

double Adam::step(std::vector<Parameter> &params, double lr, const AdamConfig &cfg) {
    if (m_.size() != params.size()) {
        throw std::invalid_argument("Adam: optimizer state does not match parameters");
    }
    double sq = 0.0;
    for (auto &p : params) {
        for (double g : p.var->grad_buffer().data()) {
            sq += g * g;
        }
    }
    const double norm = std::sqrt(sq);
    const double clip = (cfg.grad_clip > 0.0 && norm > cfg.grad_clip) ? cfg.grad_clip / norm : 1.0;
    ++t_;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto w = params[k].var->value.data();
        const auto g = params[k].var->grad_buffer().data();
        auto m = m_[k].data();
        auto v = v_[k].data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g[i] * clip;
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
        }
    }
    return norm;
}

double lr_at(std::size_t step, std::size_t total_steps, double base_lr, double cooldown_frac) {
    const auto cooldown = static_cast<std::size_t>(
        std::llround(static_cast<double>(total_steps) * cooldown_frac));
    const std::size_t start = total_steps - cooldown;
    if (cooldown == 0 || step < start) {
        return base_lr;
    }
    const double frac = static_cast<double>(total_steps - step) / static_cast<double>(cooldown);
    return base_lr * std::max(0.0, frac);
}

void TrainSettings::validate() const {
    if (!(lr > 0.0)) {
        throw std::invalid_argument("train: lr must be positive");
    }
    if (span_len == 0 || batch_size == 0) {
        throw std::invalid_argument("train: span_len and batch_size must be positive");
    }
    if (!(cooldown_frac >= 0.0 && cooldown_frac <= 1.0)) {
        throw std::invalid_argument("train: cooldown_frac must lie in [0, 1]");
    }
    if (!(holdout_frac >= 0.0 && holdout_frac < 1.0)) {
        throw std::invalid_argument("train: holdout_frac must lie in [0, 1)");
    }
    if (!(scheme.anneal_ratio >= 0.0 && scheme.anneal_ratio <= 1.0)) {
        throw std::invalid_argument("train: anneal_ratio must lie in [0, 1]");
    }
}

std::string format_metrics(const MetricsRecord &r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.6f,%.6f,%.6f,%.6f", r.step, r.block_size, r.lambda,
                  r.mdm_per_token, r.ar_per_token, r.total);
    return buf;
}

MetricsRecord parse_metrics(const std::string &line) {
    MetricsRecord r;
    char comma = 0;
    std::istringstream in(line);
    if (!(in >> r.step >> comma >> r.block_size >> comma >> r.lambda >> comma >> r.mdm_per_token >>
          comma >> r.ar_per_token >> comma >> r.total)) {
        throw std::invalid_argument("malformed metrics record: " + line);
    }
    return r;
}

TrainBatch make_step_batch(const SpanSampler &sampler, const GrowthSchedule &g,
                           const TrainSettings &settings, TokenId mask_token_id, std::size_t step,
                           std::size_t micro) {
    const Rng rng = Rng(settings.seed).split(kTrainStream).split(step).split(micro);
    Rng span_rng = rng.split(0);
    const std::vector<TokenId> span = sampler.sample(span_rng);
    BatchOptions opts;
    opts.mode = settings.corruption;
    opts.scheme = settings.scheme;
    opts.scheme.rng_seed = rng.split(2).key();
    opts.mask_token_id = mask_token_id;
    return build_training_batch(span, block_size_at(step, g), rng.split(1), opts);
}

void train_loop(Model &model, const SpanSampler &sampler, const GrowthSchedule &g,
                const TrainSettings &settings, TrainState &state, const TrainCallbacks &callbacks) {
    settings.validate();
    g.validate();
    auto &params = model.parameters();
    if (state.optimizer.first_moments().size() != params.size()) {
        state.optimizer = Adam(params);
    }
    const AdamConfig adam = settings.adam();
    const TokenId mask_id = model.config().mask_token_id();
    for (std::size_t s = state.step; s < settings.steps; ++s) {
        const double lambda = lambda_at(s, g);
        zero_grad(params);
        double mdm_sum = 0.0, ar_sum = 0.0, total = 0.0;
        std::size_t mdm_count = 0, ar_count = 0;
        for (std::size_t micro = 0; micro < settings.batch_size; ++micro) {
            const TrainBatch batch = make_step_batch(sampler, g, settings, mask_id, s, micro);
            LossReport rep;
            try {
                rep = total_loss(batch, model, lambda, settings.elbo_weighting, settings.seed);
            } catch (const NonFiniteError &) {
                throw DivergenceError(s, settings.seed);
            } catch (const DivergenceError &) {
                throw DivergenceError(s, settings.seed);
            }
            backward(ops::scale(rep.objective, 1.0 / static_cast<double>(settings.batch_size)));
            mdm_sum += rep.mdm_sum;
            ar_sum += rep.ar_sum;
            mdm_count += rep.mdm_count;
            ar_count += rep.ar_count;
            total += rep.total;
        }
        for (auto &p : params) {
            for (double gv : p.var->grad_buffer().data()) {
                if (!std::isfinite(gv)) {
                    throw DivergenceError(s, settings.seed);
                }
            }
        }
        state.optimizer.step(params, lr_at(s, settings.steps, settings.lr, settings.cooldown_frac), adam);
        state.step = s + 1;
        if (callbacks.on_metrics) {
            MetricsRecord rec;
            rec.step = s;
            rec.block_size = block_size_at(s, g);
            rec.lambda = lambda;
            rec.mdm_per_token = mdm_count == 0 ? 0.0 : mdm_sum / static_cast<double>(mdm_count);
            rec.ar_per_token = ar_count == 0 ? 0.0 : ar_sum / static_cast<double>(ar_count);
            rec.total = total / static_cast<double>(settings.batch_size);
            callbacks.on_metrics(rec);
        }
        if (callbacks.on_checkpoint && settings.checkpoint_every > 0 &&
            state.step % settings.checkpoint_every == 0) {
            callbacks.on_checkpoint(state.step, model, state);
        }
    }
}

} // namespace bdiff
