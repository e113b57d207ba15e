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

#include "bdiff/corpus.hpp"
#include "bdiff/corruption.hpp"
#include "bdiff/masks.hpp"
#include "bdiff/model.hpp"
#include "bdiff/rng.hpp"
#include "bdiff/schedule.hpp"

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace bdiff {

/// One parallel training example: the noised view followed by the clean
/// sequence (2L tokens) under the structured mask, with noised position i and
/// clean position i sharing position id i.
struct TrainBatch {
    std::vector<TokenId> tokens;
    AttentionMask mask;
    std::vector<std::int32_t> positions;
    std::vector<bool> visible;
    BlockPartition partition{1, 1};
    std::vector<TokenId> targets;
    NoisedView noised;
    // Clean-branch rows whose next-token target is not reachable through the
    // clean-context tile. All rows but the last under context_causal.
    std::vector<bool> ar_supervised;

    std::size_t seq_len() const { return targets.size(); }
};

struct BatchOptions {
    CorruptionMode mode = CorruptionMode::per_block;
    MaskScheme scheme{};
    std::optional<double> forced_t;
    TokenId mask_token_id = static_cast<TokenId>(kByteVocabSize - 1);
};

TrainBatch build_training_batch(std::span<const TokenId> x, std::size_t block_size, const Rng &rng,
                                const BatchOptions &opts = {});

// Clean rows whose successor is unreachable from them through `clean_tile`
// (transitive closure), excluding the last row.
std::vector<bool> ar_supervision_rows(const AttentionMask &clean_tile);

struct LossTerm {
    Var sum;
    std::size_t count = 0;
};

// Σ cross-entropy over rows with visible[i] == false. `weights`, when
// non-empty, scales each row (used for optional 1/t reweighting).
LossTerm mdm_loss(const Var &noised_logits, std::span<const TokenId> targets,
                  const std::vector<bool> &visible, std::span<const double> weights = {});

// Σ_{i < L-1} cross-entropy(logits[i], x[i+1]), optionally restricted to
// supervised rows.
LossTerm ar_loss(const Var &clean_logits, std::span<const TokenId> x,
                 const std::vector<bool> *supervised = nullptr);

struct LossReport {
    double mdm_sum = 0.0;
    double ar_sum = 0.0;
    std::size_t mdm_count = 0;
    std::size_t ar_count = 0;
    std::size_t seq_len = 0;
    double lambda = 0.0;
    // mdm_sum / L + lambda · ar_sum / L
    double total = 0.0;
    Var objective;

    double mdm_per_token() const;
    double ar_per_token() const;
};

/// One forward over the 2L batch; mdm on rows [0, L), AR on rows [L, 2L).
/// Throws DivergenceError (carrying `batch_seed`) on a non-finite total.
LossReport total_loss(const TrainBatch &batch, const Model &model, double lambda,
                      bool elbo_weighting = false, unsigned long long batch_seed = 0);

/// Sequential reference: for every block k, forward clean x[0, s_k) followed
/// by noised block k under active_block_inference_mask and accumulate the
/// masked-position cross-entropy. Returns the sum divided by L.
double naive_block_loss(std::span<const TokenId> x, const BlockPartition &p, const Model &model,
                        const NoisedView &noise);

struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double grad_clip = 1.0; // global norm; 0 disables
};

class Adam {
public:
    Adam() = default;
    explicit Adam(const std::vector<Parameter> &params);

    // Applies one update at learning rate lr. Returns the pre-clip grad norm.
    double step(std::vector<Parameter> &params, double lr, const AdamConfig &cfg);

    std::size_t steps_taken() const { return t_; }
    std::vector<Tensor> &first_moments() { return m_; }
    std::vector<Tensor> &second_moments() { return v_; }
    const std::vector<Tensor> &first_moments() const { return m_; }
    const std::vector<Tensor> &second_moments() const { return v_; }
    void set_steps_taken(std::size_t t) { t_ = t; }

private:
    std::size_t t_ = 0;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
};

// Constant lr, then linear decay to zero over the final cooldown_frac of
// total_steps.
double lr_at(std::size_t step, std::size_t total_steps, double base_lr, double cooldown_frac);

struct TrainSettings {
    double lr = 3e-4;
    std::size_t steps = 1000;
    std::size_t span_len = 256;
    std::size_t batch_size = 1;
    std::uint64_t seed = 0;
    std::string corpus;
    MaskScheme scheme{};
    CorruptionMode corruption = CorruptionMode::per_block;
    double cooldown_frac = 0.2;
    double grad_clip = 1.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    std::size_t checkpoint_every = 0;
    double holdout_frac = 0.1;
    bool elbo_weighting = false;

    void validate() const;
    AdamConfig adam() const { return {lr, beta1, beta2, 1e-8, grad_clip}; }
};

struct MetricsRecord {
    std::size_t step = 0;
    std::size_t block_size = 0;
    double lambda = 0.0;
    double mdm_per_token = 0.0;
    double ar_per_token = 0.0;
    double total = 0.0;
};

// "step,b,lambda,mdm_per_token,ar_per_token,total"
std::string format_metrics(const MetricsRecord &r);
MetricsRecord parse_metrics(const std::string &line);

struct TrainState {
    std::size_t step = 0;
    Adam optimizer;
};

struct TrainCallbacks {
    std::function<void(const MetricsRecord &)> on_metrics;
    // Called after `steps_done` steps whenever checkpoint_every divides it.
    std::function<void(std::size_t steps_done, const Model &, const TrainState &)> on_checkpoint;
};

/// The parallel batch of a given step and micro-batch; a pure function of
/// (seed, step, micro).
TrainBatch make_step_batch(const SpanSampler &sampler, const GrowthSchedule &g,
                           const TrainSettings &settings, TokenId mask_token_id, std::size_t step,
                           std::size_t micro);

/// Runs steps [state.step, settings.steps). Parameters are only updated after
/// the loss and gradients of a step are verified finite, so on
/// DivergenceError the model holds the last good weights.
void train_loop(Model &model, const SpanSampler &sampler, const GrowthSchedule &g,
                const TrainSettings &settings, TrainState &state, const TrainCallbacks &callbacks = {});

} // namespace bdiff
