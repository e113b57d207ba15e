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

#include "support.hpp"

#include "bdiff/checkpoint.hpp"
#include "bdiff/corpus.hpp"
#include "bdiff/errors.hpp"
#include "bdiff/oracles.hpp"
#include "bdiff/train.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

using namespace bdiff;

namespace {

Model zero_head_model() {
    ModelConfig c;
    c.d_model = 16;
    c.n_heads = 2;
    c.n_layers = 1;
    c.max_positions = 64;
    return Model(c, 3);
}

// -log softmax(row)[target], computed directly from the logits.
double nll(const Tensor &z, std::size_t row, TokenId target) {
    const auto r = z.row(row);
    double mx = r[0];
    for (double v : r) {
        mx = std::max(mx, v);
    }
    double s = 0.0;
    for (double v : r) {
        s += std::exp(v - mx);
    }
    return mx + std::log(s) - r[static_cast<std::size_t>(target)];
}

TrainSettings small_settings(std::size_t steps) {
    TrainSettings s;
    s.lr = 3e-3;
    s.steps = steps;
    s.span_len = 16;
    s.seed = 5;
    return s;
}

GrowthSchedule small_schedule() {
    GrowthSchedule g;
    g.interval = 10;
    g.b_max = 4;
    return g;
}

Model small_model(std::uint64_t seed) {
    ModelConfig c;
    c.d_model = 16;
    c.n_heads = 2;
    c.n_layers = 1;
    c.max_positions = 32;
    c.init_std = 0.1;
    return Model(c, seed);
}

} // namespace

TEST_SUITE("train") {

TEST_CASE("uniform predictions give ln V per token") {
    const Model m = zero_head_model();
    const std::vector<TokenId> x = {10, 20, 30, 40, 50, 60, 70, 80};
    BatchOptions opts;
    opts.forced_t = 1.0;
    const TrainBatch b = build_training_batch(x, 4, Rng(1), opts);
    const LossReport r = total_loss(b, m, 0.5);
    const double lnv = std::log(258.0);
    CHECK(r.mdm_count == 8);
    CHECK(r.ar_count == 7);
    CHECK(r.mdm_per_token() == doctest::Approx(lnv).epsilon(1e-12));
    CHECK(r.ar_per_token() == doctest::Approx(lnv).epsilon(1e-12));
    CHECK(r.total == doctest::Approx(lnv * (1.0 + 0.5 * 7.0 / 8.0)).epsilon(1e-12));
}

TEST_CASE("single token with nothing masked has zero loss") {
    const Model m = random_oracle_model(4);
    const std::vector<TokenId> x = {42};
    BatchOptions opts;
    opts.forced_t = 0.0;
    const LossReport r = total_loss(build_training_batch(x, 1, Rng(0), opts), m, 0.5);
    CHECK(r.mdm_count == 0);
    CHECK(r.ar_count == 0);
    CHECK(r.total == 0.0);
}

TEST_CASE("total loss matches a scalar recomputation from the logits") {
    const Model m = random_oracle_model(6);
    Rng rng(7);
    for (const auto tag : {MaskSchemeTag::context_causal, MaskSchemeTag::block_causal}) {
        const auto x = random_tokens(rng, 13);
        BatchOptions opts;
        opts.scheme.tag = tag;
        const TrainBatch b = build_training_batch(x, 4, Rng(8), opts);
        const LossReport r = total_loss(b, m, 0.3);
        Tensor z;
        {
            NoGradGuard g;
            z = m.forward(b.tokens, b.mask, b.positions)->value;
        }
        double mdm = 0.0, ar = 0.0;
        for (std::size_t i = 0; i < 13; ++i) {
            if (b.tokens[i] == m.config().mask_token_id()) {
                mdm += nll(z, i, x[i]);
            }
            if (i + 1 < 13 && b.ar_supervised[i]) {
                ar += nll(z, 13 + i, x[i + 1]);
            }
        }
        CHECK(std::abs(r.mdm_sum - mdm) < 1e-9);
        CHECK(std::abs(r.ar_sum - ar) < 1e-9);
        CHECK(std::abs(r.total - (mdm / 13 + 0.3 * ar / 13)) < 1e-9);
    }
}

TEST_CASE("lambda enters linearly") {
    const Model m = random_oracle_model(9);
    Rng rng(10);
    const auto x = random_tokens(rng, 16);
    const TrainBatch b = build_training_batch(x, 4, Rng(11));
    const LossReport r0 = total_loss(b, m, 0.0);
    CHECK(std::abs(r0.total - r0.mdm_sum / 16) < 1e-12);
    double prev = r0.total;
    for (double lambda : {0.1, 0.5, 1.0, 2.0}) {
        const LossReport r = total_loss(b, m, lambda);
        CHECK(std::abs(r.total - (r0.total + lambda * r0.ar_sum / 16)) < 1e-12);
        CHECK(r.total >= prev);
        prev = r.total;
    }
}

TEST_CASE("AR supervision follows clean-tile reachability") {
    const auto p = partition(8, 4);
    const auto bc = ar_supervision_rows(block_causal_mask(p));
    const std::vector<bool> want = {false, false, false, true, false, false, false, false};
    CHECK(bc == want);
    const auto cc = ar_supervision_rows(context_causal_mask(8));
    CHECK(std::count(cc.begin(), cc.end(), true) == 7);
    CHECK_FALSE(cc[7]);
    const std::vector<TokenId> x = {1, 2, 3, 4, 5, 6, 7, 8};
    BatchOptions opts;
    opts.scheme.tag = MaskSchemeTag::block_causal;
    CHECK(build_training_batch(x, 4, Rng(0), opts).ar_supervised == want);
}

TEST_CASE("batch layout shares positions between views") {
    const std::vector<TokenId> x = {5, 6, 7, 8, 9};
    const TrainBatch b = build_training_batch(x, 2, Rng(3));
    REQUIRE(b.tokens.size() == 10);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(b.positions[i] == static_cast<std::int32_t>(i));
        CHECK(b.positions[5 + i] == static_cast<std::int32_t>(i));
        CHECK(b.tokens[5 + i] == x[i]);
    }
    CHECK(b.mask == assemble_parallel_mask(partition(5, 2)));
    CHECK_THROWS_AS(build_training_batch(std::vector<TokenId>{}, 2, Rng(3)), std::invalid_argument);
}

TEST_CASE("step batches replay from the seed") {
    const SpanSampler sampler(Corpus::from_bytes(synthetic_corpus(2000, 1)), 16);
    const TrainSettings s = small_settings(10);
    const GrowthSchedule g = small_schedule();
    const TrainBatch a = make_step_batch(sampler, g, s, 257, 7, 0);
    const TrainBatch b = make_step_batch(sampler, g, s, 257, 7, 0);
    CHECK(a.tokens == b.tokens);
    CHECK(a.visible == b.visible);
    const TrainBatch c = make_step_batch(sampler, g, s, 257, 8, 0);
    CHECK(a.tokens != c.tokens);
    CHECK(make_step_batch(sampler, g, s, 257, 25, 0).partition.block_size() == 4);
}

TEST_CASE("naive block loss agrees with the parallel objective") {
    const Model m = random_oracle_model(13);
    Rng rng(14);
    for (std::size_t b : {1, 3, 4, 11}) {
        const auto x = random_tokens(rng, 11);
        const TrainBatch batch = build_training_batch(x, b, Rng(b));
        const LossReport r = total_loss(batch, m, 0.0);
        CHECK(std::abs(naive_block_loss(x, batch.partition, m, batch.noised) - r.total) < 1e-9);
    }
    const auto x = random_tokens(rng, 8);
    const auto p = partition(8, 4);
    auto noise = corrupt_blocks(x, p, CorruptionMode::per_block, Rng(1), 257, 0.0);
    CHECK(naive_block_loss(x, p, m, noise) == 0.0);
    noise.tokens[6] = 257;
    noise.visible[6] = false;
    BatchOptions opts;
    opts.forced_t = 0.0;
    TrainBatch batch = build_training_batch(x, 4, Rng(1), opts);
    batch.tokens[6] = 257;
    batch.visible[6] = false;
    CHECK(std::abs(naive_block_loss(x, p, m, noise) - total_loss(batch, m, 0.0).total) < 1e-9);
}

TEST_CASE("learning rate cooldown") {
    CHECK(lr_at(0, 100, 1.0, 0.2) == 1.0);
    CHECK(lr_at(79, 100, 1.0, 0.2) == 1.0);
    CHECK(lr_at(80, 100, 1.0, 0.2) == doctest::Approx(1.0));
    CHECK(lr_at(90, 100, 1.0, 0.2) == doctest::Approx(0.5));
    CHECK(lr_at(99, 100, 1.0, 0.2) == doctest::Approx(0.05));
    CHECK(lr_at(50, 100, 2.0, 0.0) == 2.0);
}

TEST_CASE("metrics records round trip") {
    MetricsRecord r;
    r.step = 12;
    r.block_size = 4;
    r.lambda = 0.25;
    r.mdm_per_token = 1.5;
    r.ar_per_token = 2.25;
    r.total = 1.125;
    CHECK(format_metrics(r) == "12,4,0.250000,1.500000,2.250000,1.125000");
    const MetricsRecord back = parse_metrics(format_metrics(r));
    CHECK(back.step == 12);
    CHECK(back.total == 1.125);
    CHECK_THROWS_AS(parse_metrics("12,4"), std::invalid_argument);
}

TEST_CASE("training lowers the loss on a periodic corpus") {
    std::string text;
    for (int i = 0; i < 200; ++i) {
        text += "abcd";
    }
    const SpanSampler sampler(Corpus::from_bytes(text), 16);
    Model m = small_model(1);
    TrainSettings s = small_settings(150);
    s.lr = 1e-2;
    std::vector<double> totals;
    TrainCallbacks cb;
    cb.on_metrics = [&](const MetricsRecord &r) { totals.push_back(r.total); };
    TrainState st;
    train_loop(m, sampler, small_schedule(), s, st, cb);
    REQUIRE(totals.size() == 150);
    const double head = std::accumulate(totals.begin(), totals.begin() + 10, 0.0) / 10;
    const double tail = std::accumulate(totals.end() - 10, totals.end(), 0.0) / 10;
    CHECK(tail < 0.5 * head);
    CHECK(st.step == 150);
    CHECK(st.optimizer.steps_taken() == 150);
}

TEST_CASE("resuming replays the uninterrupted run") {
    const SpanSampler sampler(Corpus::from_bytes(synthetic_corpus(4000, 2)), 16);
    const GrowthSchedule g = small_schedule();
    const TrainSettings s = small_settings(24);

    Model straight = small_model(7);
    TrainState st_a;
    train_loop(straight, sampler, g, s, st_a);

    TrainSettings half = s;
    half.checkpoint_every = 12;
    RunConfig rc;
    rc.train = s;
    std::optional<Model> snapshot;
    TrainState snap_state;
    std::optional<Checkpoint> saved;
    TrainCallbacks cb;
    cb.on_checkpoint = [&](std::size_t done, const Model &m, const TrainState &st) {
        if (done == 12) {
            snapshot.emplace(m);
            snap_state = st;
            rc.model = m.config();
            saved = make_checkpoint(rc, m, &st);
        }
    };
    Model again = small_model(7);
    TrainState st_c;
    train_loop(again, sampler, g, half, st_c, cb);
    REQUIRE(snapshot.has_value());

    // In-memory continuation is bit-exact.
    train_loop(*snapshot, sampler, g, s, snap_state);
    for (std::size_t i = 0; i < straight.parameters().size(); ++i) {
        CHECK(max_abs_diff(straight.parameters()[i].var->value, snapshot->parameters()[i].var->value) ==
              0.0);
    }

    // Through a float32 checkpoint the continuation stays close.
    REQUIRE(saved.has_value());
    const Checkpoint ck = parse_checkpoint(serialize_checkpoint(*saved));
    Model from_disk = restore_model(ck);
    TrainState st_d;
    REQUIRE(restore_train_state(ck, from_disk, st_d));
    CHECK(st_d.step == 12);
    CHECK(st_d.optimizer.steps_taken() == 12);
    train_loop(from_disk, sampler, g, s, st_d);
    for (std::size_t i = 0; i < straight.parameters().size(); ++i) {
        CHECK(max_abs_diff(straight.parameters()[i].var->value, from_disk.parameters()[i].var->value) <
              1e-4);
    }
}

TEST_CASE("non-finite weights raise DivergenceError and leave weights untouched") {
    const SpanSampler sampler(Corpus::from_bytes(synthetic_corpus(1000, 3)), 16);
    Model m = small_model(2);
    const auto w = m.parameters()[0].var->value.data();
    std::fill(w.begin(), w.end(), std::numeric_limits<double>::quiet_NaN());
    const Tensor before = m.parameters()[1].var->value;
    TrainState st;
    try {
        train_loop(m, sampler, small_schedule(), small_settings(5), st);
        FAIL("expected divergence");
    } catch (const DivergenceError &e) {
        CHECK(e.step() == 0);
        CHECK(e.seed() == 5);
    }
    CHECK(max_abs_diff(before, m.parameters()[1].var->value) == 0.0);
    CHECK(st.step == 0);
}

TEST_CASE("settings validation") {
    TrainSettings s;
    s.lr = 0.0;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s = {};
    s.span_len = 0;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s = {};
    s.cooldown_frac = 1.5;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

} // TEST_SUITE
