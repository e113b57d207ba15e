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

#include "bdiff/corpus.hpp"
#include "bdiff/infer.hpp"
#include "bdiff/oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

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

DecodeConfig greedy(std::size_t macro, std::size_t small, double tau, std::size_t n_new) {
    DecodeConfig d;
    d.macro_block = macro;
    d.small_block = small;
    d.tau = tau;
    d.max_new_tokens = n_new;
    return d;
}

double direct_entropy(std::initializer_list<double> p) {
    double h = 0.0;
    for (double v : p) {
        h += v * std::log(1.0 / v);
    }
    return h;
}

} // namespace

TEST_SUITE("infer") {

TEST_CASE("entropy") {
    const std::vector<double> p = {0.7, 0.1, 0.1, 0.1};
    CHECK(std::abs(entropy(p) - direct_entropy({0.7, 0.1, 0.1, 0.1})) < 1e-12);
    CHECK(entropy(p) == doctest::Approx(0.940447).epsilon(1e-6));
    const std::vector<double> onehot = {0.0, 1.0, 0.0};
    CHECK(entropy(onehot) == 0.0);
    const std::vector<double> uniform(8, 0.125);
    CHECK(std::abs(entropy(uniform) - std::log(8.0)) < 1e-12);
    CHECK(entropy(uniform) <= std::log(8.0));
    const std::vector<double> neg = {1.5, -0.5};
    CHECK_THROWS_AS(entropy(neg), std::invalid_argument);
    const std::vector<double> short_sum = {0.5, 0.4};
    CHECK_THROWS_AS(entropy(short_sum), std::invalid_argument);
    const std::vector<double> nan = {std::numeric_limits<double>::quiet_NaN(), 1.0};
    CHECK_THROWS_AS(entropy(nan), std::invalid_argument);
}

TEST_CASE("commit set") {
    const std::vector<double> h = {0.5, 0.9, 0.2};
    CHECK(commit_set(h, 0.6) == std::vector<std::size_t>{0, 2});
    CHECK(commit_set(h, 0.0) == std::vector<std::size_t>{2});
    CHECK(commit_set(h, 1.0) == std::vector<std::size_t>{0, 1, 2});
    const std::vector<double> tie = {0.3, 0.3, 0.3};
    CHECK(commit_set(tie, 0.1) == std::vector<std::size_t>{0});
    CHECK(commit_set(tie, 0.3) == std::vector<std::size_t>{0, 1, 2});
    CHECK(commit_set(std::vector<double>{}, 1.0).empty());
}

TEST_CASE("trace of a uniform model") {
    const Model m = zero_head_model();
    std::string trace;
    GenerateOptions opts;
    opts.on_step = [&](const StepTrace &t) { trace += format_trace(t) + "\n"; };
    const std::vector<TokenId> prompt = {kBosToken, 'h', 'i'};
    const auto out = generate(prompt, m, greedy(4, 4, std::numbers::ln2, 8), opts);
    CHECK(trace == testing::read_text(testing::golden_dir() / "trace_zero_head.txt"));
    // Every logit ties, so the lowest id wins.
    const std::vector<TokenId> want = {kBosToken, 'h', 'i', 0, 0, 0, 0, 0, 0, 0, 0};
    CHECK(out == want);
}

TEST_CASE("final step commits every remaining position") {
    const Model m = zero_head_model();
    DecodeConfig d = greedy(4, 4, 0.0, 4);
    d.max_refine_steps = 2;
    std::vector<std::vector<std::size_t>> commits;
    GenerateOptions opts;
    opts.on_step = [&](const StepTrace &t) { commits.push_back(t.committed); };
    const std::vector<TokenId> prompt = {kBosToken};
    const auto out = generate(prompt, m, d, opts);
    REQUIRE(commits.size() == 2);
    CHECK(commits[0] == std::vector<std::size_t>{0});
    CHECK(commits[1] == std::vector<std::size_t>{1, 2, 3});
    CHECK(out.size() == 5);
}

TEST_CASE("tau controls the number of refinement steps") {
    const Model m = random_oracle_model(17, 16, 2, 160);
    const std::vector<TokenId> prompt = {kBosToken, 'a', 'b'};
    std::size_t steps = 0;
    GenerateOptions opts;
    opts.on_step = [&](const StepTrace &t) {
        CHECK(t.committed.size() == 1);
        ++steps;
    };
    generate(prompt, m, greedy(8, 8, 0.0, 16), opts);
    CHECK(steps == 16);
    steps = 0;
    opts.on_step = [&](const StepTrace &t) {
        CHECK(t.committed.size() == 8);
        ++steps;
    };
    generate(prompt, m, greedy(8, 8, std::log(258.0), 16), opts);
    CHECK(steps == 2);
}

TEST_CASE("sub-blocks are completed left to right") {
    const Model m = random_oracle_model(19, 16, 2, 160);
    const std::vector<TokenId> prompt = {kBosToken, 'x'};
    std::vector<StepTrace> steps;
    GenerateOptions opts;
    opts.on_step = [&](const StepTrace &t) { steps.push_back(t); };
    generate(prompt, m, greedy(8, 4, 0.0, 8), opts);
    REQUIRE(steps.size() == 8);
    for (std::size_t s = 0; s < 8; ++s) {
        REQUIRE(steps[s].committed.size() == 1);
        CHECK(steps[s].committed[0] / 4 == s / 4);
        for (const auto &[pos, h] : steps[s].entropies) {
            CHECK(pos / 4 == s / 4);
        }
        CHECK(steps[s].logits.rows() == 8);
    }
}

TEST_CASE("refinement budget bounds steps per block") {
    const Model m = random_oracle_model(23, 16, 2, 160);
    const std::vector<TokenId> prompt = {kBosToken};
    for (std::size_t t = 1; t <= 8; ++t) {
        DecodeConfig d = greedy(8, 8, 0.0, 8);
        d.max_refine_steps = t;
        std::size_t steps = 0;
        GenerateOptions opts;
        opts.on_step = [&](const StepTrace &) { ++steps; };
        const auto out = generate(prompt, m, d, opts);
        CHECK(steps == t);
        CHECK(std::count(out.begin(), out.end(), m.config().mask_token_id()) == 0);
    }
}

TEST_CASE("decode config validation") {
    const Model m = zero_head_model();
    const std::vector<TokenId> prompt = {kBosToken};
    DecodeConfig d = greedy(4, 4, 0.5, 4);
    d.max_refine_steps = 0;
    CHECK_THROWS_AS(generate(prompt, m, d), std::invalid_argument);
    d.max_refine_steps = 5;
    CHECK_THROWS_AS(generate(prompt, m, d), std::invalid_argument);
    d = greedy(4, 4, -1.0, 4);
    CHECK_THROWS_AS(d.validate(), std::invalid_argument);
    d = greedy(0, 4, 0.5, 4);
    CHECK_THROWS_AS(d.validate(), std::invalid_argument);
    d = greedy(4, 4, 0.5, 64);
    CHECK_THROWS_AS(generate(prompt, m, d), std::invalid_argument);
}

TEST_CASE("zero new tokens returns the prompt") {
    const Model m = zero_head_model();
    const std::vector<TokenId> prompt = {kBosToken, 1, 2};
    CHECK(generate(prompt, m, greedy(4, 4, 0.5, 0)) == prompt);
}

TEST_CASE("refinement leaves the committed cache untouched") {
    const Model m = random_oracle_model(29, 16, 2, 160);
    Rng rng(30);
    DecodeState st;
    st.committed = random_tokens(rng, 12);
    st.cache = m.make_cache();
    m.commit_to_cache(st.cache, st.committed);
    const KVCache before = st.cache;
    st.active.assign(8, m.config().mask_token_id());
    Rng dr(1);
    DecodeConfig d = greedy(8, 8, 0.5, 8);
    d.temperature = 0.9;
    refine_block(st, m, d, dr);
    CHECK(st.cache.tokens() == before.tokens());
    for (std::size_t l = 0; l < 2; ++l) {
        for (std::size_t h = 0; h < 2; ++h) {
            CHECK(max_abs_diff(st.cache.keys(l, h), before.keys(l, h)) == 0.0);
            CHECK(max_abs_diff(st.cache.values(l, h), before.values(l, h)) == 0.0);
        }
    }
    CHECK(std::count(st.active.begin(), st.active.end(), m.config().mask_token_id()) == 0);
}

TEST_CASE("cached and uncached decoding agree on partially filled blocks") {
    const Model m = random_oracle_model(31, 16, 2, 160);
    Rng rng(32);
    const auto prompt = random_tokens(rng, 10);
    for (double temp : {0.0, 0.8}) {
        DecodeConfig d = greedy(8, 4, 0.7, 24);
        d.temperature = temp;
        d.seed = 4;
        std::vector<Tensor> cached_logits, plain_logits;
        GenerateOptions a;
        a.on_step = [&](const StepTrace &t) { cached_logits.push_back(t.logits); };
        GenerateOptions b;
        b.use_cache = false;
        b.on_step = [&](const StepTrace &t) { plain_logits.push_back(t.logits); };
        CHECK(generate(prompt, m, d, a) == generate(prompt, m, d, b));
        REQUIRE(cached_logits.size() == plain_logits.size());
        for (std::size_t i = 0; i < cached_logits.size(); ++i) {
            CHECK(max_abs_diff(cached_logits[i], plain_logits[i]) < 1e-9);
        }
    }
}

TEST_CASE("one-token blocks decode autoregressively") {
    const Model m = random_oracle_model(37, 16, 2, 160);
    Rng rng(38);
    const auto prompt = random_tokens(rng, 6);
    const auto out = generate(prompt, m, greedy(1, 1, 0.0, 20));
    CHECK(out == ar_greedy_reference(prompt, m, 20));
}

TEST_CASE("sampling is reproducible from the seed") {
    const Model m = random_oracle_model(41, 16, 2, 160);
    const std::vector<TokenId> prompt = {kBosToken, 'q'};
    DecodeConfig d = greedy(4, 4, 0.5, 16);
    d.temperature = 1.0;
    d.seed = 9;
    const auto a = generate(prompt, m, d);
    CHECK(a == generate(prompt, m, d));
    d.seed = 10;
    CHECK(a != generate(prompt, m, d));
    for (auto t : a) {
        CHECK(t != m.config().mask_token_id());
    }
}

TEST_CASE("stop token truncates the continuation") {
    const Model m = zero_head_model();
    DecodeConfig d = greedy(4, 4, 0.5, 12);
    d.stop_token = 0;
    const std::vector<TokenId> prompt = {kBosToken};
    const std::vector<TokenId> want = {kBosToken, 0};
    CHECK(generate(prompt, m, d) == want);
}

TEST_CASE("held-out evaluation") {
    const Model m = zero_head_model();
    const Corpus c = Corpus::from_bytes(synthetic_corpus(400, 5));
    const auto spans = tile_spans(c, 32, 4);
    const EvalReport r = perplexity_eval(spans, m, 8, 0.5, 3);
    CHECK(r.spans == 4);
    CHECK(r.mdm_per_token == doctest::Approx(std::log(258.0)).epsilon(1e-12));
    CHECK(r.ar_per_token == doctest::Approx(std::log(258.0)).epsilon(1e-12));
    const Model rm = random_oracle_model(43);
    const EvalReport a = perplexity_eval(spans, rm, 8, 0.5, 3);
    const EvalReport b = perplexity_eval(spans, rm, 8, 0.5, 3);
    CHECK(a.total_per_token == b.total_per_token);
    CHECK_THROWS_AS(perplexity_eval({}, m, 8, 0.5, 3), std::invalid_argument);
}

} // TEST_SUITE
