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

#include "bdiff/oracles.hpp"

#include "bdiff/grad_check.hpp"
#include "bdiff/infer.hpp"
#include "bdiff/ops.hpp"
#include "bdiff/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace bdiff {

namespace {

constexpr const char *kGolden4x2 = "11000000\n"
                                   "11000000\n"
                                   "00111100\n"
                                   "00111100\n"
                                   "00001000\n"
                                   "00001100\n"
                                   "00001110\n"
                                   "00001111\n";

std::vector<std::int32_t> iota_positions(std::size_t n) {
    std::vector<std::int32_t> p(n);
    for (std::size_t i = 0; i < n; ++i) {
        p[i] = static_cast<std::int32_t>(i);
    }
    return p;
}

double rel_diff(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

// Σ_{i < n-1} -log softmax(row i)[x[i+1]] from raw logits.
double causal_nll_sum(const Tensor &logits, std::size_t row0, std::span<const TokenId> x) {
    double sum = 0.0;
    for (std::size_t i = 0; i + 1 < x.size(); ++i) {
        const auto row = logits.row(row0 + i);
        const double mx = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (double v : row) {
            z += std::exp(v - mx);
        }
        sum += mx + std::log(z) - row[static_cast<std::size_t>(x[i + 1])];
    }
    return sum;
}

std::uint64_t case_seed(const OracleOptions &opts, std::uint64_t family, std::size_t k) {
    return Rng(opts.seed).split(family).split(k).key();
}

void fail_case(OracleResult &r, std::uint64_t seed, const std::string &detail) {
    if (r.pass) {
        r.pass = false;
        r.counterexample_seed = seed;
        r.detail = detail;
    }
}

const std::size_t kBlockChoices[] = {1, 2, 4, 8, 16};

std::size_t pick_block(Rng &rng, std::size_t L) {
    std::vector<std::size_t> ok;
    for (auto b : kBlockChoices) {
        if (b <= L) {
            ok.push_back(b);
        }
    }
    return ok[rng.below(ok.size())];
}

Model case_model(const OracleOptions &opts, std::uint64_t seed, std::size_t d_model = 16) {
    return opts.model ? *opts.model : random_oracle_model(seed, d_model, 2);
}

} // namespace

std::string_view to_string(Mutation m) {
    switch (m) {
    case Mutation::none:
        return "none";
    case Mutation::obc_offset:
        return "obc_offset";
    case Mutation::position_desync:
        return "position_desync";
    }
    return "none";
}

Mutation parse_mutation(std::string_view name) {
    for (auto m : {Mutation::none, Mutation::obc_offset, Mutation::position_desync}) {
        if (name == to_string(m)) {
            return m;
        }
    }
    throw std::invalid_argument("unknown mutation '" + std::string(name) +
                                "' (expected none, obc_offset or position_desync)");
}

void apply_mutation(TrainBatch &batch, Mutation m) {
    const std::size_t L = batch.seq_len();
    switch (m) {
    case Mutation::none:
        break;
    case Mutation::obc_offset:
        for (std::size_t i = 0; i < L; ++i) {
            for (std::size_t j = 0; j < L; ++j) {
                batch.mask.set(i, L + j,
                               batch.partition.block_of(j) <= batch.partition.block_of(i));
            }
        }
        break;
    case Mutation::position_desync:
        for (std::size_t i = 0; i < L; ++i) {
            batch.positions[L + i] = static_cast<std::int32_t>(i + 1);
        }
        break;
    }
}

std::string format_result(const OracleResult &r) {
    char worst[32];
    std::snprintf(worst, sizeof worst, "%.3e", r.worst);
    std::string out = std::string(r.pass ? "PASS " : "FAIL ") + r.name + " cases=" +
                      std::to_string(r.cases) + " worst=" + worst;
    if (r.counterexample_seed) {
        out += " seed=" + std::to_string(*r.counterexample_seed);
    }
    if (!r.detail.empty()) {
        out += " (" + r.detail + ")";
    }
    return out;
}

bool parallel_mask_predicate(std::size_t L, std::size_t b, std::size_t i, std::size_t j) {
    const bool qn = i < L;
    const bool kn = j < L;
    const std::size_t qi = qn ? i : i - L;
    const std::size_t kj = kn ? j : j - L;
    if (qn && kn) {
        return qi / b == kj / b;
    }
    if (qn) {
        return kj / b < qi / b;
    }
    if (kn) {
        return false;
    }
    return kj <= qi;
}

Model random_oracle_model(std::uint64_t seed, std::size_t d_model, std::size_t n_layers,
                          std::size_t max_positions) {
    ModelConfig cfg;
    cfg.d_model = d_model;
    cfg.n_heads = 2;
    cfg.n_layers = n_layers;
    cfg.max_positions = max_positions;
    cfg.init_std = 0.3;
    cfg.head_init_std = 0.3;
    return Model(cfg, seed);
}

std::vector<TokenId> ar_greedy_reference(std::span<const TokenId> prompt, const Model &model,
                                         std::size_t n_new) {
    NoGradGuard no_grad;
    const TokenId mask_id = model.config().mask_token_id();
    std::vector<TokenId> seq(prompt.begin(), prompt.end());
    for (std::size_t s = 0; s < n_new; ++s) {
        std::vector<TokenId> input = seq;
        input.push_back(mask_id);
        const std::size_t n = input.size();
        const AttentionMask causal =
            AttentionMask::from_predicate(n, n, [](std::size_t i, std::size_t j) { return j <= i; });
        const Var logits = model.forward(input, causal, iota_positions(n));
        const auto row = logits->value.row(n - 1);
        TokenId best = -1;
        double best_v = 0.0;
        for (std::size_t v = 0; v < row.size(); ++v) {
            if (static_cast<TokenId>(v) == mask_id) {
                continue;
            }
            if (best < 0 || row[v] > best_v) {
                best = static_cast<TokenId>(v);
                best_v = row[v];
            }
        }
        seq.push_back(best);
    }
    return seq;
}

std::vector<TokenId> random_tokens(Rng &rng, std::size_t n, std::size_t vocab_without_mask) {
    std::vector<TokenId> x(n);
    for (auto &t : x) {
        t = static_cast<TokenId>(rng.below(vocab_without_mask));
    }
    return x;
}

OracleResult oracle_mask_predicates(const OracleOptions &) {
    OracleResult r;
    r.name = "mask_predicates";
    for (std::size_t L = 1; L <= 64; ++L) {
        for (std::size_t b : {std::size_t{1}, std::size_t{2}, std::size_t{3}, std::size_t{4},
                              std::size_t{8}, std::size_t{16}, L}) {
            if (b > L) {
                continue;
            }
            ++r.cases;
            const AttentionMask m = assemble_parallel_mask(partition(L, b));
            for (std::size_t i = 0; i < 2 * L; ++i) {
                for (std::size_t j = 0; j < 2 * L; ++j) {
                    if (m.allowed(i, j) != parallel_mask_predicate(L, b, i, j)) {
                        fail_case(r, L * 1000 + b,
                                  "L=" + std::to_string(L) + " b=" + std::to_string(b) + " entry (" +
                                      std::to_string(i) + "," + std::to_string(j) + ")");
                    }
                }
            }
            if (m.tile(L, 0, L, L).count_allowed() != 0) {
                fail_case(r, L * 1000 + b, "bottom-left tile not empty");
            }
        }
    }
    ++r.cases;
    if (assemble_parallel_mask(partition(4, 2)).to_text() != kGolden4x2) {
        fail_case(r, 4002, "L=4 b=2 golden grid differs");
    }
    return r;
}

OracleResult oracle_schedule_table(const OracleOptions &) {
    OracleResult r;
    r.name = "schedule_table";
    GrowthSchedule g;
    g.b0 = 1;
    g.growth_base = 2;
    g.interval = 1000;
    g.warmup = 0;
    g.b_max = 32;
    const std::pair<std::size_t, std::size_t> table[] = {
        {0, 1},     {999, 1},   {1000, 2},  {1999, 2},   {2000, 4},    {2999, 4},      {3000, 8},
        {3500, 8},  {4000, 16}, {4999, 16}, {5000, 32},  {6000, 32},   {100000, 32},   {1000000, 32}};
    for (const auto &[s, b] : table) {
        ++r.cases;
        if (block_size_at(s, g) != b) {
            fail_case(r, s, "b(" + std::to_string(s) + ")=" + std::to_string(block_size_at(s, g)) +
                                " expected " + std::to_string(b));
        }
    }
    GrowthSchedule w = g;
    w.warmup = 500;
    const std::pair<std::size_t, std::size_t> warm[] = {{0, 1}, {499, 1}, {1499, 1}, {1500, 2}, {5500, 32}};
    for (const auto &[s, b] : warm) {
        ++r.cases;
        if (block_size_at(s, w) != b) {
            fail_case(r, s, "warmup b(" + std::to_string(s) + ") expected " + std::to_string(b));
        }
    }
    GrowthSchedule q = g;
    q.growth_base = 4;
    q.interval = 100;
    ++r.cases;
    if (block_size_at(250, q) != 16) {
        fail_case(r, 250, "r=4 Δ=100 b(250) expected 16");
    }
    for (const GrowthSchedule &s : {g, w, q}) {
        std::size_t prev = block_size_at(0, s);
        for (std::size_t step = 1; step <= 100000; ++step) {
            const std::size_t b = block_size_at(step, s);
            const std::size_t t = refine_steps_at(step, s);
            if (b < prev || b > s.b_max || t < 1 || t > b) {
                fail_case(r, step, "monotonicity or T bound at step " + std::to_string(step));
                break;
            }
            prev = b;
        }
        ++r.cases;
    }
    return r;
}

OracleResult oracle_parallel_sequential(const OracleOptions &opts) {
    OracleResult r;
    r.name = "parallel_sequential";
    for (std::size_t k = 0; k < opts.cases; ++k) {
        const std::uint64_t seed = case_seed(opts, 2, k);
        Rng rng(seed);
        const Model model = case_model(opts, seed);
        const std::size_t L =
            2 + rng.below(std::min<std::size_t>(63, model.config().max_positions / 2 - 1));
        const std::size_t b = pick_block(rng, L);
        const auto x = random_tokens(rng, L);
        BatchOptions bo;
        bo.mask_token_id = model.config().mask_token_id();
        TrainBatch batch = build_training_batch(x, b, rng.split(1), bo);
        apply_mutation(batch, opts.mutation);
        NoGradGuard no_grad;
        const LossReport rep = total_loss(batch, model, 0.0);
        const double parallel = rep.mdm_sum / static_cast<double>(L);
        const double naive = naive_block_loss(x, batch.partition, model, batch.noised);
        const double d = rel_diff(parallel, naive);
        r.worst = std::max(r.worst, d);
        ++r.cases;
        if (!(d < 1e-9)) {
            fail_case(r, seed, "L=" + std::to_string(L) + " b=" + std::to_string(b) + " parallel " +
                                   std::to_string(parallel) + " vs sequential " +
                                   std::to_string(naive));
        }
    }
    return r;
}

OracleResult oracle_ar_purity(const OracleOptions &opts) {
    OracleResult r;
    r.name = "ar_purity";
    NoGradGuard no_grad;
    for (std::size_t k = 0; k < opts.cases; ++k) {
        const std::uint64_t seed = case_seed(opts, 3, k);
        Rng rng(seed);
        const Model model = case_model(opts, seed);
        const std::size_t L =
            2 + rng.below(std::min<std::size_t>(63, model.config().max_positions / 2 - 1));
        const std::size_t b = pick_block(rng, L);
        const auto x = random_tokens(rng, L);
        BatchOptions bo;
        bo.mask_token_id = model.config().mask_token_id();
        TrainBatch batch = build_training_batch(x, b, rng.split(1), bo);
        apply_mutation(batch, opts.mutation);

        const LossReport rep = total_loss(batch, model, 0.5);
        const Var solo = model.forward(x, context_causal_mask(L), iota_positions(L));
        const double reference = causal_nll_sum(solo->value, 0, x);
        const double d = rel_diff(rep.ar_sum, reference);

        const Tensor before = model.forward(batch.tokens, batch.mask, batch.positions)->value;
        TrainBatch scrambled = batch;
        for (std::size_t i = 0; i < L; ++i) {
            scrambled.tokens[i] = static_cast<TokenId>(rng.below(model.config().vocab_size));
        }
        const Tensor after = model.forward(scrambled.tokens, batch.mask, batch.positions)->value;
        double leak = 0.0;
        for (std::size_t i = L; i < 2 * L; ++i) {
            for (std::size_t v = 0; v < before.cols(); ++v) {
                leak = std::max(leak, std::abs(before(i, v) - after(i, v)));
            }
        }
        r.worst = std::max({r.worst, d, leak});
        ++r.cases;
        if (!(d < 1e-10)) {
            fail_case(r, seed, "ar_sum " + std::to_string(rep.ar_sum) + " vs standalone " +
                                   std::to_string(reference));
        } else if (!(leak <= 1e-12)) {
            fail_case(r, seed, "noised-view edit moved a clean logit by " + std::to_string(leak));
        }
    }
    return r;
}

OracleResult oracle_cached_uncached(const OracleOptions &opts) {
    OracleResult r;
    r.name = "cached_uncached";
    const std::pair<std::size_t, std::size_t> settings[] = {{32, 4}, {8, 4}, {8, 8}, {1, 1}};
    const std::size_t n_cases = std::max<std::size_t>(1, opts.cases / 10);
    for (std::size_t k = 0; k < n_cases; ++k) {
        const std::uint64_t seed = case_seed(opts, 4, k);
        Rng rng(seed);
        const Model model = case_model(opts, seed);
        const auto prompt = random_tokens(rng, 1 + rng.below(12));
        for (const auto &[macro, small] : settings) {
            DecodeConfig cfg;
            cfg.macro_block = macro;
            cfg.small_block = small;
            cfg.max_new_tokens = macro == 1 ? 12 : 40;
            cfg.temperature = (k % 2 == 1) ? 0.8 : 0.0;
            cfg.seed = seed;
            std::vector<Tensor> logits_a, logits_b;
            GenerateOptions a, u;
            a.on_step = [&](const StepTrace &t) { logits_a.push_back(t.logits); };
            u.use_cache = false;
            u.on_step = [&](const StepTrace &t) { logits_b.push_back(t.logits); };
            const auto out_a = generate(prompt, model, cfg, a);
            const auto out_b = generate(prompt, model, cfg, u);
            ++r.cases;
            if (out_a != out_b || logits_a.size() != logits_b.size()) {
                fail_case(r, seed, "token streams differ at (" + std::to_string(macro) + "," +
                                       std::to_string(small) + ")");
                continue;
            }
            for (std::size_t s = 0; s < logits_a.size(); ++s) {
                r.worst = std::max(r.worst, max_abs_diff(logits_a[s], logits_b[s]));
            }
            if (!(r.worst <= 1e-9)) {
                fail_case(r, seed, "logits differ by " + std::to_string(r.worst));
            }
        }
    }
    return r;
}

OracleResult oracle_ar_degeneration(const OracleOptions &opts) {
    OracleResult r;
    r.name = "ar_degeneration";
    const std::size_t n_cases = std::max<std::size_t>(1, opts.cases / 5);
    for (std::size_t k = 0; k < n_cases; ++k) {
        const std::uint64_t seed = case_seed(opts, 5, k);
        Rng rng(seed);
        const Model model = case_model(opts, seed);
        const auto prompt = random_tokens(rng, 1 + rng.below(16));
        DecodeConfig cfg;
        cfg.macro_block = 1;
        cfg.small_block = 1;
        cfg.max_new_tokens = 16;
        ++r.cases;
        if (generate(prompt, model, cfg) != ar_greedy_reference(prompt, model, cfg.max_new_tokens)) {
            fail_case(r, seed, "b=1 greedy decode differs from the AR loop");
        }
    }
    return r;
}

OracleResult oracle_gradient(const OracleOptions &opts) {
    OracleResult r;
    r.name = "gradient";
    const std::uint64_t seed = case_seed(opts, 6, 0);
    Rng rng(seed);
    Model model = random_oracle_model(seed, 32, 2);
    const auto x = random_tokens(rng, 12);
    BatchOptions bo;
    bo.mask_token_id = model.config().mask_token_id();
    bo.forced_t = 0.5;
    TrainBatch batch = build_training_batch(x, 4, rng.split(1), bo);
    apply_mutation(batch, opts.mutation);
    GradCheckOptions gc;
    gc.samples = 50;
    gc.seed = seed;
    r.worst = grad_check([&] { return total_loss(batch, model, 0.5).objective; }, model.parameters(), gc);
    r.cases = gc.samples;
    if (!(r.worst < 1e-4)) {
        fail_case(r, seed, "max relative error " + std::to_string(r.worst));
    }
    return r;
}

OracleResult oracle_entropy_decoding(const OracleOptions &opts) {
    OracleResult r;
    r.name = "entropy_decoding";
    const std::size_t n_cases = std::max<std::size_t>(1, opts.cases / 10);
    for (std::size_t k = 0; k < n_cases; ++k) {
        const std::uint64_t seed = case_seed(opts, 7, k);
        Rng rng(seed);
        const Model model = case_model(opts, seed);
        const auto prompt = random_tokens(rng, 1 + rng.below(8));
        for (double tau : {0.0, std::log(static_cast<double>(model.config().vocab_size))}) {
            DecodeConfig cfg;
            cfg.macro_block = 8;
            cfg.small_block = 8;
            cfg.tau = tau;
            cfg.max_new_tokens = 24;
            std::vector<std::size_t> steps_per_block(3, 0);
            bool one_per_step = true;
            bool nonempty = true;
            GenerateOptions go;
            go.on_step = [&](const StepTrace &t) {
                ++steps_per_block[t.block];
                one_per_step = one_per_step && t.committed.size() == 1;
                nonempty = nonempty && !t.committed.empty();
            };
            generate(prompt, model, cfg, go);
            ++r.cases;
            const std::size_t expect = tau == 0.0 ? cfg.macro_block : 1;
            for (auto s : steps_per_block) {
                if (s != expect) {
                    fail_case(r, seed, "tau=" + std::to_string(tau) + " took " + std::to_string(s) +
                                           " steps in a block, expected " + std::to_string(expect));
                }
            }
            if (!nonempty || (tau == 0.0 && !one_per_step)) {
                fail_case(r, seed, "commit sizes violate the tau=0 rule");
            }
        }
    }
    return r;
}

OracleResult oracle_config_audit(const OracleOptions &opts) {
    OracleResult r;
    r.name = "config_audit";
    if (opts.checkpoint) {
        const Checkpoint &ck = *opts.checkpoint;
        ++r.cases;
        const std::string bytes = serialize_checkpoint(ck);
        if (serialize_checkpoint(parse_checkpoint(bytes)) != bytes) {
            fail_case(r, 0, "checkpoint save/load/save is not byte-identical");
        }
        ++r.cases;
        if (to_entries(from_entries(to_entries(ck.config))) != to_entries(ck.config)) {
            fail_case(r, 0, "embedded config does not round-trip");
        }
        ++r.cases;
        try {
            ck.config.validate();
            const Model m = restore_model(ck);
            (void)m;
        } catch (const std::exception &e) {
            fail_case(r, 0, e.what());
        }
        return r;
    }
    RunConfig cfg;
    cfg.train.corpus = "corpus.txt";
    cfg.schedule.lambda_end = 0.125;
    cfg.decode.stop_token = 10;
    ++r.cases;
    if (to_entries(parse_ini(to_ini(cfg))) != to_entries(cfg)) {
        fail_case(r, 0, "INI round-trip changed the config");
    }
    ++r.cases;
    cfg.model.d_model = 16;
    cfg.model.n_layers = 1;
    cfg.model.n_heads = 2;
    const Model m(cfg.model, case_seed(opts, 9, 0));
    const Checkpoint ck = make_checkpoint(cfg, m);
    const std::string bytes = serialize_checkpoint(ck);
    if (serialize_checkpoint(parse_checkpoint(bytes)) != bytes) {
        fail_case(r, 0, "checkpoint save/load/save is not byte-identical");
    }
    return r;
}

std::vector<OracleResult> run_oracle_suite(const OracleOptions &opts) {
    std::vector<OracleResult> out;
    out.push_back(oracle_mask_predicates(opts));
    out.push_back(oracle_schedule_table(opts));
    out.push_back(oracle_parallel_sequential(opts));
    out.push_back(oracle_ar_purity(opts));
    out.push_back(oracle_cached_uncached(opts));
    out.push_back(oracle_ar_degeneration(opts));
    out.push_back(oracle_entropy_decoding(opts));
    out.push_back(oracle_gradient(opts));
    out.push_back(oracle_config_audit(opts));
    return out;
}

} // namespace bdiff
