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

// bdiff: train, generate, inspect masks, run the oracle suite, evaluate.
//
// Exit codes: 0 success, 1 oracle failure, 2 usage or config error,
// 3 training divergence.

#include "bdiff/checkpoint.hpp"
#include "bdiff/config.hpp"
#include "bdiff/corpus.hpp"
#include "bdiff/errors.hpp"
#include "bdiff/infer.hpp"
#include "bdiff/masks.hpp"
#include "bdiff/oracles.hpp"
#include "bdiff/train.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace bdiff;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitOracle = 1;
constexpr int kExitUsage = 2;
constexpr int kExitDivergence = 3;

std::string read_file(const fs::path &p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot read '" + p.string() + "'");
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path resolve_corpus(const std::string &corpus, const fs::path &config_path) {
    fs::path p(corpus);
    if (p.is_relative() && !fs::exists(p) && !config_path.empty()) {
        const fs::path alt = config_path.parent_path() / p;
        if (fs::exists(alt)) {
            return alt;
        }
    }
    return p;
}

std::string ckpt_name(std::size_t step) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "ckpt-%06zu.nbdf", step);
    return buf;
}

std::string decode_text(std::span<const TokenId> ids) {
    std::string out;
    for (auto t : ids) {
        if (t >= 0 && t < 256) {
            out.push_back(static_cast<char>(t));
        }
    }
    return out;
}

struct TrainArgs {
    std::string config;
    std::string out;
    std::string resume;
};

int cmd_train(const TrainArgs &a) {
    const RunConfig cfg = load_ini(a.config);
    cfg.validate();
    if (cfg.train.corpus.empty()) {
        throw ConfigError("train.corpus", "no corpus configured");
    }
    const Corpus corpus = Corpus::from_file(resolve_corpus(cfg.train.corpus, a.config));
    const auto [train_part, held_out] = corpus.split_holdout(cfg.train.holdout_frac);
    (void)held_out;
    const SpanSampler sampler(train_part, cfg.train.span_len);

    fs::create_directories(a.out);
    const fs::path out(a.out);
    Model model(cfg.model, cfg.train.seed);
    TrainState state;
    if (!a.resume.empty()) {
        const Checkpoint ck = load_checkpoint(a.resume);
        model = restore_model(ck);
        if (!restore_train_state(ck, model, state)) {
            throw ConfigError("state.step", "checkpoint '" + a.resume + "' has no optimizer state");
        }
        std::cerr << "resuming at step " << state.step << "\n";
    } else {
        save_checkpoint(out / ckpt_name(0), make_checkpoint(cfg, model, &state));
    }
    {
        std::ofstream ini(out / "config.ini");
        ini << to_ini(cfg);
    }
    std::ofstream metrics(out / "metrics.log", a.resume.empty() ? std::ios::trunc : std::ios::app);
    TrainCallbacks cb;
    cb.on_metrics = [&](const MetricsRecord &r) {
        metrics << format_metrics(r) << "\n";
        if (r.step % 100 == 0) {
            metrics.flush();
            std::cerr << "step " << r.step << " b=" << r.block_size << " mdm=" << r.mdm_per_token
                      << " ar=" << r.ar_per_token << " total=" << r.total << "\n";
        }
    };
    cb.on_checkpoint = [&](std::size_t steps_done, const Model &m, const TrainState &s) {
        metrics.flush();
        save_checkpoint(out / ckpt_name(steps_done), make_checkpoint(cfg, m, &s));
    };
    try {
        train_loop(model, sampler, cfg.schedule, cfg.train, state, cb);
    } catch (const DivergenceError &e) {
        metrics.flush();
        save_checkpoint(out / "last-good.nbdf", make_checkpoint(cfg, model, &state));
        std::cerr << "error: " << e.what() << "; last good weights in "
                  << (out / "last-good.nbdf").string() << "\n";
        return kExitDivergence;
    }
    metrics.flush();
    save_checkpoint(out / "final.nbdf", make_checkpoint(cfg, model, &state));
    std::cerr << "wrote " << (out / "final.nbdf").string() << "\n";
    return kExitOk;
}

struct GenerateArgs {
    std::string checkpoint;
    std::string prompt;
    std::string prompt_file;
    std::optional<std::size_t> block;
    std::optional<std::size_t> small_block;
    std::optional<double> tau;
    std::optional<std::size_t> steps;
    bool greedy = false;
    std::optional<double> temp;
    bool trace = false;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> max_new;
    bool no_cache = false;
};

int cmd_generate(const GenerateArgs &a) {
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    const Model model = restore_model(ck);
    DecodeConfig dc = ck.config.decode;
    if (a.block) {
        dc.macro_block = *a.block;
        if (!a.small_block) {
            dc.small_block = std::min(dc.small_block, dc.macro_block);
        }
    }
    if (a.small_block) {
        dc.small_block = *a.small_block;
    }
    if (a.tau) {
        dc.tau = *a.tau;
    }
    if (a.steps) {
        dc.max_refine_steps = *a.steps;
    }
    if (a.temp) {
        dc.temperature = *a.temp;
    }
    if (a.greedy) {
        dc.temperature = 0.0;
    }
    if (a.seed) {
        dc.seed = *a.seed;
    }
    if (a.max_new) {
        dc.max_new_tokens = *a.max_new;
    }
    const std::string text = a.prompt_file.empty() ? a.prompt : read_file(a.prompt_file);
    const Corpus prompt = Corpus::from_bytes(text);
    GenerateOptions go;
    go.use_cache = !a.no_cache;
    if (a.trace) {
        go.on_step = [](const StepTrace &t) { std::cerr << format_trace(t) << "\n"; };
    }
    const auto out = generate(prompt.tokens(), model, dc, go);
    std::cout << decode_text(std::span(out).subspan(prompt.size())) << std::flush;
    return kExitOk;
}

struct MasksArgs {
    std::size_t L = 0;
    std::size_t b = 0;
    std::string scheme = "context_causal";
    bool parallel = false;
    std::string dump;
    double anneal_ratio = 0.0;
    std::uint64_t seed = 0;
};

int cmd_masks(const MasksArgs &a) {
    MaskScheme scheme;
    scheme.tag = parse_mask_scheme(a.scheme);
    scheme.anneal_ratio = a.anneal_ratio;
    scheme.rng_seed = a.seed;
    const BlockPartition p = partition(a.L, a.b);
    const AttentionMask clean = clean_context_mask(p, scheme);
    const AttentionMask m = a.parallel ? assemble_parallel_mask(p, clean) : clean;
    const std::string grid = m.to_text();
    std::cout << grid;
    if (!a.dump.empty()) {
        std::ofstream f(a.dump);
        if (!f) {
            throw std::runtime_error("cannot write '" + a.dump + "'");
        }
        f << grid;
    }
    return kExitOk;
}

struct CheckArgs {
    std::string checkpoint;
    std::string mutate = "none";
    std::uint64_t seed = 0;
    std::size_t cases = 50;
};

int cmd_check(const CheckArgs &a) {
    OracleOptions opts;
    opts.seed = a.seed;
    opts.cases = a.cases;
    opts.mutation = parse_mutation(a.mutate);
    std::optional<Checkpoint> ck;
    std::optional<Model> model;
    if (!a.checkpoint.empty()) {
        ck = load_checkpoint(a.checkpoint);
        model = restore_model(*ck);
        opts.checkpoint = &*ck;
        opts.model = &*model;
    }
    const auto results = run_oracle_suite(opts);
    const OracleResult *first_fail = nullptr;
    for (const auto &r : results) {
        std::cout << format_result(r) << "\n";
        if (!r.pass && !first_fail) {
            first_fail = &r;
        }
    }
    std::cout << results.size() << " oracle families, "
              << std::count_if(results.begin(), results.end(), [](const auto &r) { return r.pass; })
              << " passed\n";
    if (first_fail) {
        std::cout << "first counterexample: " << first_fail->name << " seed "
                  << first_fail->counterexample_seed.value_or(0) << "\n";
        return kExitOracle;
    }
    return kExitOk;
}

struct EvalArgs {
    std::string checkpoint;
    std::string corpus;
    std::size_t b = 0;
    std::optional<std::size_t> span_len;
    std::size_t max_spans = 32;
    std::optional<double> lambda;
    std::uint64_t seed = 0;
    std::string scheme;
};

int cmd_eval(const EvalArgs &a) {
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    const Model model = restore_model(ck);
    const std::string corpus_path = a.corpus.empty() ? ck.config.train.corpus : a.corpus;
    const Corpus corpus = Corpus::from_file(corpus_path);
    const std::size_t L = a.span_len.value_or(ck.config.train.span_len);
    const Corpus held_out = corpus.split_holdout(ck.config.train.holdout_frac).second;
    if (held_out.size() < L) {
        throw ConfigError("train.holdout_frac", "held-out part has " + std::to_string(held_out.size()) +
                                                    " tokens, fewer than one span of " + std::to_string(L));
    }
    const auto spans = tile_spans(held_out, L, a.max_spans);
    const std::size_t last_step = ck.config.train.steps > 0 ? ck.config.train.steps - 1 : 0;
    const double lambda = a.lambda.value_or(lambda_at(last_step, ck.config.schedule));
    MaskScheme scheme = ck.config.train.scheme;
    if (!a.scheme.empty()) {
        scheme.tag = parse_mask_scheme(a.scheme);
    }
    const EvalReport rep =
        perplexity_eval(spans, model, a.b, lambda, a.seed, scheme, ck.config.train.corruption);
    std::printf("spans=%zu L=%zu b=%zu mdm_per_token=%.6f ar_per_token=%.6f total_per_token=%.6f\n",
                rep.spans, L, a.b, rep.mdm_per_token, rep.ar_per_token, rep.total_per_token);
    return kExitOk;
}

struct CorpusArgs {
    std::size_t bytes = 1 << 20;
    std::uint64_t seed = 0;
    std::string out;
};

int cmd_make_corpus(const CorpusArgs &a) {
    std::ofstream f(a.out, std::ios::binary);
    if (!f) {
        throw std::runtime_error("cannot write '" + a.out + "'");
    }
    f << synthetic_corpus(a.bytes, a.seed);
    return kExitOk;
}

} // namespace

int main(int argc, char **argv) {
    retain_heap_buffers();
    CLI::App app{"bdiff: block diffusion language model toolkit"};
    app.require_subcommand(1);

    TrainArgs ta;
    auto *train = app.add_subcommand("train", "train a model from a config file");
    train->add_option("--config", ta.config, "INI config")->required()->check(CLI::ExistingFile);
    train->add_option("--out", ta.out, "output directory")->required();
    train->add_option("--resume", ta.resume, "checkpoint to resume from")->check(CLI::ExistingFile);

    GenerateArgs ga;
    auto *gen = app.add_subcommand("generate", "decode a continuation");
    gen->add_option("--checkpoint", ga.checkpoint)->required()->check(CLI::ExistingFile);
    auto *prompt_opt = gen->add_option("--prompt", ga.prompt, "prompt text");
    gen->add_option("--prompt-file", ga.prompt_file)->check(CLI::ExistingFile)->excludes(prompt_opt);
    gen->add_option("--block", ga.block, "macro block size");
    gen->add_option("--small-block", ga.small_block, "refinement sub-block size");
    gen->add_option("--tau", ga.tau, "entropy threshold in nats");
    gen->add_option("--steps", ga.steps, "refinement steps per macro block");
    auto *greedy = gen->add_flag("--greedy", ga.greedy, "argmax decoding");
    gen->add_option("--temp", ga.temp, "sampling temperature")->excludes(greedy);
    gen->add_flag("--trace", ga.trace, "print per-step commits and entropies to stderr");
    gen->add_option("--seed", ga.seed);
    gen->add_option("--max-new", ga.max_new, "tokens to generate");
    gen->add_flag("--no-cache", ga.no_cache, "recompute committed context every step");

    MasksArgs ma;
    auto *masks = app.add_subcommand("masks", "print an attention mask as a 0/1 grid");
    masks->add_option("L", ma.L)->required();
    masks->add_option("b", ma.b)->required();
    masks->add_option("scheme", ma.scheme, "context_causal, block_causal or annealed");
    masks->add_flag("--parallel", ma.parallel, "print the 2L x 2L training mask");
    masks->add_option("--dump", ma.dump, "also write the grid to this file");
    masks->add_option("--anneal-ratio", ma.anneal_ratio);
    masks->add_option("--seed", ma.seed);

    CheckArgs ca;
    auto *check = app.add_subcommand("check", "run the oracle suite");
    check->add_option("--checkpoint", ca.checkpoint)->check(CLI::ExistingFile);
    check->add_option("--mutate", ca.mutate, "none, obc_offset or position_desync");
    check->add_option("--seed", ca.seed);
    check->add_option("--cases", ca.cases);

    EvalArgs ea;
    auto *eval = app.add_subcommand("eval", "held-out losses");
    eval->add_option("--checkpoint", ea.checkpoint)->required()->check(CLI::ExistingFile);
    eval->add_option("--corpus", ea.corpus);
    eval->add_option("--block,-b", ea.b)->required();
    eval->add_option("--span-len", ea.span_len);
    eval->add_option("--max-spans", ea.max_spans);
    eval->add_option("--lambda", ea.lambda);
    eval->add_option("--seed", ea.seed);
    eval->add_option("--scheme", ea.scheme, "clean-context mask to score under (default: the trained one)");

    CorpusArgs cpa;
    auto *mk = app.add_subcommand("make-corpus", "write the synthetic patterned corpus");
    mk->add_option("--bytes", cpa.bytes);
    mk->add_option("--seed", cpa.seed);
    mk->add_option("--out", cpa.out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*train) {
            return cmd_train(ta);
        }
        if (*gen) {
            return cmd_generate(ga);
        }
        if (*masks) {
            return cmd_masks(ma);
        }
        if (*check) {
            return cmd_check(ca);
        }
        if (*eval) {
            return cmd_eval(ea);
        }
        if (*mk) {
            return cmd_make_corpus(cpa);
        }
    } catch (const ConfigError &e) {
        std::cerr << "config error [" << e.key() << "]: " << e.what() << "\n";
        return kExitUsage;
    } catch (const DivergenceError &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
