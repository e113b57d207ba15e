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

#include "bdiff/checkpoint.hpp"
#include "bdiff/model.hpp"
#include "bdiff/train.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace bdiff {

/// Deliberate defects injected into the parallel batch to show that the
/// equivalence oracles catch them.
enum class Mutation {
    none,
    obc_offset,      // noised block k also sees clean block k
    position_desync, // clean view positions shifted by one
};

std::string_view to_string(Mutation m);
// Throws std::invalid_argument on unknown names.
Mutation parse_mutation(std::string_view name);

void apply_mutation(TrainBatch &batch, Mutation m);

struct OracleOptions {
    std::uint64_t seed = 0;
    std::size_t cases = 50;
    Mutation mutation = Mutation::none;
    // When set, oracles that need a model use this one instead of fresh
    // random models.
    const Model *model = nullptr;
    const Checkpoint *checkpoint = nullptr;
};

struct OracleResult {
    std::string name;
    bool pass = true;
    std::size_t cases = 0;
    double worst = 0.0; // largest observed discrepancy, where meaningful
    std::optional<std::uint64_t> counterexample_seed;
    std::string detail;
};

std::string format_result(const OracleResult &r);

// Entry (i, j) of the 2L×2L parallel mask straight from its definition.
bool parallel_mask_predicate(std::size_t L, std::size_t b, std::size_t i, std::size_t j);

// Small model with non-trivial attention and head weights, for identities
// that must hold for any parameters.
Model random_oracle_model(std::uint64_t seed, std::size_t d_model = 16, std::size_t n_layers = 2,
                          std::size_t max_positions = 160);

// Greedy decoding one token at a time: forward committed ⊕ [MASK] under a
// causal mask with no cache and take the argmax of the last row.
std::vector<TokenId> ar_greedy_reference(std::span<const TokenId> prompt, const Model &model,
                                         std::size_t n_new);

std::vector<TokenId> random_tokens(Rng &rng, std::size_t n, std::size_t vocab_without_mask = 256);

OracleResult oracle_mask_predicates(const OracleOptions &opts);
OracleResult oracle_schedule_table(const OracleOptions &opts);
OracleResult oracle_parallel_sequential(const OracleOptions &opts);
OracleResult oracle_ar_purity(const OracleOptions &opts);
OracleResult oracle_cached_uncached(const OracleOptions &opts);
OracleResult oracle_ar_degeneration(const OracleOptions &opts);
OracleResult oracle_gradient(const OracleOptions &opts);
OracleResult oracle_entropy_decoding(const OracleOptions &opts);
OracleResult oracle_config_audit(const OracleOptions &opts);

std::vector<OracleResult> run_oracle_suite(const OracleOptions &opts);

} // namespace bdiff
