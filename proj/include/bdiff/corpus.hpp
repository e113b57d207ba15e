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
#include "bdiff/rng.hpp"

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace bdiff {

/// Token stream for training and evaluation. Byte files become
/// [BOS, byte...]; files ending in ".ids" hold whitespace-separated ids.
class Corpus {
public:
    Corpus() = default;
    explicit Corpus(std::vector<TokenId> tokens) : tokens_(std::move(tokens)) {}

    // Throws std::runtime_error when the file cannot be read.
    static Corpus from_file(const std::filesystem::path &path);
    static Corpus from_bytes(std::string_view bytes);

    const std::vector<TokenId> &tokens() const { return tokens_; }
    std::size_t size() const { return tokens_.size(); }
    bool empty() const { return tokens_.empty(); }

    // (train, held-out): the last holdout_frac of the stream is held out.
    std::pair<Corpus, Corpus> split_holdout(double holdout_frac) const;

private:
    std::vector<TokenId> tokens_;
};

/// Uniformly sampled contiguous spans of a fixed length.
class SpanSampler {
public:
    // Throws std::invalid_argument when span_len exceeds the corpus.
    SpanSampler(Corpus corpus, std::size_t span_len);

    std::size_t span_len() const { return span_len_; }
    std::size_t num_offsets() const { return corpus_.size() - span_len_ + 1; }
    const Corpus &corpus() const { return corpus_; }

    std::size_t sample_offset(Rng &rng) const;
    std::vector<TokenId> sample(Rng &rng) const;

private:
    Corpus corpus_;
    std::size_t span_len_;
};

// Non-overlapping spans from the start of the corpus; at most max_spans when
// max_spans > 0.
std::vector<std::vector<TokenId>> tile_spans(const Corpus &corpus, std::size_t span_len,
                                             std::size_t max_spans = 0);

// Empirical unigram entropy in nats.
double unigram_entropy(const Corpus &corpus);

// Deterministic patterned text: templated sentences over small word lists,
// counters and repeated motifs.
std::string synthetic_corpus(std::size_t n_bytes, std::uint64_t seed);

} // namespace bdiff
