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

#include "bdiff/corpus.hpp"

#include "bdiff/model.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <stdexcept>

namespace bdiff {

Corpus Corpus::from_bytes(std::string_view bytes) {
    std::vector<TokenId> tokens;
    tokens.reserve(bytes.size() + 1);
    tokens.push_back(kBosToken);
    for (unsigned char c : bytes) {
        tokens.push_back(static_cast<TokenId>(c));
    }
    return Corpus(std::move(tokens));
}

Corpus Corpus::from_file(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot read corpus file '" + path.string() + "'");
    }
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (path.extension() != ".ids") {
        return from_bytes(bytes);
    }
    std::vector<TokenId> tokens;
    std::istringstream ids(bytes);
    long long id = 0;
    while (ids >> id) {
        if (id < 0 || id >= static_cast<long long>(kByteVocabSize - 1)) {
            throw std::runtime_error("token id " + std::to_string(id) + " out of range in '" +
                                     path.string() + "'");
        }
        tokens.push_back(static_cast<TokenId>(id));
    }
    if (!ids.eof()) {
        throw std::runtime_error("malformed token-id record in '" + path.string() + "'");
    }
    return Corpus(std::move(tokens));
}

std::pair<Corpus, Corpus> Corpus::split_holdout(double holdout_frac) const {
    if (!(holdout_frac >= 0.0 && holdout_frac < 1.0)) {
        throw std::invalid_argument("holdout fraction must lie in [0, 1)");
    }
    const auto cut = static_cast<std::size_t>(
        std::llround(static_cast<double>(tokens_.size()) * (1.0 - holdout_frac)));
    return {Corpus({tokens_.begin(), tokens_.begin() + static_cast<std::ptrdiff_t>(cut)}),
            Corpus({tokens_.begin() + static_cast<std::ptrdiff_t>(cut), tokens_.end()})};
}

SpanSampler::SpanSampler(Corpus corpus, std::size_t span_len)
    : corpus_(std::move(corpus)), span_len_(span_len) {
    if (span_len_ == 0) {
        throw std::invalid_argument("span length must be positive");
    }
    if (span_len_ > corpus_.size()) {
        throw std::invalid_argument("span length " + std::to_string(span_len_) +
                                    " exceeds corpus length " + std::to_string(corpus_.size()));
    }
}

std::size_t SpanSampler::sample_offset(Rng &rng) const { return rng.below(num_offsets()); }

std::vector<TokenId> SpanSampler::sample(Rng &rng) const {
    const auto off = static_cast<std::ptrdiff_t>(sample_offset(rng));
    const auto &t = corpus_.tokens();
    return {t.begin() + off, t.begin() + off + static_cast<std::ptrdiff_t>(span_len_)};
}

std::vector<std::vector<TokenId>> tile_spans(const Corpus &corpus, std::size_t span_len,
                                             std::size_t max_spans) {
    if (span_len == 0) {
        throw std::invalid_argument("span length must be positive");
    }
    std::vector<std::vector<TokenId>> spans;
    const auto &t = corpus.tokens();
    for (std::size_t off = 0; off + span_len <= t.size(); off += span_len) {
        if (max_spans > 0 && spans.size() == max_spans) {
            break;
        }
        spans.emplace_back(t.begin() + static_cast<std::ptrdiff_t>(off),
                           t.begin() + static_cast<std::ptrdiff_t>(off + span_len));
    }
    return spans;
}

double unigram_entropy(const Corpus &corpus) {
    std::map<TokenId, std::size_t> counts;
    for (auto t : corpus.tokens()) {
        ++counts[t];
    }
    const auto n = static_cast<double>(corpus.size());
    double h = 0.0;
    for (const auto &[tok, c] : counts) {
        const double p = static_cast<double>(c) / n;
        h -= p * std::log(p);
    }
    return h;
}

std::string synthetic_corpus(std::size_t n_bytes, std::uint64_t seed) {
    static constexpr std::array<const char *, 8> names = {"ada", "bo", "cyd", "dee",
                                                          "eli", "fay", "gus", "hal"};
    static constexpr std::array<const char *, 8> nouns = {"apple", "stone", "book", "lamp",
                                                          "coin", "shell", "cup", "key"};
    static constexpr std::array<const char *, 6> verbs = {"finds", "drops", "sells",
                                                          "paints", "hides", "counts"};
    static constexpr std::array<const char *, 6> colors = {"red", "blue", "green",
                                                           "gold", "gray", "pink"};
    Rng rng(seed);
    auto pick = [&](const auto &list) { return std::string(list[rng.below(list.size())]); };
    std::string out;
    out.reserve(n_bytes + 64);
    while (out.size() < n_bytes) {
        switch (rng.below(4)) {
        case 0: {
            const std::string who = pick(names);
            out += who + " " + pick(verbs) + " the " + pick(colors) + " " + pick(nouns) + ", then " +
                   who + " rests.\n";
            break;
        }
        case 1: {
            const auto start = rng.below(10);
            out += "count";
            for (std::uint64_t k = 0; k < 6; ++k) {
                out += " " + std::to_string(start + k);
            }
            out += ".\n";
            break;
        }
        case 2: {
            const std::string w = pick(nouns);
            out += "echo " + w + " " + w + " " + w + ".\n";
            break;
        }
        default: {
            const std::string c = pick(colors);
            out += "the " + c + " " + pick(nouns) + " is " + c + ".\n";
            break;
        }
        }
    }
    out.resize(n_bytes);
    return out;
}

} // namespace bdiff
