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
#include "bdiff/model.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

using namespace bdiff;

namespace {

// Reference splitmix64 finalizer, written out from its published constants.
std::uint64_t ref_mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ULL;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return z;
}

std::filesystem::path temp_file(const std::string &name, const std::string &contents) {
    const auto p = std::filesystem::temp_directory_path() / name;
    std::ofstream(p, std::ios::binary) << contents;
    return p;
}

} // namespace

TEST_SUITE("rng") {

TEST_CASE("draws replay from an independent splitmix") {
    for (std::uint64_t seed : {0ULL, 1ULL, 0xdeadbeefULL}) {
        Rng rng(seed);
        for (std::uint64_t n = 0; n < 100; ++n) {
            const std::uint64_t expect = ref_mix(seed + (n + 1) * 0x9e3779b97f4a7c15ULL);
            CHECK(rng.at(n) == expect);
            CHECK(rng.next_u64() == expect);
        }
    }
}

TEST_CASE("first splitmix outputs for seed 0") {
    // Published reference values of splitmix64 seeded with 0.
    Rng rng(0);
    CHECK(rng.next_u64() == 0xe220a8397b1dcdafULL);
    CHECK(rng.next_u64() == 0x6e789e6aa1b965f4ULL);
    CHECK(rng.next_u64() == 0x06c45d188009454fULL);
}

TEST_CASE("uniform lies in [0, 1) and splits differ") {
    Rng rng(9);
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
    }
    CHECK(Rng(9).split(1).key() != Rng(9).split(2).key());
    CHECK(Rng(9).split(1).key() == Rng(9).split(1).key());
    CHECK_THROWS_AS(rng.below(0), std::invalid_argument);
}

} // TEST_SUITE

TEST_SUITE("corpus") {

TEST_CASE("byte corpus spans contain only its bytes plus BOS") {
    std::string text;
    for (int i = 0; i < 500; ++i) {
        text += "ab";
    }
    const auto path = temp_file("bdiff_abab.txt", text);
    const SpanSampler sampler(Corpus::from_file(path), 32);
    Rng rng(1);
    std::set<TokenId> seen;
    for (int i = 0; i < 200; ++i) {
        for (auto t : sampler.sample(rng)) {
            seen.insert(t);
        }
    }
    for (auto t : seen) {
        CHECK((t == 97 || t == 98 || t == kBosToken));
    }
    CHECK(seen.count(97) == 1);
    CHECK(seen.count(98) == 1);
}

TEST_CASE("token-id files parse and reject out-of-range ids") {
    const Corpus c = Corpus::from_file(temp_file("bdiff_ok.ids", "1 2 3\n256 7"));
    CHECK(c.tokens() == std::vector<TokenId>{1, 2, 3, 256, 7});
    CHECK_THROWS(Corpus::from_file(temp_file("bdiff_bad.ids", "1 257")));
    CHECK_THROWS(Corpus::from_file(temp_file("bdiff_junk.ids", "1 x 3")));
}

TEST_CASE("unreadable file and oversized span are errors") {
    CHECK_THROWS_AS(Corpus::from_file("/nonexistent/bdiff/corpus.txt"), std::runtime_error);
    CHECK_THROWS_AS(SpanSampler(Corpus::from_bytes("abc"), 5), std::invalid_argument);
}

TEST_CASE("same seed gives the same span sequence") {
    const Corpus c = Corpus::from_bytes(synthetic_corpus(4096, 3));
    const SpanSampler s(c, 64);
    Rng a(17), b(17);
    for (int i = 0; i < 50; ++i) {
        CHECK(s.sample(a) == s.sample(b));
    }
}

TEST_CASE("span offsets are uniform (chi-square, 10^4 draws)") {
    // 20 offsets, 19 degrees of freedom; 36.19 is the 0.01 upper quantile.
    const Corpus c = Corpus::from_bytes(std::string(23, 'x'));
    const SpanSampler s(c, 5);
    REQUIRE(s.num_offsets() == 20);
    std::vector<double> counts(20, 0.0);
    Rng rng(2024);
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        counts[s.sample_offset(rng)] += 1.0;
    }
    const double expected = n / 20.0;
    double chi2 = 0.0;
    for (double k : counts) {
        chi2 += (k - expected) * (k - expected) / expected;
    }
    CHECK(chi2 < 36.19);
}

TEST_CASE("holdout split and tiling") {
    const Corpus c(std::vector<TokenId>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
    const auto [train, held] = c.split_holdout(0.2);
    CHECK(train.size() == 8);
    CHECK(held.tokens() == std::vector<TokenId>{8, 9});
    const auto spans = tile_spans(c, 3);
    REQUIRE(spans.size() == 3);
    CHECK(spans[2] == std::vector<TokenId>{6, 7, 8});
    CHECK(tile_spans(c, 3, 2).size() == 2);
}

TEST_CASE("unigram entropy matches direct counting") {
    const Corpus c(std::vector<TokenId>{1, 1, 2, 3});
    const double expect = -(0.5 * std::log(0.5) + 2 * 0.25 * std::log(0.25));
    CHECK(unigram_entropy(c) == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("synthetic corpus is deterministic and sized") {
    CHECK(synthetic_corpus(1000, 5) == synthetic_corpus(1000, 5));
    CHECK(synthetic_corpus(1000, 5) != synthetic_corpus(1000, 6));
    CHECK(synthetic_corpus(1000, 5).size() == 1000);
}

} // TEST_SUITE
