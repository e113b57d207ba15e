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

#include "bdiff/grad_check.hpp"
#include "bdiff/ops.hpp"
#include "bdiff/rng.hpp"
#include "bdiff/tensor.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace bdiff::testing {

inline Tensor random_tensor(Rng &rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
    Tensor t(rows, cols);
    for (auto &v : t.data()) {
        v = scale * rng.normal();
    }
    return t;
}

// uᵀ · x · v with fixed random u, v: a generic scalar readout of x.
inline Var project(const Var &x, std::uint64_t seed) {
    Rng rng(seed);
    const Var u = constant(random_tensor(rng, 1, x->value.rows()));
    const Var v = constant(random_tensor(rng, x->value.cols(), 1));
    return ops::matmul(ops::matmul(u, x), v);
}

inline std::string read_text(const std::filesystem::path &p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::filesystem::path golden_dir() { return BDIFF_GOLDEN_DIR; }

} // namespace bdiff::testing
