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

#include "bdiff/rng.hpp"
#include "bdiff/tensor.hpp"

#include <functional>
#include <span>

namespace bdiff {

struct GradCheckOptions {
    double eps = 1e-5;
    // 0 checks every coordinate; otherwise this many are sampled uniformly
    // over all parameter elements.
    std::size_t samples = 0;
    std::uint64_t seed = 0;
};

/// Compares reverse-mode gradients of `f` against central differences.
///
/// `f` must rebuild its graph on each call and return a 1×1 Var. Returns the
/// max over checked coordinates of |analytic - numeric| / max(1, |numeric|).
/// Throws NonFiniteError when f evaluates to a non-finite value.
double grad_check(const std::function<Var()> &f, std::span<Parameter> params,
                  const GradCheckOptions &opts = {});

} // namespace bdiff
