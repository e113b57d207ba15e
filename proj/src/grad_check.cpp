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

#include "bdiff/grad_check.hpp"

#include "bdiff/errors.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bdiff {

namespace {

double eval_scalar(const std::function<Var()> &f) {
    NoGradGuard guard;
    const double v = f()->value[0];
    if (!std::isfinite(v)) {
        throw NonFiniteError("grad_check", 0);
    }
    return v;
}

} // namespace

double grad_check(const std::function<Var()> &f, std::span<Parameter> params,
                  const GradCheckOptions &opts) {
    if (!(opts.eps >= 1e-6 && opts.eps <= 1e-3)) {
        throw std::invalid_argument("grad_check: eps must lie in [1e-6, 1e-3]");
    }
    zero_grad(params);
    const Var root = f();
    if (!std::isfinite(root->value[0])) {
        throw NonFiniteError("grad_check", 0);
    }
    backward(root);

    std::vector<std::pair<std::size_t, std::size_t>> coords;
    std::size_t total = 0;
    for (const auto &p : params) {
        total += p.var->value.size();
    }
    if (opts.samples == 0 || opts.samples >= total) {
        for (std::size_t k = 0; k < params.size(); ++k) {
            for (std::size_t i = 0; i < params[k].var->value.size(); ++i) {
                coords.emplace_back(k, i);
            }
        }
    } else {
        Rng rng(opts.seed);
        for (std::size_t s = 0; s < opts.samples; ++s) {
            std::size_t flat = rng.below(total);
            std::size_t k = 0;
            while (flat >= params[k].var->value.size()) {
                flat -= params[k].var->value.size();
                ++k;
            }
            coords.emplace_back(k, flat);
        }
    }

    double worst = 0.0;
    for (const auto &[k, i] : coords) {
        double &x = params[k].var->value[i];
        const double saved = x;
        x = saved + opts.eps;
        const double up = eval_scalar(f);
        x = saved - opts.eps;
        const double down = eval_scalar(f);
        x = saved;
        const double numeric = (up - down) / (2.0 * opts.eps);
        const double analytic = params[k].var->grad_buffer()[i];
        worst = std::max(worst, std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric)));
    }
    return worst;
}

} // namespace bdiff
