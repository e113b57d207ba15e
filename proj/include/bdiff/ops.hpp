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

// Differentiable primitives. Each op checks operand shapes (ShapeError) and
// input finiteness (NonFiniteError), computes its forward value, and records
// a backward rule when gradients are enabled and some input requires grad.

#include "bdiff/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace bdiff::ops {

// Additive constant for disallowed attention entries.
inline constexpr double kMaskedLogit = -1e30;

// a·b, or a·bᵀ when transpose_b is set.
Var matmul(const Var &a, const Var &b, bool transpose_b = false);

// Elementwise sum. `b` may also be a 1×cols row broadcast over a's rows.
Var add(const Var &a, const Var &b);

Var scale(const Var &a, double c);

// Rows of `table` selected by ids.
Var embedding_lookup(const Var &table, std::span<const std::int32_t> ids);

// Per-row normalization with 1×cols gain and bias.
Var layer_norm(const Var &x, const Var &gain, const Var &bias, double eps = 1e-5);

// Exact (erf) GELU.
Var gelu(const Var &x);

// Row softmax of scores + additive_mask. The mask is a constant of the same
// shape holding 0 (allowed) or kMaskedLogit (disallowed).
Var softmax_with_additive_mask(const Var &scores, const Tensor &additive_mask);

// Per-row negative log-likelihood of targets, n×1, unreduced.
Var cross_entropy_from_logits(const Var &logits, std::span<const std::int32_t> targets);

Var concat_rows(const std::vector<Var> &parts);
Var slice_rows(const Var &a, std::size_t begin, std::size_t count);
Var concat_cols(const std::vector<Var> &parts);
Var slice_cols(const Var &a, std::size_t begin, std::size_t count);

// Rotary position encoding over consecutive column pairs of each row,
// row i rotated by positions[i].
Var rotary(const Var &x, std::span<const std::int32_t> positions, double base);

// Σ weights[i]·x[i] for an n×1 column, as matmul(constant(weightsᵀ), x).
Var weighted_sum(const Var &column, std::span<const double> weights);

} // namespace bdiff::ops
