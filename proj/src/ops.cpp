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

#include "bdiff/ops.hpp"

#include "bdiff/errors.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <limits>
#include <numbers>
#include <utility>

namespace bdiff::ops {

namespace {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

MatMap map(Tensor &t) { return {t.data().data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())}; }
ConstMatMap map(const Tensor &t) {
    return {t.data().data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())};
}

void check_finite(const char *op, const Tensor &t) {
    const auto d = t.data();
    constexpr std::uint64_t kExp = 0x7ff0000000000000ULL;
    std::uint64_t bad = 0;
    for (double v : d) {
        bad |= static_cast<std::uint64_t>((std::bit_cast<std::uint64_t>(v) & kExp) == kExp);
    }
    if (bad == 0) {
        return;
    }
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (!std::isfinite(d[i])) {
            throw NonFiniteError(op, i);
        }
    }
}

[[noreturn]] void shape_error(const char *op, const Tensor &a, const Tensor &b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_str() + " and " +
                     b.shape_str());
}

Var make_node(const char *op, Tensor value, std::vector<Var> parents,
              std::function<void(Node &)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->op = op;
    if (grad_enabled()) {
        const bool needs = std::any_of(parents.begin(), parents.end(),
                                       [](const Var &p) { return p->requires_grad; });
        if (needs) {
            n->requires_grad = true;
            n->parents = std::move(parents);
            n->backward_fn = std::move(backward_fn);
        }
    }
    return n;
}

} // namespace

Var matmul(const Var &a, const Var &b, bool transpose_b) {
    const Tensor &A = a->value;
    const Tensor &B = b->value;
    const std::size_t inner = transpose_b ? B.cols() : B.rows();
    if (A.cols() != inner) {
        shape_error("matmul", A, B);
    }
    check_finite("matmul", A);
    check_finite("matmul", B);
    const std::size_t out_cols = transpose_b ? B.rows() : B.cols();
    Tensor C(A.rows(), out_cols);
    if (transpose_b) {
        map(C).noalias() = map(A) * map(B).transpose();
    } else {
        map(C).noalias() = map(A) * map(B);
    }
    return make_node("matmul", std::move(C), {a, b}, [transpose_b](Node &n) {
        Node &pa = *n.parents[0];
        Node &pb = *n.parents[1];
        auto dC = map(std::as_const(n.grad));
        if (pa.requires_grad) {
            if (transpose_b) {
                map(pa.grad_buffer()).noalias() += dC * map(std::as_const(pb.value));
            } else {
                map(pa.grad_buffer()).noalias() += dC * map(std::as_const(pb.value)).transpose();
            }
        }
        if (pb.requires_grad) {
            if (transpose_b) {
                map(pb.grad_buffer()).noalias() += dC.transpose() * map(std::as_const(pa.value));
            } else {
                map(pb.grad_buffer()).noalias() += map(std::as_const(pa.value)).transpose() * dC;
            }
        }
    });
}

Var add(const Var &a, const Var &b) {
    const Tensor &A = a->value;
    const Tensor &B = b->value;
    const bool broadcast = !A.same_shape(B);
    if (broadcast && !(B.rows() == 1 && B.cols() == A.cols())) {
        shape_error("add", A, B);
    }
    check_finite("add", A);
    check_finite("add", B);
    Tensor C = A;
    if (broadcast) {
        for (std::size_t r = 0; r < C.rows(); ++r) {
            auto row = C.row(r);
            for (std::size_t c = 0; c < C.cols(); ++c) {
                row[c] += B[c];
            }
        }
    } else {
        map(C) += map(B);
    }
    return make_node("add", std::move(C), {a, b}, [broadcast](Node &n) {
        Node &pa = *n.parents[0];
        Node &pb = *n.parents[1];
        if (pa.requires_grad) {
            map(pa.grad_buffer()) += map(std::as_const(n.grad));
        }
        if (pb.requires_grad) {
            if (broadcast) {
                map(pb.grad_buffer()) += map(std::as_const(n.grad)).colwise().sum();
            } else {
                map(pb.grad_buffer()) += map(std::as_const(n.grad));
            }
        }
    });
}

Var scale(const Var &a, double c) {
    check_finite("scale", a->value);
    Tensor C = a->value;
    map(C) *= c;
    return make_node("scale", std::move(C), {a}, [c](Node &n) {
        map(n.parents[0]->grad_buffer()) += c * map(std::as_const(n.grad));
    });
}

Var embedding_lookup(const Var &table, std::span<const std::int32_t> ids) {
    const Tensor &T = table->value;
    Tensor out(ids.size(), T.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= T.rows()) {
            throw ShapeError("embedding_lookup: id " + std::to_string(ids[i]) +
                             " out of range for table " + T.shape_str());
        }
        const auto src = T.row(static_cast<std::size_t>(ids[i]));
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    check_finite("embedding_lookup", out);
    std::vector<std::int32_t> saved(ids.begin(), ids.end());
    return make_node("embedding_lookup", std::move(out), {table},
                     [saved = std::move(saved)](Node &n) {
                         Tensor &g = n.parents[0]->grad_buffer();
                         for (std::size_t i = 0; i < saved.size(); ++i) {
                             auto dst = g.row(static_cast<std::size_t>(saved[i]));
                             const auto src = std::as_const(n.grad).row(i);
                             for (std::size_t c = 0; c < dst.size(); ++c) {
                                 dst[c] += src[c];
                             }
                         }
                     });
}

Var layer_norm(const Var &x, const Var &gain, const Var &bias, double eps) {
    const Tensor &X = x->value;
    const std::size_t d = X.cols();
    if (gain->value.rows() != 1 || gain->value.cols() != d) {
        shape_error("layer_norm", X, gain->value);
    }
    if (bias->value.rows() != 1 || bias->value.cols() != d) {
        shape_error("layer_norm", X, bias->value);
    }
    check_finite("layer_norm", X);
    check_finite("layer_norm", gain->value);
    check_finite("layer_norm", bias->value);
    Tensor xhat(X.rows(), d);
    std::vector<double> rstd(X.rows());
    Tensor Y(X.rows(), d);
    for (std::size_t r = 0; r < X.rows(); ++r) {
        const auto row = X.row(r);
        double mean = 0.0;
        for (double v : row) {
            mean += v;
        }
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (double v : row) {
            var += (v - mean) * (v - mean);
        }
        var /= static_cast<double>(d);
        rstd[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < d; ++c) {
            xhat(r, c) = (row[c] - mean) * rstd[r];
            Y(r, c) = xhat(r, c) * gain->value[c] + bias->value[c];
        }
    }
    return make_node(
        "layer_norm", std::move(Y), {x, gain, bias},
        [xhat = std::move(xhat), rstd = std::move(rstd)](Node &n) {
            Node &px = *n.parents[0];
            Node &pg = *n.parents[1];
            Node &pb = *n.parents[2];
            const Tensor &dY = n.grad;
            const Tensor &g = pg.value;
            const std::size_t d = dY.cols();
            for (std::size_t r = 0; r < dY.rows(); ++r) {
                if (pg.requires_grad || pb.requires_grad) {
                    for (std::size_t c = 0; c < d; ++c) {
                        if (pg.requires_grad) {
                            pg.grad_buffer()[c] += dY(r, c) * xhat(r, c);
                        }
                        if (pb.requires_grad) {
                            pb.grad_buffer()[c] += dY(r, c);
                        }
                    }
                }
                if (px.requires_grad) {
                    double mean_dxhat = 0.0;
                    double mean_dxhat_xhat = 0.0;
                    for (std::size_t c = 0; c < d; ++c) {
                        const double dxh = dY(r, c) * g[c];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * xhat(r, c);
                    }
                    mean_dxhat /= static_cast<double>(d);
                    mean_dxhat_xhat /= static_cast<double>(d);
                    Tensor &dX = px.grad_buffer();
                    for (std::size_t c = 0; c < d; ++c) {
                        const double dxh = dY(r, c) * g[c];
                        dX(r, c) += rstd[r] * (dxh - mean_dxhat - xhat(r, c) * mean_dxhat_xhat);
                    }
                }
            }
        });
}

Var gelu(const Var &x) {
    check_finite("gelu", x->value);
    Tensor Y = x->value;
    Tensor cdf(Y.rows(), Y.cols());
    for (std::size_t i = 0; i < Y.size(); ++i) {
        cdf[i] = 0.5 * (1.0 + std::erf(Y[i] * std::numbers::sqrt2 / 2.0));
        Y[i] *= cdf[i];
    }
    return make_node("gelu", std::move(Y), {x}, [cdf = std::move(cdf)](Node &n) {
        const Tensor &X = n.parents[0]->value;
        Tensor &dX = n.parents[0]->grad_buffer();
        const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
        for (std::size_t i = 0; i < X.size(); ++i) {
            const double v = X[i];
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
            dX[i] += n.grad[i] * (cdf[i] + v * pdf);
        }
    });
}

Var softmax_with_additive_mask(const Var &scores, const Tensor &additive_mask) {
    const Tensor &S = scores->value;
    if (!S.same_shape(additive_mask)) {
        shape_error("softmax_with_additive_mask", S, additive_mask);
    }
    check_finite("softmax_with_additive_mask", S);
    check_finite("softmax_with_additive_mask", additive_mask);
    Tensor P(S.rows(), S.cols());
    for (std::size_t r = 0; r < S.rows(); ++r) {
        const auto s = S.row(r);
        const auto m = additive_mask.row(r);
        auto p = P.row(r);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < s.size(); ++c) {
            p[c] = s[c] + m[c];
            mx = std::max(mx, p[c]);
        }
        double z = 0.0;
        for (auto &v : p) {
            // exp underflows to exactly 0 below -745.2; masked keys land here.
            v = v - mx < -746.0 ? 0.0 : std::exp(v - mx);
            z += v;
        }
        const double inv = 1.0 / z;
        for (auto &v : p) {
            v *= inv;
        }
    }
    return make_node("softmax_with_additive_mask", std::move(P), {scores}, [](Node &n) {
        const Tensor &P = n.value;
        const Tensor &dP = n.grad;
        Tensor &dS = n.parents[0]->grad_buffer();
        for (std::size_t r = 0; r < P.rows(); ++r) {
            const auto p = P.row(r);
            const auto dp = dP.row(r);
            double dot = 0.0;
            for (std::size_t c = 0; c < p.size(); ++c) {
                dot += p[c] * dp[c];
            }
            auto ds = dS.row(r);
            for (std::size_t c = 0; c < p.size(); ++c) {
                ds[c] += p[c] * (dp[c] - dot);
            }
        }
    });
}

Var cross_entropy_from_logits(const Var &logits, std::span<const std::int32_t> targets) {
    const Tensor &Z = logits->value;
    if (targets.size() != Z.rows()) {
        throw ShapeError("cross_entropy_from_logits: " + std::to_string(targets.size()) +
                         " targets for logits " + Z.shape_str());
    }
    check_finite("cross_entropy_from_logits", Z);
    Tensor nll(Z.rows(), 1);
    Tensor probs(Z.rows(), Z.cols());
    for (std::size_t r = 0; r < Z.rows(); ++r) {
        const auto t = targets[r];
        if (t < 0 || static_cast<std::size_t>(t) >= Z.cols()) {
            throw ShapeError("cross_entropy_from_logits: target " + std::to_string(t) +
                             " out of range for logits " + Z.shape_str());
        }
        const auto z = Z.row(r);
        const double mx = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        auto p = probs.row(r);
        for (std::size_t c = 0; c < z.size(); ++c) {
            p[c] = std::exp(z[c] - mx);
            sum += p[c];
        }
        for (auto &v : p) {
            v /= sum;
        }
        nll[r] = std::log(sum) + mx - z[static_cast<std::size_t>(t)];
    }
    std::vector<std::int32_t> saved(targets.begin(), targets.end());
    return make_node("cross_entropy_from_logits", std::move(nll), {logits},
                     [probs = std::move(probs), saved = std::move(saved)](Node &n) {
                         Tensor &dZ = n.parents[0]->grad_buffer();
                         for (std::size_t r = 0; r < probs.rows(); ++r) {
                             const double g = n.grad[r];
                             if (g == 0.0) {
                                 continue;
                             }
                             const auto p = probs.row(r);
                             auto dz = dZ.row(r);
                             for (std::size_t c = 0; c < p.size(); ++c) {
                                 dz[c] += g * p[c];
                             }
                             dz[static_cast<std::size_t>(saved[r])] -= g;
                         }
                     });
}

Var concat_rows(const std::vector<Var> &parts) {
    if (parts.empty()) {
        throw ShapeError("concat_rows: no operands");
    }
    Tensor out;
    std::vector<std::size_t> offsets;
    for (const auto &p : parts) {
        if (p->value.cols() != parts.front()->value.cols()) {
            shape_error("concat_rows", parts.front()->value, p->value);
        }
        check_finite("concat_rows", p->value);
        offsets.push_back(out.rows());
        out.append_rows(p->value);
    }
    return make_node("concat_rows", std::move(out), parts, [offsets](Node &n) {
        for (std::size_t k = 0; k < n.parents.size(); ++k) {
            Node &p = *n.parents[k];
            if (!p.requires_grad) {
                continue;
            }
            Tensor &g = p.grad_buffer();
            const std::size_t base = offsets[k] * g.cols();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += n.grad[base + i];
            }
        }
    });
}

Var slice_rows(const Var &a, std::size_t begin, std::size_t count) {
    const Tensor &A = a->value;
    if (begin + count > A.rows() || count == 0) {
        throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") of " + A.shape_str());
    }
    check_finite("slice_rows", A);
    const auto src = A.data().subspan(begin * A.cols(), count * A.cols());
    Tensor out(count, A.cols(), std::vector<double>(src.begin(), src.end()));
    return make_node("slice_rows", std::move(out), {a}, [begin](Node &n) {
        Tensor &g = n.parents[0]->grad_buffer();
        const std::size_t base = begin * g.cols();
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            g[base + i] += n.grad[i];
        }
    });
}

Var concat_cols(const std::vector<Var> &parts) {
    if (parts.empty()) {
        throw ShapeError("concat_cols: no operands");
    }
    const std::size_t rows = parts.front()->value.rows();
    std::size_t cols = 0;
    std::vector<std::size_t> offsets;
    for (const auto &p : parts) {
        if (p->value.rows() != rows) {
            shape_error("concat_cols", parts.front()->value, p->value);
        }
        check_finite("concat_cols", p->value);
        offsets.push_back(cols);
        cols += p->value.cols();
    }
    Tensor out(rows, cols);
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor &P = parts[k]->value;
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy(P.row(r).begin(), P.row(r).end(), out.row(r).begin() + offsets[k]);
        }
    }
    return make_node("concat_cols", std::move(out), parts, [offsets](Node &n) {
        for (std::size_t k = 0; k < n.parents.size(); ++k) {
            Node &p = *n.parents[k];
            if (!p.requires_grad) {
                continue;
            }
            Tensor &g = p.grad_buffer();
            for (std::size_t r = 0; r < g.rows(); ++r) {
                const auto src = std::as_const(n.grad).row(r).subspan(offsets[k], g.cols());
                auto dst = g.row(r);
                for (std::size_t c = 0; c < dst.size(); ++c) {
                    dst[c] += src[c];
                }
            }
        }
    });
}

Var slice_cols(const Var &a, std::size_t begin, std::size_t count) {
    const Tensor &A = a->value;
    if (begin + count > A.cols() || count == 0) {
        throw ShapeError("slice_cols: cols [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") of " + A.shape_str());
    }
    check_finite("slice_cols", A);
    Tensor out(A.rows(), count);
    for (std::size_t r = 0; r < A.rows(); ++r) {
        const auto src = A.row(r).subspan(begin, count);
        std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    return make_node("slice_cols", std::move(out), {a}, [begin](Node &n) {
        Tensor &g = n.parents[0]->grad_buffer();
        for (std::size_t r = 0; r < n.grad.rows(); ++r) {
            const auto src = std::as_const(n.grad).row(r);
            auto dst = g.row(r).subspan(begin, src.size());
            for (std::size_t c = 0; c < src.size(); ++c) {
                dst[c] += src[c];
            }
        }
    });
}

namespace {

// Rotates each (2k, 2k+1) pair of row i by sign·positions[i]·base^(-2k/d).
void rotate_pairs(const Tensor &in, Tensor &out, std::span<const std::int32_t> positions,
                  double base, double sign, bool accumulate) {
    const std::size_t d = in.cols();
    for (std::size_t r = 0; r < in.rows(); ++r) {
        for (std::size_t k = 0; k + 1 < d; k += 2) {
            const double freq = std::pow(base, -static_cast<double>(k) / static_cast<double>(d));
            const double angle = sign * static_cast<double>(positions[r]) * freq;
            const double c = std::cos(angle);
            const double s = std::sin(angle);
            const double x0 = in(r, k);
            const double x1 = in(r, k + 1);
            const double y0 = x0 * c - x1 * s;
            const double y1 = x0 * s + x1 * c;
            if (accumulate) {
                out(r, k) += y0;
                out(r, k + 1) += y1;
            } else {
                out(r, k) = y0;
                out(r, k + 1) = y1;
            }
        }
    }
}

} // namespace

Var rotary(const Var &x, std::span<const std::int32_t> positions, double base) {
    const Tensor &X = x->value;
    if (positions.size() != X.rows()) {
        throw ShapeError("rotary: " + std::to_string(positions.size()) + " positions for " +
                         X.shape_str());
    }
    if (X.cols() % 2 != 0) {
        throw ShapeError("rotary: odd head dimension in " + X.shape_str());
    }
    check_finite("rotary", X);
    Tensor Y(X.rows(), X.cols());
    rotate_pairs(X, Y, positions, base, 1.0, false);
    std::vector<std::int32_t> saved(positions.begin(), positions.end());
    return make_node("rotary", std::move(Y), {x}, [saved = std::move(saved), base](Node &n) {
        rotate_pairs(n.grad, n.parents[0]->grad_buffer(), saved, base, -1.0, true);
    });
}

Var weighted_sum(const Var &column, std::span<const double> weights) {
    const Tensor &C = column->value;
    if (C.cols() != 1 || C.rows() != weights.size()) {
        throw ShapeError("weighted_sum: column " + C.shape_str() + " with " +
                         std::to_string(weights.size()) + " weights");
    }
    auto w = constant(Tensor(1, weights.size(), std::vector<double>(weights.begin(), weights.end())));
    return matmul(w, column);
}

} // namespace bdiff::ops
