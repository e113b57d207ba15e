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

#include "bdiff/tensor.hpp"

#include "bdiff/errors.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace bdiff {

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(data.begin(), data.end()) {
    if (data_.size() != rows * cols) {
        throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_str());
    }
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        t(i, i) = 1.0;
    }
    return t;
}

std::string Tensor::shape_str() const {
    return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
}

void Tensor::append_rows(const Tensor &other) {
    if (rows_ == 0 && cols_ == 0) {
        *this = other;
        return;
    }
    if (other.cols_ != cols_) {
        throw ShapeError("append_rows: " + shape_str() + " vs " + other.shape_str());
    }
    data_.insert(data_.end(), other.data_.begin(), other.data_.end());
    rows_ += other.rows_;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

double max_abs_diff(const Tensor &a, const Tensor &b) {
    if (!a.same_shape(b)) {
        throw ShapeError("max_abs_diff: " + a.shape_str() + " vs " + b.shape_str());
    }
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a[i] - b[i]));
    }
    return m;
}

Tensor &Node::grad_buffer() {
    if (!grad.same_shape(value)) {
        grad = Tensor(value.rows(), value.cols());
    }
    return grad;
}

Var constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->op = "constant";
    return n;
}

Var leaf(Tensor value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    n->op = "leaf";
    return n;
}

void backward(const Var &root) {
    if (root->value.size() != 1) {
        throw ShapeError("backward: root must be 1x1, got " + root->value.shape_str());
    }
    // Iterative post-order DFS; reversed it is a topological order. `order`
    // owns the nodes so clearing parents below cannot free pending ones.
    std::vector<Var> order;
    std::unordered_set<Node *> seen;
    std::vector<std::pair<Var, std::size_t>> stack{{root, 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto &[node, next] = stack.back();
        if (next < node->parents.size()) {
            const Var p = node->parents[next++];
            if (p->requires_grad && seen.insert(p.get()).second) {
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(std::move(node));
            stack.pop_back();
        }
    }
    root->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node &n = **it;
        if (n.backward_fn) {
            n.grad_buffer();
            n.backward_fn(n);
            n.backward_fn = nullptr;
            n.parents.clear();
        }
    }
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void zero_grad(std::span<Parameter> params) {
    for (auto &p : params) {
        p.var->grad_buffer().fill(0.0);
    }
}

void retain_heap_buffers() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 256 << 20);
#endif
}

} // namespace bdiff
