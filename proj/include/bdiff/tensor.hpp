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

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace bdiff {

// 64-byte aligned storage so vectorized kernels split work the same way no
// matter where a buffer lands on the heap.
template <class T> struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() = default;
    template <class U> AlignedAllocator(const AlignedAllocator<U> &) {}

    T *allocate(std::size_t n) { return static_cast<T *>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T *p, std::size_t) { ::operator delete(p, kAlign); }

    template <class U> bool operator==(const AlignedAllocator<U> &) const { return true; }
};

/// Dense row-major matrix of doubles. Vectors are 1×n or n×1; scalars 1×1.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
    Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor(1, 1, v); }
    static Tensor identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    std::vector<std::size_t> shape() const { return {rows_, cols_}; }
    std::string shape_str() const;

    double &operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double &operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }

    // Appends the rows of `other` (same column count) in place.
    void append_rows(const Tensor &other);

    void fill(double v);
    bool same_shape(const Tensor &o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    friend bool operator==(const Tensor &, const Tensor &) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double, AlignedAllocator<double>> data_;
};

/// Max |a - b| over all elements; shapes must match.
double max_abs_diff(const Tensor &a, const Tensor &b);

struct Node;
using Var = std::shared_ptr<Node>;

/// One value in the dynamic graph. Leaves are constants or parameters;
/// interior nodes carry the closure that pushes `grad` to their parents.
struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::string op;
    std::vector<Var> parents;
    std::function<void(Node &)> backward_fn;

    // Grad buffer, allocated zero-filled on first access.
    Tensor &grad_buffer();
};

Var constant(Tensor value);
Var leaf(Tensor value, bool requires_grad = true);

// Reverse-mode sweep from a 1×1 root. Gradients accumulate into every
// reachable node with requires_grad; interior closures are released after use.
void backward(const Var &root);

// True while a NoGradGuard is alive on this thread.
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard &) = delete;
    NoGradGuard &operator=(const NoGradGuard &) = delete;

private:
    bool previous_;
};

struct Parameter {
    std::string name;
    Var var;
};

void zero_grad(std::span<Parameter> params);

// Keeps freed tensor buffers in the process heap rather than unmapping them.
// No-op outside glibc.
void retain_heap_buffers();

} // namespace bdiff
