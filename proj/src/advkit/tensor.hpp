#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "advkit/error.hpp"

namespace advkit {

/// Dense row-major tensor of 64-bit reals. The first axis is the batch
/// axis wherever batches are involved.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(numel_of(shape)), 0.0);
    }
    Tensor(std::vector<int64_t> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<int64_t>(data.size()) != numel_of(shape))
            fail(ErrorCode::Shape, "tensor data length does not match shape");
    }

    static int64_t numel_of(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t e : s) {
            if (e <= 0) fail(ErrorCode::Shape, "tensor extents must be positive");
            n *= e;
        }
        return n;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int64_t dim(size_t i) const { return shape.at(i); }
    size_t rank() const { return shape.size(); }

    double* ptr() { return data.data(); }
    const double* ptr() const { return data.data(); }

    double& operator[](size_t i) { return data[i]; }
    double operator[](size_t i) const { return data[i]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    /// View this tensor under a different shape (same element count).
    Tensor reshaped(std::vector<int64_t> s) const {
        if (numel_of(s) != numel())
            fail(ErrorCode::Shape, "reshape changes element count");
        return Tensor(std::move(s), data);
    }

    bool all_finite() const;
};

std::string shape_str(const std::vector<int64_t>& shape);

double dot(const Tensor& a, const Tensor& b);
double norm2(const Tensor& a);
double norm1(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);

/// C[rows x cols] = X[rows x inner] * W^T where W is [cols x inner].
/// Row-independent accumulation order (fixed sweep over the inner axis),
/// so results do not depend on how rows are batched.
void matmul_wt(const double* x, const double* w, double* out,
               int64_t rows, int64_t inner, int64_t cols);

} // namespace advkit
