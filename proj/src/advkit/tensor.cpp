#include "advkit/tensor.hpp"

#include <cmath>
#include <sstream>

namespace advkit {

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string shape_str(const std::vector<int64_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

double dot(const Tensor& a, const Tensor& b) {
    if (a.numel() != b.numel()) fail(ErrorCode::Shape, "dot: size mismatch");
    double s = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) s += a.data[i] * b.data[i];
    return s;
}

double norm2(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data) s += v * v;
    return std::sqrt(s);
}

double norm1(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data) s += std::fabs(v);
    return s;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.numel() != b.numel()) fail(ErrorCode::Shape, "max_abs_diff: size mismatch");
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        double d = std::fabs(a.data[i] - b.data[i]);
        if (d > m) m = d;
    }
    return m;
}

void matmul_wt(const double* x, const double* w, double* out,
               int64_t rows, int64_t inner, int64_t cols) {
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = x + r * inner;
        double* or_ = out + r * cols;
        for (int64_t c = 0; c < cols; ++c) {
            const double* wc = w + c * inner;
            double acc = 0.0;
            for (int64_t i = 0; i < inner; ++i) acc += xr[i] * wc[i];
            or_[c] = acc;
        }
    }
}

} // namespace advkit
