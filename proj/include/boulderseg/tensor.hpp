#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "boulderseg/common.hpp"

namespace bseg {

// Dense N-dimensional array of 64-bit reals, row-major. Networks use the
// (batch, height, width, channels) layout; matrices are rank 2.
// 64-bit everywhere: the ridge solve is conditioning-sensitive and sizes
// here make the memory cost irrelevant.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        check_arg(numel(shape) == data.size(), "tensor: shape/data length mismatch");
    }

    static std::size_t numel(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t d : s) n *= d;
        return n;
    }

    static Tensor zeros(std::vector<std::size_t> s) {
        std::size_t n = numel(s);
        return Tensor(std::move(s), std::vector<double>(n, 0.0));
    }

    static Tensor full(std::vector<std::size_t> s, double v) {
        std::size_t n = numel(s);
        return Tensor(std::move(s), std::vector<double>(n, v));
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape[i]; }

    // 4-D accessor (n, h, w, c).
    double& at(std::size_t n, std::size_t h, std::size_t w, std::size_t c) {
        return data[((n * shape[1] + h) * shape[2] + w) * shape[3] + c];
    }
    double at(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const {
        return data[((n * shape[1] + h) * shape[2] + w) * shape[3] + c];
    }

    // 2-D accessor (i, j).
    double& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

    Tensor reshaped(std::vector<std::size_t> s) const {
        check_arg(numel(s) == data.size(), "reshape: element count mismatch");
        return Tensor(std::move(s), data);
    }

    bool all_finite() const {
        for (double v : data) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::ostringstream os;
        os << '(';
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) os << 'x';
            os << shape[i];
        }
        os << ')';
        return os.str();
    }
};

// Contiguous sample range [i0, i1) along the leading dimension.
inline Tensor slice_samples(const Tensor& t, std::size_t i0, std::size_t i1) {
    check_arg(t.rank() >= 1 && i0 < i1 && i1 <= t.shape[0], "slice_samples: bad range");
    const std::size_t per = t.size() / t.shape[0];
    std::vector<std::size_t> shape = t.shape;
    shape[0] = i1 - i0;
    std::vector<double> data(t.data.begin() + static_cast<std::ptrdiff_t>(i0 * per),
                             t.data.begin() + static_cast<std::ptrdiff_t>(i1 * per));
    return Tensor(std::move(shape), std::move(data));
}

// Arbitrary sample subset along the leading dimension, in index order.
inline Tensor gather_samples(const Tensor& t, const std::vector<std::size_t>& idx) {
    check_arg(t.rank() >= 1 && !idx.empty(), "gather_samples: empty selection");
    const std::size_t per = t.size() / t.shape[0];
    std::vector<std::size_t> shape = t.shape;
    shape[0] = idx.size();
    std::vector<double> data(idx.size() * per);
    for (std::size_t r = 0; r < idx.size(); ++r) {
        check_arg(idx[r] < t.shape[0], "gather_samples: index out of range");
        std::copy(t.data.begin() + static_cast<std::ptrdiff_t>(idx[r] * per),
                  t.data.begin() + static_cast<std::ptrdiff_t>((idx[r] + 1) * per),
                  data.begin() + static_cast<std::ptrdiff_t>(r * per));
    }
    return Tensor(std::move(shape), std::move(data));
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " +
                                    b.shape_str());
    }
}

}  // namespace bseg
