#pragma once

// Independent oracles used by the test suites. Everything here is written
// against the definitions, not against the library's implementation paths:
// direct-loop convolution, Gauss-Jordan linear solve, brute-force pixel
// counting and central finite differences.

#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <vector>

#include "boulderseg/tensor.hpp"

namespace oracle {

// Direct 6-loop dilated same-padding convolution.
inline bseg::Tensor naive_conv2d(const bseg::Tensor& input, const bseg::Tensor& kernel, int dilation) {
    const std::size_t n = input.shape[0], h = input.shape[1], w = input.shape[2], cin = input.shape[3];
    const int k = static_cast<int>(kernel.shape[0]);
    const std::size_t cout = kernel.shape[3];
    const int half = (k - 1) / 2;
    bseg::Tensor out = bseg::Tensor::zeros({n, h, w, cout});
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                for (std::size_t co = 0; co < cout; ++co) {
                    double acc = 0.0;
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            const long sy = static_cast<long>(y) + (ky - half) * dilation;
                            const long sx = static_cast<long>(x) + (kx - half) * dilation;
                            if (sy < 0 || sy >= static_cast<long>(h) || sx < 0 || sx >= static_cast<long>(w))
                                continue;
                            for (std::size_t ci = 0; ci < cin; ++ci) {
                                acc += input.at(s, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx), ci) *
                                       kernel.data[((static_cast<std::size_t>(ky) * k + kx) * cin + ci) * cout + co];
                            }
                        }
                    out.at(s, y, x, co) = acc;
                }
    return out;
}

// Gauss-Jordan solve of A X = B with partial pivoting. Plain vectors, no
// linear-algebra library involved.
inline std::vector<std::vector<double>> gauss_solve(std::vector<std::vector<double>> a,
                                                    std::vector<std::vector<double>> b) {
    const std::size_t n = a.size();
    const std::size_t m = b[0].size();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        if (std::abs(a[piv][col]) < 1e-300) throw std::runtime_error("gauss_solve: singular matrix");
        std::swap(a[piv], a[col]);
        std::swap(b[piv], b[col]);
        const double d = a[col][col];
        for (std::size_t j = 0; j < n; ++j) a[col][j] /= d;
        for (std::size_t j = 0; j < m; ++j) b[col][j] /= d;
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            const double f = a[r][col];
            if (f == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) a[r][j] -= f * a[col][j];
            for (std::size_t j = 0; j < m; ++j) b[r][j] -= f * b[col][j];
        }
    }
    return b;
}

// Central finite difference of a scalar function wrt one entry of a tensor.
inline double central_diff(const std::function<double()>& eval, double& slot, double h = 1e-5) {
    const double saved = slot;
    slot = saved + h;
    const double fp = eval();
    slot = saved - h;
    const double fm = eval();
    slot = saved;
    return (fp - fm) / (2.0 * h);
}

// Relative error with an absolute floor for near-zero gradients.
inline double rel_err(double got, double want, double floor_ = 1e-6) {
    return std::abs(got - want) / std::max({std::abs(got), std::abs(want), floor_});
}

// Brute-force per-class intersection/union counting on masks.
struct IouCounts {
    std::size_t inter = 0, uni = 0;
};
inline IouCounts count_iou(const bseg::Tensor& pred, const bseg::Tensor& truth, std::size_t cls) {
    IouCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = static_cast<std::size_t>(pred.data[i]) == cls;
        const bool t = static_cast<std::size_t>(truth.data[i]) == cls;
        if (p && t) ++c.inter;
        if (p || t) ++c.uni;
    }
    return c;
}

}  // namespace oracle
