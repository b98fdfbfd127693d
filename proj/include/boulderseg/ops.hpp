#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "boulderseg/common.hpp"
#include "boulderseg/rng.hpp"
#include "boulderseg/tensor.hpp"

// Layer primitives used by the encoder grammar and the segmentation decoder:
// dilated same-padding 2-D convolution (im2col + GEMM), 2x2 pooling,
// activations, nearest-neighbour upsampling, depth concatenation and the
// kernel initializers. Forward kernels are paired with explicit backward
// kernels consumed by the autodiff graph.

namespace bseg {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<MatRM>;
using MapConstMat = Eigen::Map<const MatRM>;

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

enum class ActKind { NReLU, ReLU, LReLU, ELU, Tanh, Sigmoid, None };

struct Activation {
    ActKind kind = ActKind::None;
    double lrelu_slope = 0.01;  // paper silent; common default
    double elu_alpha = 1.0;
};

inline const char* to_string(ActKind k) {
    switch (k) {
        case ActKind::NReLU: return "NReLU";
        case ActKind::ReLU: return "ReLU";
        case ActKind::LReLU: return "LReLU";
        case ActKind::ELU: return "ELU";
        case ActKind::Tanh: return "tanh";
        case ActKind::Sigmoid: return "sigmoid";
        case ActKind::None: return "none";
    }
    return "?";
}

inline ActKind act_from_string(const std::string& s) {
    if (s == "NReLU") return ActKind::NReLU;
    if (s == "ReLU") return ActKind::ReLU;
    if (s == "LReLU") return ActKind::LReLU;
    if (s == "ELU") return ActKind::ELU;
    if (s == "tanh") return ActKind::Tanh;
    if (s == "sigmoid") return ActKind::Sigmoid;
    if (s == "none") return ActKind::None;
    throw std::invalid_argument("unknown activation: " + s);
}

namespace detail {
constexpr double kNormEps = 1e-8;

// Per-sample, per-channel normalization to zero mean / unit variance over the
// spatial extent, independent of the batch. Used by NReLU.
inline void instance_stats(const Tensor& x, std::size_t n, std::size_t c, double& mu, double& inv_sd) {
    const std::size_t h = x.shape[1], w = x.shape[2], ch = x.shape[3];
    const std::size_t m = h * w;
    double sum = 0.0, sq = 0.0;
    const double* base = x.data.data() + n * h * w * ch;
    for (std::size_t i = 0; i < m; ++i) {
        const double v = base[i * ch + c];
        sum += v;
        sq += v * v;
    }
    mu = sum / static_cast<double>(m);
    const double var = std::max(0.0, sq / static_cast<double>(m) - mu * mu);
    inv_sd = 1.0 / std::sqrt(var + kNormEps);
}
}  // namespace detail

inline Tensor apply_activation(const Tensor& x, const Activation& act) {
    Tensor y = x;
    switch (act.kind) {
        case ActKind::None:
            return y;
        case ActKind::ReLU:
            for (double& v : y.data) v = v > 0.0 ? v : 0.0;
            return y;
        case ActKind::LReLU:
            for (double& v : y.data) v = v > 0.0 ? v : act.lrelu_slope * v;
            return y;
        case ActKind::ELU:
            for (double& v : y.data) v = v > 0.0 ? v : act.elu_alpha * std::expm1(v);
            return y;
        case ActKind::Tanh:
            for (double& v : y.data) v = std::tanh(v);
            return y;
        case ActKind::Sigmoid:
            for (double& v : y.data) v = 1.0 / (1.0 + std::exp(-v));
            return y;
        case ActKind::NReLU: {
            check_arg(x.rank() == 4, "NReLU expects a 4-D tensor");
            const std::size_t n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3];
            for (std::size_t ni = 0; ni < n; ++ni) {
                for (std::size_t ci = 0; ci < c; ++ci) {
                    double mu, inv_sd;
                    detail::instance_stats(x, ni, ci, mu, inv_sd);
                    double* base = y.data.data() + ni * h * w * c;
                    for (std::size_t i = 0; i < h * w; ++i) {
                        double& v = base[i * c + ci];
                        v = (v - mu) * inv_sd;
                        if (v < 0.0) v = 0.0;
                    }
                }
            }
            return y;
        }
    }
    return y;
}

// Gradient wrt input given the forward input x, forward output y and the
// upstream gradient gy. NReLU needs the full normalization backward.
inline Tensor activation_backward(const Tensor& x, const Tensor& y, const Tensor& gy, const Activation& act) {
    Tensor gx = gy;
    switch (act.kind) {
        case ActKind::None:
            return gx;
        case ActKind::ReLU:
            for (std::size_t i = 0; i < gx.size(); ++i) gx.data[i] = x.data[i] > 0.0 ? gy.data[i] : 0.0;
            return gx;
        case ActKind::LReLU:
            for (std::size_t i = 0; i < gx.size(); ++i)
                gx.data[i] = x.data[i] > 0.0 ? gy.data[i] : act.lrelu_slope * gy.data[i];
            return gx;
        case ActKind::ELU:
            for (std::size_t i = 0; i < gx.size(); ++i)
                gx.data[i] = x.data[i] > 0.0 ? gy.data[i] : gy.data[i] * (y.data[i] + act.elu_alpha);
            return gx;
        case ActKind::Tanh:
            for (std::size_t i = 0; i < gx.size(); ++i) gx.data[i] = gy.data[i] * (1.0 - y.data[i] * y.data[i]);
            return gx;
        case ActKind::Sigmoid:
            for (std::size_t i = 0; i < gx.size(); ++i) gx.data[i] = gy.data[i] * y.data[i] * (1.0 - y.data[i]);
            return gx;
        case ActKind::NReLU: {
            const std::size_t n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3];
            const std::size_t m = h * w;
            for (std::size_t ni = 0; ni < n; ++ni) {
                for (std::size_t ci = 0; ci < c; ++ci) {
                    double mu, inv_sd;
                    detail::instance_stats(x, ni, ci, mu, inv_sd);
                    const double* xb = x.data.data() + ni * m * c;
                    const double* gb = gy.data.data() + ni * m * c;
                    double* ob = gx.data.data() + ni * m * c;
                    // d/dxhat through the ReLU gate, then the usual
                    // normalization backward with spatial means.
                    double sum_g = 0.0, sum_gx = 0.0;
                    for (std::size_t i = 0; i < m; ++i) {
                        const double xhat = (xb[i * c + ci] - mu) * inv_sd;
                        const double gh = xhat > 0.0 ? gb[i * c + ci] : 0.0;
                        sum_g += gh;
                        sum_gx += gh * xhat;
                    }
                    const double mean_g = sum_g / static_cast<double>(m);
                    const double mean_gx = sum_gx / static_cast<double>(m);
                    for (std::size_t i = 0; i < m; ++i) {
                        const double xhat = (xb[i * c + ci] - mu) * inv_sd;
                        const double gh = xhat > 0.0 ? gb[i * c + ci] : 0.0;
                        ob[i * c + ci] = (gh - mean_g - xhat * mean_gx) * inv_sd;
                    }
                }
            }
            return gx;
        }
    }
    return gx;
}

// ---------------------------------------------------------------------------
// Dilated same-padding convolution, stride 1
// ---------------------------------------------------------------------------

namespace detail {

inline void check_conv_args(const Tensor& input, const Tensor& kernel, int dilation) {
    check_arg(dilation >= 1, "conv2d: dilation_rate must be >= 1, got " + std::to_string(dilation));
    check_arg(input.rank() == 4, "conv2d: input must be 4-D (N,H,W,C), got " + input.shape_str());
    check_arg(kernel.rank() == 4, "conv2d: kernel must be 4-D (kh,kw,Cin,Cout), got " + kernel.shape_str());
    const std::size_t kh = kernel.shape[0], kw = kernel.shape[1];
    check_arg(kh == kw && kh % 2 == 1, "conv2d: kernel must be square with odd size, got " + kernel.shape_str());
    if (input.shape[3] != kernel.shape[2]) {
        throw std::invalid_argument("conv2d: input channels " + std::to_string(input.shape[3]) +
                                    " do not match kernel input depth " + std::to_string(kernel.shape[2]));
    }
}

// cols is (H*W) x (kh*kw*Cin) for one sample; zero padding outside.
inline void im2col(const Tensor& input, std::size_t n, int k, int dilation, MatRM& cols) {
    const int h = static_cast<int>(input.shape[1]);
    const int w = static_cast<int>(input.shape[2]);
    const int cin = static_cast<int>(input.shape[3]);
    const int half = (k - 1) / 2;
    cols.setZero();
    const double* base = input.data.data() + static_cast<std::size_t>(n) * h * w * cin;
    for (int ky = 0; ky < k; ++ky) {
        const int dy = (ky - half) * dilation;
        for (int kx = 0; kx < k; ++kx) {
            const int dx = (kx - half) * dilation;
            const int col0 = (ky * k + kx) * cin;
            for (int y = std::max(0, -dy); y < std::min(h, h - dy); ++y) {
                const int sy = y + dy;
                const int x_lo = std::max(0, -dx);
                const int x_hi = std::min(w, w - dx);
                if (x_lo >= x_hi) continue;
                const double* src = base + (static_cast<std::size_t>(sy) * w + (x_lo + dx)) * cin;
                double* dst = cols.data() + (static_cast<std::size_t>(y) * w + x_lo) * cols.cols() + col0;
                for (int x = x_lo; x < x_hi; ++x) {
                    for (int c = 0; c < cin; ++c) dst[c] = src[c];
                    src += cin;
                    dst += cols.cols();
                }
            }
        }
    }
}

// Scatter-add of a cols-shaped gradient back onto the input gradient.
inline void col2im_add(const MatRM& cols, std::size_t n, int k, int dilation, Tensor& ginput) {
    const int h = static_cast<int>(ginput.shape[1]);
    const int w = static_cast<int>(ginput.shape[2]);
    const int cin = static_cast<int>(ginput.shape[3]);
    const int half = (k - 1) / 2;
    double* base = ginput.data.data() + static_cast<std::size_t>(n) * h * w * cin;
    for (int ky = 0; ky < k; ++ky) {
        const int dy = (ky - half) * dilation;
        for (int kx = 0; kx < k; ++kx) {
            const int dx = (kx - half) * dilation;
            const int col0 = (ky * k + kx) * cin;
            for (int y = std::max(0, -dy); y < std::min(h, h - dy); ++y) {
                const int sy = y + dy;
                const int x_lo = std::max(0, -dx);
                const int x_hi = std::min(w, w - dx);
                if (x_lo >= x_hi) continue;
                double* dst = base + (static_cast<std::size_t>(sy) * w + (x_lo + dx)) * cin;
                const double* src = cols.data() + (static_cast<std::size_t>(y) * w + x_lo) * cols.cols() + col0;
                for (int x = x_lo; x < x_hi; ++x) {
                    for (int c = 0; c < cin; ++c) dst[c] += src[c];
                    dst += cin;
                    src += cols.cols();
                }
            }
        }
    }
}

}  // namespace detail

inline Tensor conv2d(const Tensor& input, const Tensor& kernel, int dilation) {
    detail::check_conv_args(input, kernel, dilation);
    const std::size_t n = input.shape[0], h = input.shape[1], w = input.shape[2];
    const int k = static_cast<int>(kernel.shape[0]);
    const std::size_t cin = kernel.shape[2], cout = kernel.shape[3];

    Tensor out = Tensor::zeros({n, h, w, cout});
    MapConstMat kmat(kernel.data.data(), static_cast<Eigen::Index>(k * k * cin),
                     static_cast<Eigen::Index>(cout));
    MatRM cols(static_cast<Eigen::Index>(h * w), static_cast<Eigen::Index>(k * k * cin));
    for (std::size_t s = 0; s < n; ++s) {
        detail::im2col(input, s, k, dilation, cols);
        MapMat omat(out.data.data() + s * h * w * cout, static_cast<Eigen::Index>(h * w),
                    static_cast<Eigen::Index>(cout));
        omat.noalias() = cols * kmat;
    }
    return out;
}

// Gradients of conv2d wrt input and kernel. gkernel is accumulated into.
inline void conv2d_backward(const Tensor& input, const Tensor& kernel, int dilation, const Tensor& gout,
                            Tensor* ginput, Tensor* gkernel) {
    const std::size_t n = input.shape[0], h = input.shape[1], w = input.shape[2];
    const int k = static_cast<int>(kernel.shape[0]);
    const std::size_t cin = kernel.shape[2], cout = kernel.shape[3];

    MapConstMat kmat(kernel.data.data(), static_cast<Eigen::Index>(k * k * cin),
                     static_cast<Eigen::Index>(cout));
    MatRM cols(static_cast<Eigen::Index>(h * w), static_cast<Eigen::Index>(k * k * cin));
    MatRM gcols(static_cast<Eigen::Index>(h * w), static_cast<Eigen::Index>(k * k * cin));
    for (std::size_t s = 0; s < n; ++s) {
        MapConstMat gmat(gout.data.data() + s * h * w * cout, static_cast<Eigen::Index>(h * w),
                         static_cast<Eigen::Index>(cout));
        if (gkernel) {
            detail::im2col(input, s, k, dilation, cols);
            MapMat gk(gkernel->data.data(), static_cast<Eigen::Index>(k * k * cin),
                      static_cast<Eigen::Index>(cout));
            gk.noalias() += cols.transpose() * gmat;
        }
        if (ginput) {
            gcols.noalias() = gmat * kmat.transpose();
            detail::col2im_add(gcols, s, k, dilation, *ginput);
        }
    }
}

// ---------------------------------------------------------------------------
// 2x2 pooling, stride 2
// ---------------------------------------------------------------------------

enum class Pooling { Max, Mean };

inline const char* to_string(Pooling p) { return p == Pooling::Max ? "max" : "mean"; }

inline Pooling pooling_from_string(const std::string& s) {
    if (s == "max") return Pooling::Max;
    if (s == "mean") return Pooling::Mean;
    throw std::invalid_argument("unknown pooling: " + s);
}

// argmax (when non-null) records, per output element, the flat input index
// chosen by max pooling; ties go to the first window element scanned.
inline Tensor pool2d(const Tensor& input, Pooling strategy, std::vector<std::uint32_t>* argmax = nullptr) {
    check_arg(input.rank() == 4, "pool2d: input must be 4-D, got " + input.shape_str());
    const std::size_t n = input.shape[0], h = input.shape[1], w = input.shape[2], c = input.shape[3];
    if (h % 2 != 0 || w % 2 != 0) {
        throw std::invalid_argument("pool2d: spatial dims must be even, got " + input.shape_str());
    }
    const std::size_t oh = h / 2, ow = w / 2;
    Tensor out = Tensor::zeros({n, oh, ow, c});
    if (argmax) argmax->assign(out.size(), 0);
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const std::size_t i00 = ((s * h + 2 * y) * w + 2 * x) * c + ch;
                    const std::size_t i01 = i00 + c;
                    const std::size_t i10 = i00 + w * c;
                    const std::size_t i11 = i10 + c;
                    const std::size_t o = ((s * oh + y) * ow + x) * c + ch;
                    if (strategy == Pooling::Mean) {
                        out.data[o] =
                            0.25 * (input.data[i00] + input.data[i01] + input.data[i10] + input.data[i11]);
                    } else {
                        std::size_t best = i00;
                        if (input.data[i01] > input.data[best]) best = i01;
                        if (input.data[i10] > input.data[best]) best = i10;
                        if (input.data[i11] > input.data[best]) best = i11;
                        out.data[o] = input.data[best];
                        if (argmax) (*argmax)[o] = static_cast<std::uint32_t>(best);
                    }
                }
            }
        }
    }
    return out;
}

inline Tensor pool2d_backward(const Tensor& input, Pooling strategy, const Tensor& gout,
                              const std::vector<std::uint32_t>& argmax) {
    Tensor gin = Tensor::zeros(input.shape);
    const std::size_t n = input.shape[0], h = input.shape[1], w = input.shape[2], c = input.shape[3];
    const std::size_t oh = h / 2, ow = w / 2;
    if (strategy == Pooling::Max) {
        for (std::size_t o = 0; o < gout.size(); ++o) gin.data[argmax[o]] += gout.data[o];
        return gin;
    }
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const double g = 0.25 * gout.data[((s * oh + y) * ow + x) * c + ch];
                    const std::size_t i00 = ((s * h + 2 * y) * w + 2 * x) * c + ch;
                    gin.data[i00] += g;
                    gin.data[i00 + c] += g;
                    gin.data[i00 + w * c] += g;
                    gin.data[i00 + w * c + c] += g;
                }
            }
        }
    }
    return gin;
}

// ---------------------------------------------------------------------------
// Upsampling and depth concatenation (decoder primitives)
// ---------------------------------------------------------------------------

inline Tensor upsample2x(const Tensor& input) {
    check_arg(input.rank() == 4, "upsample2x: input must be 4-D");
    const std::size_t n = input.shape[0], h = input.shape[1], w = input.shape[2], c = input.shape[3];
    Tensor out = Tensor::zeros({n, 2 * h, 2 * w, c});
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                const double* src = &input.data[((s * h + y) * w + x) * c];
                for (int oy = 0; oy < 2; ++oy) {
                    double* dst = &out.data[((s * 2 * h + 2 * y + oy) * 2 * w + 2 * x) * c];
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        dst[ch] = src[ch];
                        dst[c + ch] = src[ch];
                    }
                }
            }
        }
    }
    return out;
}

inline Tensor upsample2x_backward(const Tensor& input, const Tensor& gout) {
    const std::size_t n = input.shape[0], h = input.shape[1], w = input.shape[2], c = input.shape[3];
    Tensor gin = Tensor::zeros(input.shape);
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                double* dst = &gin.data[((s * h + y) * w + x) * c];
                for (int oy = 0; oy < 2; ++oy) {
                    const double* src = &gout.data[((s * 2 * h + 2 * y + oy) * 2 * w + 2 * x) * c];
                    for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[ch] + src[c + ch];
                }
            }
        }
    }
    return gin;
}

inline Tensor concat_channels(const std::vector<const Tensor*>& parts) {
    check_arg(!parts.empty(), "concat_channels: no inputs");
    const Tensor& first = *parts[0];
    check_arg(first.rank() == 4, "concat_channels: inputs must be 4-D");
    std::size_t ctotal = 0;
    for (const Tensor* t : parts) {
        check_arg(t->rank() == 4 && t->shape[0] == first.shape[0] && t->shape[1] == first.shape[1] &&
                      t->shape[2] == first.shape[2],
                  "concat_channels: spatial/batch dims must match");
        ctotal += t->shape[3];
    }
    const std::size_t n = first.shape[0], h = first.shape[1], w = first.shape[2];
    Tensor out = Tensor::zeros({n, h, w, ctotal});
    const std::size_t pixels = n * h * w;
    std::size_t coff = 0;
    for (const Tensor* t : parts) {
        const std::size_t c = t->shape[3];
        for (std::size_t p = 0; p < pixels; ++p) {
            const double* src = &t->data[p * c];
            double* dst = &out.data[p * ctotal + coff];
            for (std::size_t ch = 0; ch < c; ++ch) dst[ch] = src[ch];
        }
        coff += c;
    }
    return out;
}

// Extracts the gradient slice for the part occupying channels [coff, coff+c).
inline Tensor concat_backward_slice(const Tensor& gout, std::size_t coff, std::size_t c) {
    const std::size_t n = gout.shape[0], h = gout.shape[1], w = gout.shape[2], ctotal = gout.shape[3];
    Tensor g = Tensor::zeros({n, h, w, c});
    const std::size_t pixels = n * h * w;
    for (std::size_t p = 0; p < pixels; ++p) {
        const double* src = &gout.data[p * ctotal + coff];
        double* dst = &g.data[p * c];
        for (std::size_t ch = 0; ch < c; ++ch) dst[ch] = src[ch];
    }
    return g;
}

// ---------------------------------------------------------------------------
// Dense layer and bias
// ---------------------------------------------------------------------------

inline Tensor dense(const Tensor& x, const Tensor& w) {
    check_arg(x.rank() == 2 && w.rank() == 2, "dense: expects 2-D input and weight");
    if (x.shape[1] != w.shape[0]) {
        throw std::invalid_argument("dense: input width " + std::to_string(x.shape[1]) +
                                    " does not match weight rows " + std::to_string(w.shape[0]));
    }
    Tensor out = Tensor::zeros({x.shape[0], w.shape[1]});
    MapConstMat xm(x.data.data(), static_cast<Eigen::Index>(x.shape[0]), static_cast<Eigen::Index>(x.shape[1]));
    MapConstMat wm(w.data.data(), static_cast<Eigen::Index>(w.shape[0]), static_cast<Eigen::Index>(w.shape[1]));
    MapMat om(out.data.data(), static_cast<Eigen::Index>(out.shape[0]), static_cast<Eigen::Index>(out.shape[1]));
    om.noalias() = xm * wm;
    return out;
}

inline void dense_backward(const Tensor& x, const Tensor& w, const Tensor& gout, Tensor* gx, Tensor* gw) {
    MapConstMat xm(x.data.data(), static_cast<Eigen::Index>(x.shape[0]), static_cast<Eigen::Index>(x.shape[1]));
    MapConstMat wm(w.data.data(), static_cast<Eigen::Index>(w.shape[0]), static_cast<Eigen::Index>(w.shape[1]));
    MapConstMat gm(gout.data.data(), static_cast<Eigen::Index>(gout.shape[0]),
                   static_cast<Eigen::Index>(gout.shape[1]));
    if (gx) {
        MapMat m(gx->data.data(), xm.rows(), xm.cols());
        m.noalias() += gm * wm.transpose();
    }
    if (gw) {
        MapMat m(gw->data.data(), wm.rows(), wm.cols());
        m.noalias() += xm.transpose() * gm;
    }
}

// Adds a per-channel bias along the last dimension of any-rank tensor.
inline Tensor bias_add(const Tensor& x, const Tensor& b) {
    check_arg(b.rank() == 1, "bias_add: bias must be 1-D");
    const std::size_t c = b.shape[0];
    check_arg(x.shape.back() == c, "bias_add: channel mismatch");
    Tensor out = x;
    const std::size_t rows = x.size() / c;
    for (std::size_t r = 0; r < rows; ++r) {
        double* dst = &out.data[r * c];
        for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += b.data[ch];
    }
    return out;
}

inline Tensor bias_backward(const Tensor& gout, std::size_t c) {
    Tensor gb = Tensor::zeros({c});
    const std::size_t rows = gout.size() / c;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* src = &gout.data[r * c];
        for (std::size_t ch = 0; ch < c; ++ch) gb.data[ch] += src[ch];
    }
    return gb;
}

// ---------------------------------------------------------------------------
// Kernel initializers
// ---------------------------------------------------------------------------

enum class InitScheme { Uniform, Normal, Orthogonal };

inline const char* to_string(InitScheme s) {
    switch (s) {
        case InitScheme::Uniform: return "uniform";
        case InitScheme::Normal: return "normal";
        case InitScheme::Orthogonal: return "orthogonal";
    }
    return "?";
}

inline InitScheme init_from_string(const std::string& s) {
    if (s == "uniform") return InitScheme::Uniform;
    if (s == "normal") return InitScheme::Normal;
    if (s == "orthogonal") return InitScheme::Orthogonal;
    throw std::invalid_argument("unknown init scheme: " + s);
}

struct KernelInit {
    InitScheme scheme = InitScheme::Uniform;
    std::uint64_t seed = 0;
};

namespace detail {

// QR of a Gaussian matrix with the R-diagonal sign fix, so the result is a
// deterministic draw from the orthogonal group. tall: rows >= cols gives
// orthonormal columns; the wide case is handled by transposition.
inline MatRM orthogonal_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
    const bool wide = rows < cols;
    const std::size_t r = wide ? cols : rows;
    const std::size_t c = wide ? rows : cols;
    Eigen::MatrixXd a(r, c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) a(i, j) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(r),
                                                                      static_cast<Eigen::Index>(c));
    Eigen::MatrixXd rmat = qr.matrixQR().topRows(static_cast<Eigen::Index>(c)).triangularView<Eigen::Upper>();
    for (std::size_t j = 0; j < c; ++j) {
        if (rmat(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)) < 0.0)
            q.col(static_cast<Eigen::Index>(j)) *= -1.0;
    }
    MatRM out(rows, cols);
    if (wide) {
        out = q.transpose();
    } else {
        out = q;
    }
    return out;
}

}  // namespace detail

// Pure function of (shape, scheme, seed). Orthogonal reshapes the kernel to a
// 2-D matrix (leading dims x last dim) and draws from the orthogonal group via
// QR of a Gaussian; this also serves shapes with no orthonormal-column
// ordering, per the standard construction.
inline Tensor init_kernel(const std::vector<std::size_t>& shape, const KernelInit& init) {
    check_arg(!shape.empty(), "init_kernel: empty shape");
    for (std::size_t d : shape) check_arg(d > 0, "init_kernel: zero dimension");
    Tensor t = Tensor::zeros(shape);
    Rng rng = Rng::stream(init.seed, "init");
    switch (init.scheme) {
        case InitScheme::Uniform:
            for (double& v : t.data) v = rng.uniform(-1.0, 1.0);
            return t;
        case InitScheme::Normal:
            for (double& v : t.data) v = rng.normal();
            return t;
        case InitScheme::Orthogonal: {
            const std::size_t cols = shape.back();
            const std::size_t rows = t.size() / cols;
            MatRM m = detail::orthogonal_matrix(rows, cols, rng);
            std::copy(m.data(), m.data() + t.size(), t.data.begin());
            return t;
        }
    }
    return t;
}

}  // namespace bseg
