#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "boulderseg/common.hpp"
#include "boulderseg/tensor.hpp"

namespace bseg {

// Class weights for the weighted sparse categorical cross entropy:
// w_c = 1 - f_c where f_c is the pixel fraction of class c over the
// training masks.
struct ClassWeights {
    std::vector<double> w;  // indexed by class

    double at(std::size_t c) const {
        check_arg(c < w.size(), "class weight index out of range: " + std::to_string(c));
        return w[c];
    }
    static ClassWeights uniform(std::size_t n_classes) { return ClassWeights{std::vector<double>(n_classes, 1.0)}; }
};

// Mean over all elements of the squared difference.
inline double mse_value(const Tensor& pred, const Tensor& target) {
    check_same_shape(pred, target, "mse_loss");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred.data[i] - target.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(pred.size());
}

namespace detail {

// Numerically stable log-softmax cross entropy at the true class, weighted by
// the true-class weight and averaged over all pixels. When probs_out is given
// it receives the softmax probabilities (same shape as logits) for backward.
inline double wscce_forward(const Tensor& logits, const Tensor& target_mask, const ClassWeights& weights,
                            Tensor* probs_out) {
    check_arg(logits.rank() == 4, "wscce_loss: logits must be (N,H,W,classes), got " + logits.shape_str());
    const std::size_t n = logits.shape[0], h = logits.shape[1], w = logits.shape[2], nc = logits.shape[3];
    check_arg(target_mask.rank() == 3 && target_mask.shape[0] == n && target_mask.shape[1] == h &&
                  target_mask.shape[2] == w,
              "wscce_loss: target mask shape does not match logits " + logits.shape_str());
    check_arg(weights.w.size() >= nc, "wscce_loss: weight vector shorter than class count");
    if (probs_out) *probs_out = Tensor::zeros(logits.shape);

    const std::size_t pixels = n * h * w;
    double acc = 0.0;
    for (std::size_t p = 0; p < pixels; ++p) {
        const double* lg = &logits.data[p * nc];
        const double t = target_mask.data[p];
        const std::size_t cls = static_cast<std::size_t>(t);
        if (t < 0.0 || cls >= nc || static_cast<double>(cls) != t) {
            throw std::invalid_argument("wscce_loss: class index out of range at pixel " + std::to_string(p));
        }
        double mx = lg[0];
        for (std::size_t c = 1; c < nc; ++c) mx = std::max(mx, lg[c]);
        double z = 0.0;
        for (std::size_t c = 0; c < nc; ++c) z += std::exp(lg[c] - mx);
        const double logz = std::log(z) + mx;
        acc += weights.at(cls) * (logz - lg[cls]);
        if (probs_out) {
            double* pr = &probs_out->data[p * nc];
            for (std::size_t c = 0; c < nc; ++c) pr[c] = std::exp(lg[c] - logz);
        }
    }
    return acc / static_cast<double>(pixels);
}

}  // namespace detail

inline double wscce_value(const Tensor& logits, const Tensor& target_mask, const ClassWeights& weights) {
    return detail::wscce_forward(logits, target_mask, weights, nullptr);
}

// d loss / d logits. Weighted sum is divided by the pixel count (mean
// semantics), so uniform weights reduce exactly to the unweighted case.
inline Tensor wscce_backward(const Tensor& probs, const Tensor& target_mask, const ClassWeights& weights,
                             double gout) {
    const std::size_t nc = probs.shape[3];
    const std::size_t pixels = probs.size() / nc;
    Tensor g = Tensor::zeros(probs.shape);
    const double scale = gout / static_cast<double>(pixels);
    for (std::size_t p = 0; p < pixels; ++p) {
        const std::size_t cls = static_cast<std::size_t>(target_mask.data[p]);
        const double wc = weights.at(cls) * scale;
        const double* pr = &probs.data[p * nc];
        double* gp = &g.data[p * nc];
        for (std::size_t c = 0; c < nc; ++c) gp[c] = wc * (pr[c] - (c == cls ? 1.0 : 0.0));
    }
    return g;
}

// Pixel fractions per class over a set of masks (values are class indices),
// then w_c = 1 - f_c.
inline ClassWeights compute_class_weights(const std::vector<const Tensor*>& masks, std::size_t n_classes = 2) {
    check_data(!masks.empty(), "compute_class_weights: empty mask set");
    std::vector<double> counts(n_classes, 0.0);
    double total = 0.0;
    for (const Tensor* m : masks) {
        for (double v : m->data) {
            const std::size_t cls = static_cast<std::size_t>(v);
            check_arg(v >= 0.0 && cls < n_classes && static_cast<double>(cls) == v,
                      "compute_class_weights: label out of range");
            counts[cls] += 1.0;
            total += 1.0;
        }
    }
    check_data(total > 0.0, "compute_class_weights: no pixels");
    ClassWeights cw;
    cw.w.resize(n_classes);
    for (std::size_t c = 0; c < n_classes; ++c) cw.w[c] = 1.0 - counts[c] / total;
    return cw;
}

}  // namespace bseg
