#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "boulderseg/common.hpp"
#include "boulderseg/model.hpp"
#include "boulderseg/tensor.hpp"

namespace bseg {

// Center-of-boulder image-plane coordinates, in pixels.
struct CoB {
    double u = 0.0;
    double v = 0.0;
};

// Euclidean distance in pixels between estimated and true CoB.
inline double cob_error(const CoB& estimate, const CoB& truth) {
    const double du = estimate.u - truth.u;
    const double dv = estimate.v - truth.v;
    return std::sqrt(du * du + dv * dv);
}

namespace detail {
inline void check_mask_pair(const Tensor& pred, const Tensor& truth, std::size_t n_classes, const char* what) {
    check_same_shape(pred, truth, what);
    for (const Tensor* m : {&pred, &truth}) {
        for (double v : m->data) {
            const std::size_t c = static_cast<std::size_t>(v);
            check_arg(v >= 0.0 && c < n_classes && static_cast<double>(c) == v,
                      std::string(what) + ": invalid class index");
        }
    }
}
}  // namespace detail

// Mean intersection over union. Per-class IOU averaged over the classes
// present in either mask; classes absent from both are excluded from the
// mean (the 0/0 case is undefined, not zero).
inline double miou(const Tensor& pred_mask, const Tensor& true_mask, std::size_t n_classes = 2) {
    detail::check_mask_pair(pred_mask, true_mask, n_classes, "miou");
    std::vector<std::size_t> inter(n_classes, 0), uni(n_classes, 0);
    for (std::size_t i = 0; i < pred_mask.size(); ++i) {
        const std::size_t p = static_cast<std::size_t>(pred_mask.data[i]);
        const std::size_t t = static_cast<std::size_t>(true_mask.data[i]);
        if (p == t) {
            ++inter[p];
            ++uni[p];
        } else {
            ++uni[p];
            ++uni[t];
        }
    }
    double acc = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < n_classes; ++c) {
        if (uni[c] == 0) continue;
        acc += static_cast<double>(inter[c]) / static_cast<double>(uni[c]);
        ++present;
    }
    check_arg(present > 0, "miou: empty masks");
    return acc / static_cast<double>(present);
}

// IOU of a single class; returns 1 when the class is absent from both masks.
inline double class_iou(const Tensor& pred_mask, const Tensor& true_mask, std::size_t cls) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred_mask.size(); ++i) {
        const bool p = static_cast<std::size_t>(pred_mask.data[i]) == cls;
        const bool t = static_cast<std::size_t>(true_mask.data[i]) == cls;
        if (p && t) ++inter;
        if (p || t) ++uni;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// Fraction of pixels with equal class.
inline double accuracy(const Tensor& pred_mask, const Tensor& true_mask) {
    check_same_shape(pred_mask, true_mask, "accuracy");
    check_arg(pred_mask.size() > 0, "accuracy: empty masks");
    std::size_t eq = 0;
    for (std::size_t i = 0; i < pred_mask.size(); ++i) {
        if (pred_mask.data[i] == true_mask.data[i]) ++eq;
    }
    return static_cast<double>(eq) / static_cast<double>(pred_mask.size());
}

// ---------------------------------------------------------------------------
// Aggregates
// ---------------------------------------------------------------------------

// Per-sample metric values with dataset-level mean and standard deviation.
// mu/sigma are over per-image values, not pooled pixels.
struct EvalRecord {
    std::string metric;
    std::vector<double> per_sample;
    double mean = 0.0;
    double stddev = 0.0;

    static EvalRecord from(std::string name, std::vector<double> values) {
        EvalRecord r;
        r.metric = std::move(name);
        r.per_sample = std::move(values);
        check_arg(!r.per_sample.empty(), "EvalRecord: no samples");
        for (double v : r.per_sample) r.mean += v;
        r.mean /= static_cast<double>(r.per_sample.size());
        double acc = 0.0;
        for (double v : r.per_sample) acc += (v - r.mean) * (v - r.mean);
        r.stddev = r.per_sample.size() > 1 ? std::sqrt(acc / static_cast<double>(r.per_sample.size())) : 0.0;
        return r;
    }
};

// CSV: one row per sample plus a trailing summary row.
inline void write_eval_csv(const EvalRecord& rec, const std::string& path) {
    std::ofstream os(path);
    check_data(os.good(), "cannot open for writing: " + path);
    os << "sample_id,metric,value\n";
    os.precision(17);
    for (std::size_t i = 0; i < rec.per_sample.size(); ++i) {
        os << i << ',' << rec.metric << ',' << rec.per_sample[i] << '\n';
    }
    os << "mean," << rec.metric << ',' << rec.mean << '\n';
    os << "stddev," << rec.metric << ',' << rec.stddev << '\n';
    check_data(os.good(), "write failed: " + path);
}

// ---------------------------------------------------------------------------
// Weight distributions
// ---------------------------------------------------------------------------

// Histogram of a parameter tensor (optionally one output column of a 2-D
// weight matrix), as relative probabilities per bin, plus sample moments and
// the matching bias component when one exists.
struct WeightHistogram {
    std::vector<double> bin_edges;  // n_bins + 1
    std::vector<double> probs;      // sum to 1
    double mean = 0.0;
    double variance = 0.0;
    std::vector<double> bias;  // empty when the layer has no bias term
};

inline WeightHistogram weight_histogram(const ParamStore& params, const std::string& layer, int n_bins,
                                        int column = -1) {
    check_arg(n_bins >= 1, "weight_histogram: n_bins must be >= 1");
    check_arg(params.has(layer), "weight_histogram: no such layer parameter: " + layer);
    const Tensor& w = params.at(layer);
    std::vector<double> vals;
    if (column >= 0) {
        check_arg(w.rank() == 2 && static_cast<std::size_t>(column) < w.shape[1],
                  "weight_histogram: column out of range");
        vals.reserve(w.shape[0]);
        for (std::size_t i = 0; i < w.shape[0]; ++i) vals.push_back(w.at(i, static_cast<std::size_t>(column)));
    } else {
        vals = w.data;
    }
    check_arg(!vals.empty(), "weight_histogram: empty selection");

    WeightHistogram h;
    const auto [mn_it, mx_it] = std::minmax_element(vals.begin(), vals.end());
    double lo = *mn_it, hi = *mx_it;
    if (lo == hi) {  // constant weights: one occupied bin
        lo -= 0.5;
        hi += 0.5;
    }
    h.bin_edges.resize(static_cast<std::size_t>(n_bins) + 1);
    for (int i = 0; i <= n_bins; ++i)
        h.bin_edges[static_cast<std::size_t>(i)] = lo + (hi - lo) * static_cast<double>(i) / n_bins;
    h.probs.assign(static_cast<std::size_t>(n_bins), 0.0);
    for (double v : vals) {
        int b = static_cast<int>(static_cast<double>(n_bins) * (v - lo) / (hi - lo));
        b = std::clamp(b, 0, n_bins - 1);
        h.probs[static_cast<std::size_t>(b)] += 1.0;
    }
    for (double& p : h.probs) p /= static_cast<double>(vals.size());

    for (double v : vals) h.mean += v;
    h.mean /= static_cast<double>(vals.size());
    for (double v : vals) h.variance += (v - h.mean) * (v - h.mean);
    h.variance /= static_cast<double>(vals.size());

    // Companion bias: "<stem>.bias" next to "<stem>.weight"/"<stem>.beta".
    const std::size_t dot = layer.rfind('.');
    if (dot != std::string::npos) {
        const std::string bias_name = layer.substr(0, dot) + ".bias";
        if (params.has(bias_name)) h.bias = params.at(bias_name).data;
    }
    return h;
}

inline void write_histogram_csv(const WeightHistogram& h, const std::string& path) {
    std::ofstream os(path);
    check_data(os.good(), "cannot open for writing: " + path);
    os.precision(17);
    os << "bin_lo,bin_hi,probability\n";
    for (std::size_t i = 0; i < h.probs.size(); ++i) {
        os << h.bin_edges[i] << ',' << h.bin_edges[i + 1] << ',' << h.probs[i] << '\n';
    }
    os << "# mean," << h.mean << "\n# variance," << h.variance << '\n';
    for (std::size_t i = 0; i < h.bias.size(); ++i) os << "# bias" << i << ',' << h.bias[i] << '\n';
    check_data(os.good(), "write failed: " + path);
}

}  // namespace bseg
