#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <vector>

#include "boulderseg/common.hpp"
#include "boulderseg/model.hpp"
#include "boulderseg/tensor.hpp"

namespace bseg {

// CELM training: assemble the hidden-layer output matrix H by a single
// forward pass of the frozen encoder, then solve the regularized
// least-squares problem  min ||beta||^2 + C ||H beta - T||^2  in closed form.

using HiddenMatrix = Eigen::MatrixXd;  // N x L, one row per sample
using TargetMatrix = Eigen::MatrixXd;  // N x M

enum class RidgeBranch { NLeqL, NGtL };

struct RidgeSolution {
    Eigen::MatrixXd beta;  // L x M
    double C = 1.0;
    RidgeBranch branch_used = RidgeBranch::NGtL;
};

// Images and per-sample regression targets (CoB in normalized [0,1] image
// coordinates), plus the pixel scale used to report errors.
struct RegressionData {
    Tensor images;           // (N,H,W,C)
    Eigen::MatrixXd targets; // N x M
    double scale_u = 1.0;    // multiply normalized du by this for pixels
    double scale_v = 1.0;
};

// One row of H per sample. Streams the input in batches to bound memory; the
// model is read-only so calls are repeatable bit for bit.
inline HiddenMatrix compute_hidden(const CelmModel& m, const Tensor& batch, std::size_t batch_size = 64) {
    check_arg(batch.rank() == 4, "compute_hidden: batch must be 4-D, got " + batch.shape_str());
    if (batch.shape[1] != m.input_h || batch.shape[2] != m.input_w || batch.shape[3] != m.input_c) {
        throw std::invalid_argument("compute_hidden: batch " + batch.shape_str() + " does not match model input " +
                                    std::to_string(m.input_h) + "x" + std::to_string(m.input_w) + "x" +
                                    std::to_string(m.input_c));
    }
    const std::size_t n = batch.shape[0];
    const std::size_t l = m.hidden_dim();
    HiddenMatrix h(n, l);
    for (std::size_t i0 = 0; i0 < n; i0 += batch_size) {
        const std::size_t i1 = std::min(n, i0 + batch_size);
        Graph g(false);
        int x = g.input(slice_samples(batch, i0, i1));
        const Tensor& hv = g.value(encoder_hidden_forward(g, m, x));
        for (std::size_t r = 0; r < i1 - i0; ++r)
            for (std::size_t c = 0; c < l; ++c) h(static_cast<Eigen::Index>(i0 + r), static_cast<Eigen::Index>(c)) = hv.at(r, c);
    }
    return h;
}

// Closed-form ridge solution; the branch picks whichever Gram matrix is
// cheaper to factor. Both branches are algebraically identical. The system
// matrix is symmetric positive definite by construction, so a Cholesky
// factorization replaces the textbook inverse.
inline RidgeSolution solve_ridge(const HiddenMatrix& h, const TargetMatrix& t, double C,
                                 std::optional<RidgeBranch> force_branch = std::nullopt) {
    check_arg(C > 0.0, "solve_ridge: C must be positive, got " + std::to_string(C));
    check_arg(h.rows() >= 1 && h.cols() >= 1, "solve_ridge: empty H");
    check_arg(h.rows() == t.rows(), "solve_ridge: H and T row counts differ");
    check_arg(h.allFinite(), "solve_ridge: H contains non-finite entries");
    check_arg(t.allFinite(), "solve_ridge: T contains non-finite entries");

    const Eigen::Index n = h.rows(), l = h.cols();
    RidgeSolution sol;
    sol.C = C;
    sol.branch_used = force_branch.value_or(n <= l ? RidgeBranch::NLeqL : RidgeBranch::NGtL);

    if (sol.branch_used == RidgeBranch::NLeqL) {
        Eigen::MatrixXd gram = h * h.transpose();
        gram.diagonal().array() += 1.0 / C;
        Eigen::LLT<Eigen::MatrixXd> llt(gram);
        if (llt.info() != Eigen::Success) throw NumericError("solve_ridge: Cholesky failed (N<=L branch)");
        sol.beta = h.transpose() * llt.solve(t);
    } else {
        Eigen::MatrixXd gram = h.transpose() * h;
        gram.diagonal().array() += 1.0 / C;
        Eigen::LLT<Eigen::MatrixXd> llt(gram);
        if (llt.info() != Eigen::Success) throw NumericError("solve_ridge: Cholesky failed (N>L branch)");
        sol.beta = llt.solve(h.transpose() * t);
    }
    if (!sol.beta.allFinite()) throw NumericError("solve_ridge: non-finite solution");
    return sol;
}

// Wall-clock split of one CELM training run.
struct CelmTiming {
    double forward_train_s = 0.0;
    double forward_val_s = 0.0;
    double solve_s = 0.0;

    // Three non-negative fractions summing to one.
    struct Fractions {
        double forward_train = 0.0;
        double forward_val = 0.0;
        double solve = 0.0;
    };
    Fractions fractions() const {
        const double total = forward_train_s + forward_val_s + solve_s;
        check_arg(total > 0.0, "timing profile: no instrumented run recorded");
        return {forward_train_s / total, forward_val_s / total, solve_s / total};
    }
};

struct CandidateC {
    double C = 0.0;
    double mean_err = 0.0;  // mean validation CoB error in pixels
    double std_err = 0.0;
};

struct CSelection {
    RidgeSolution best;
    double c_best = 0.0;
    std::vector<CandidateC> per_c;
    CelmTiming timing;
};

// The published regularization grid: 10^-3 .. 10^3.
inline std::vector<double> default_c_grid() {
    return {1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3};
}

namespace detail {
inline void mean_std(const std::vector<double>& v, double& mean, double& sd) {
    mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double acc = 0.0;
    for (double x : v) acc += (x - mean) * (x - mean);
    sd = v.size() > 1 ? std::sqrt(acc / static_cast<double>(v.size())) : 0.0;
}
}  // namespace detail

// Builds H for the training and validation sets exactly once each, solves the
// ridge problem for every C and returns the solution minimizing the mean
// validation CoB error. Ties break toward the smaller C.
inline CSelection select_regularization(const CelmModel& m, const RegressionData& train,
                                        const RegressionData& val, std::vector<double> c_grid,
                                        std::size_t batch_size = 64) {
    check_data(train.images.shape[0] >= 1, "select_regularization: empty training set");
    check_data(val.images.shape[0] >= 1, "select_regularization: empty validation set");
    check_arg(!c_grid.empty(), "select_regularization: empty C grid");
    std::sort(c_grid.begin(), c_grid.end());

    using Clock = std::chrono::steady_clock;
    CSelection sel;

    auto t0 = Clock::now();
    HiddenMatrix h_train = compute_hidden(m, train.images, batch_size);
    auto t1 = Clock::now();
    HiddenMatrix h_val = compute_hidden(m, val.images, batch_size);
    auto t2 = Clock::now();
    sel.timing.forward_train_s = std::chrono::duration<double>(t1 - t0).count();
    sel.timing.forward_val_s = std::chrono::duration<double>(t2 - t1).count();

    const std::size_t nv = static_cast<std::size_t>(val.images.shape[0]);
    std::vector<double> errs(nv);
    double best_err = 0.0;
    for (double c : c_grid) {
        auto s0 = Clock::now();
        RidgeSolution sol = solve_ridge(h_train, train.targets, c);
        sel.timing.solve_s += std::chrono::duration<double>(Clock::now() - s0).count();

        Eigen::MatrixXd pred = h_val * sol.beta;
        for (std::size_t i = 0; i < nv; ++i) {
            const double du = (pred(static_cast<Eigen::Index>(i), 0) - val.targets(static_cast<Eigen::Index>(i), 0)) * val.scale_u;
            const double dv = (pred(static_cast<Eigen::Index>(i), 1) - val.targets(static_cast<Eigen::Index>(i), 1)) * val.scale_v;
            errs[i] = std::sqrt(du * du + dv * dv);
        }
        CandidateC cand;
        cand.C = c;
        detail::mean_std(errs, cand.mean_err, cand.std_err);
        sel.per_c.push_back(cand);
        if (sel.per_c.size() == 1 || cand.mean_err < best_err) {
            sel.best = std::move(sol);
            sel.c_best = c;
            best_err = cand.mean_err;
        }
    }
    return sel;
}

}  // namespace bseg
