#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <functional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "boulderseg/celm.hpp"
#include "boulderseg/common.hpp"
#include "boulderseg/graph.hpp"
#include "boulderseg/losses.hpp"
#include "boulderseg/model.hpp"
#include "boulderseg/rng.hpp"

namespace bseg {

// Mini-batch gradient descent over the autodiff graph. Plain SGD: the
// training paradigm under test is the optimizer-free ridge solve versus
// gradient descent, so results stay attributable to that contrast.

struct TrainConfig {
    double learning_rate = 1e-4;
    std::size_t batch_size = 32;
    std::size_t epochs = 1;
    double dropout_rate = 0.0;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    // Gradients accumulate over fixed-size shards in shard order, so results
    // do not depend on the worker count.
    std::size_t shard_size = 8;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_metric = 0.0;
};

struct TrainingHistory {
    std::vector<EpochRecord> records;
    std::size_t best_epoch = 0;  // index into records
    bool maximize_metric = false;
    bool warm_start = false;

    double best_metric() const {
        check_arg(!records.empty(), "history: no epochs recorded");
        return records[best_epoch].val_metric;
    }
};

inline void write_history_csv(const TrainingHistory& h, const std::string& path) {
    std::ofstream os(path);
    check_data(os.good(), "cannot open for writing: " + path);
    os.precision(17);
    os << "epoch,train_loss,val_loss,val_metric\n";
    for (const auto& r : h.records) {
        os << r.epoch << ',' << r.train_loss << ',' << r.val_loss << ',' << r.val_metric << '\n';
    }
    check_data(os.good(), "write failed: " + path);
}

// One trainable problem: a loss builder over training-sample indices and a
// validation pass returning (loss, metric).
struct TrainProblem {
    ParamStore* params = nullptr;
    std::size_t n_train = 0;
    bool maximize_metric = false;
    // Builds the mean loss over the given sample indices; `dropout_rng` is
    // non-null only for training passes.
    std::function<int(Graph&, const std::vector<std::size_t>&, double dropout_rate, Rng* dropout_rng)> forward_loss;
    std::function<std::pair<double, double>()> validate;  // (val_loss, val_metric)
};

namespace detail {

struct ShardResult {
    GradMap grads;
    double loss = 0.0;
    std::size_t count = 0;
};

inline void snapshot_trainable(const ParamStore& ps, std::vector<Tensor>& out) {
    out.clear();
    for (const auto& e : ps.entries()) {
        if (!e.frozen) out.push_back(e.value);
    }
}

inline void restore_trainable(ParamStore& ps, const std::vector<Tensor>& snap) {
    std::size_t i = 0;
    for (auto& e : ps.entries()) {
        if (!e.frozen) e.value = snap[i++];
    }
}

}  // namespace detail

// Seeded shuffled mini-batches, dropout active only in training passes,
// per-epoch validation, best-validation parameters restored at the end.
// Frozen parameters are never written. A non-finite loss aborts with the
// offending epoch and batch named.
inline TrainingHistory train_loop(TrainProblem& prob, const TrainConfig& cfg) {
    check_arg(prob.params != nullptr && prob.forward_loss && prob.validate, "train_loop: incomplete problem");
    check_arg(cfg.learning_rate >= 0.0, "train_loop: negative learning rate");
    check_arg(cfg.batch_size >= 1 && cfg.shard_size >= 1, "train_loop: bad batch/shard size");
    check_arg(cfg.dropout_rate >= 0.0 && cfg.dropout_rate < 1.0, "train_loop: dropout must be in [0,1)");
    check_data(prob.n_train >= 1 || cfg.epochs == 0, "train_loop: empty training set");

    TrainingHistory hist;
    hist.maximize_metric = prob.maximize_metric;

    std::vector<std::size_t> order(prob.n_train);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<Tensor> best_snapshot;
    double best = prob.maximize_metric ? -1e300 : 1e300;

    const std::size_t jobs = std::max<std::size_t>(1, cfg.jobs);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng = Rng::stream(cfg.seed, "shuffle", epoch);
        shuffle_rng.shuffle(order);

        double epoch_loss = 0.0;
        std::size_t seen = 0;
        const std::size_t n_batches = (prob.n_train + cfg.batch_size - 1) / cfg.batch_size;
        for (std::size_t b = 0; b < n_batches; ++b) {
            const std::size_t lo = b * cfg.batch_size;
            const std::size_t hi = std::min(prob.n_train, lo + cfg.batch_size);
            const std::size_t n_in_batch = hi - lo;

            // fixed shards, processed by a small pool, accumulated in order
            const std::size_t n_shards = (n_in_batch + cfg.shard_size - 1) / cfg.shard_size;
            std::vector<detail::ShardResult> results(n_shards);
            std::atomic<std::size_t> next{0};
            auto worker = [&] {
                for (;;) {
                    const std::size_t s = next.fetch_add(1);
                    if (s >= n_shards) return;
                    const std::size_t slo = lo + s * cfg.shard_size;
                    const std::size_t shi = std::min(hi, slo + cfg.shard_size);
                    std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(slo),
                                                 order.begin() + static_cast<std::ptrdiff_t>(shi));
                    Rng drop = Rng::stream(cfg.seed, "dropout", (epoch * n_batches + b) * 4096 + s);
                    Graph g(true);
                    const int loss = prob.forward_loss(g, idx, cfg.dropout_rate, &drop);
                    results[s].loss = g.value(loss).data[0];
                    results[s].count = idx.size();
                    results[s].grads = g.backward(loss);
                }
            };
            if (jobs == 1 || n_shards == 1) {
                worker();
            } else {
                std::vector<std::thread> pool;
                for (std::size_t t = 0; t < std::min(jobs, n_shards); ++t) pool.emplace_back(worker);
                for (auto& t : pool) t.join();
            }

            // batch-mean gradient: shard means weighted by shard size
            GradMap batch_grads;
            double batch_loss = 0.0;
            for (const auto& r : results) {
                if (!std::isfinite(r.loss)) {
                    throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                       std::to_string(b));
                }
                const double w = static_cast<double>(r.count) / static_cast<double>(n_in_batch);
                batch_loss += w * r.loss;
                for (const auto& [name, g] : r.grads) {
                    auto it = batch_grads.find(name);
                    if (it == batch_grads.end()) {
                        Tensor scaled = g;
                        for (double& v : scaled.data) v *= w;
                        batch_grads.emplace(name, std::move(scaled));
                    } else {
                        for (std::size_t i = 0; i < g.size(); ++i) it->second.data[i] += w * g.data[i];
                    }
                }
            }

            for (auto& e : prob.params->entries()) {
                if (e.frozen) continue;
                auto it = batch_grads.find(e.name);
                if (it == batch_grads.end()) continue;
                for (std::size_t i = 0; i < e.value.size(); ++i) {
                    e.value.data[i] -= cfg.learning_rate * it->second.data[i];
                }
            }

            epoch_loss += batch_loss * static_cast<double>(n_in_batch);
            seen += n_in_batch;
        }

        const auto [val_loss, val_metric] = prob.validate();
        if (!std::isfinite(val_loss) || !std::isfinite(val_metric)) {
            throw NumericError("non-finite validation at epoch " + std::to_string(epoch));
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = seen ? epoch_loss / static_cast<double>(seen) : 0.0;
        rec.val_loss = val_loss;
        rec.val_metric = val_metric;
        hist.records.push_back(rec);

        const bool improved = prob.maximize_metric ? val_metric > best : val_metric < best;
        if (improved) {
            best = val_metric;
            hist.best_epoch = hist.records.size() - 1;
            detail::snapshot_trainable(*prob.params, best_snapshot);
        }
    }

    if (!best_snapshot.empty()) detail::restore_trainable(*prob.params, best_snapshot);
    return hist;
}

// ---------------------------------------------------------------------------
// (batch size, learning rate) grid tuning
// ---------------------------------------------------------------------------

struct TuneConfig {
    std::vector<std::size_t> batch_sizes;
    std::vector<double> learning_rates;
    int repeats = 1;
    std::size_t short_epochs = 5;
};

struct TuneResult {
    std::size_t batch_size = 0;
    double learning_rate = 0.0;
    int repeat = 0;
    double best_val = 0.0;
    TrainingHistory history;
};

// Runs every (batch, lr) pair `repeats` times for short_epochs and ranks by
// the best validation metric achieved during training; ties go to the
// smaller learning rate.
inline std::vector<TuneResult> grid_tune(
    const TuneConfig& cfg, bool maximize,
    const std::function<TrainingHistory(std::size_t batch, double lr, int repeat, std::size_t epochs)>& run) {
    check_arg(!cfg.batch_sizes.empty() && !cfg.learning_rates.empty(), "grid_tune: empty grid");
    check_arg(cfg.repeats >= 1, "grid_tune: repeats must be >= 1");
    std::vector<TuneResult> out;
    for (std::size_t b : cfg.batch_sizes) {
        for (double lr : cfg.learning_rates) {
            for (int r = 0; r < cfg.repeats; ++r) {
                TuneResult res;
                res.batch_size = b;
                res.learning_rate = lr;
                res.repeat = r;
                res.history = run(b, lr, r, cfg.short_epochs);
                res.best_val = res.history.best_metric();
                out.push_back(std::move(res));
            }
        }
    }
    std::stable_sort(out.begin(), out.end(), [maximize](const TuneResult& a, const TuneResult& b) {
        if (a.best_val != b.best_val) return maximize ? a.best_val > b.best_val : a.best_val < b.best_val;
        return a.learning_rate < b.learning_rate;
    });
    return out;
}

// ---------------------------------------------------------------------------
// CoB regression problem (encoder fine-tuning)
// ---------------------------------------------------------------------------

// Mean CoB error in pixels of the model's head predictions over a dataset.
inline double mean_cob_error(const CelmModel& m, const RegressionData& data, std::size_t batch_size = 64) {
    const std::size_t n = data.images.shape[0];
    double acc = 0.0;
    for (std::size_t i0 = 0; i0 < n; i0 += batch_size) {
        const std::size_t i1 = std::min(n, i0 + batch_size);
        Graph g(false);
        int x = g.input(slice_samples(data.images, i0, i1));
        const Tensor& p = g.value(encoder_output_forward(g, m, encoder_hidden_forward(g, m, x)));
        for (std::size_t r = 0; r < i1 - i0; ++r) {
            const double du = (p.at(r, 0) - data.targets(static_cast<Eigen::Index>(i0 + r), 0)) * data.scale_u;
            const double dv = (p.at(r, 1) - data.targets(static_cast<Eigen::Index>(i0 + r), 1)) * data.scale_v;
            acc += std::sqrt(du * du + dv * dv);
        }
    }
    return acc / static_cast<double>(n);
}

// Assembles the step-2 training problem: MSE on normalized CoB targets,
// validation metric = mean CoB error in pixels (minimized).
inline TrainProblem make_cob_problem(CelmModel& m, const RegressionData& train, const RegressionData& val) {
    TrainProblem prob;
    prob.params = &m.params;
    prob.n_train = train.images.shape[0];
    prob.maximize_metric = false;
    prob.forward_loss = [&m, &train](Graph& g, const std::vector<std::size_t>& idx, double dropout, Rng* rng) {
        Tensor batch = gather_samples(train.images, idx);
        Tensor target = Tensor::zeros({idx.size(), 2});
        for (std::size_t r = 0; r < idx.size(); ++r) {
            target.at(r, 0) = train.targets(static_cast<Eigen::Index>(idx[r]), 0);
            target.at(r, 1) = train.targets(static_cast<Eigen::Index>(idx[r]), 1);
        }
        int x = g.input(std::move(batch));
        int hidden = encoder_hidden_forward(g, m, x, /*training=*/true, dropout, rng);
        int out = encoder_output_forward(g, m, hidden);
        return g.mse_loss(out, std::move(target));
    };
    prob.validate = [&m, &val]() {
        Tensor pred = predict_cob_normalized(m, val.images);
        Tensor tgt = Tensor::zeros(pred.shape);
        for (std::size_t r = 0; r < tgt.shape[0]; ++r) {
            tgt.at(r, 0) = val.targets(static_cast<Eigen::Index>(r), 0);
            tgt.at(r, 1) = val.targets(static_cast<Eigen::Index>(r), 1);
        }
        const double loss = mse_value(pred, tgt);
        double metric = 0.0;
        for (std::size_t r = 0; r < tgt.shape[0]; ++r) {
            const double du = (pred.at(r, 0) - tgt.at(r, 0)) * val.scale_u;
            const double dv = (pred.at(r, 1) - tgt.at(r, 1)) * val.scale_v;
            metric += std::sqrt(du * du + dv * dv);
        }
        metric /= static_cast<double>(tgt.shape[0]);
        return std::make_pair(loss, metric);
    };
    return prob;
}

}  // namespace bseg
