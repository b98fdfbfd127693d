#pragma once

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "boulderseg/arch.hpp"
#include "boulderseg/celm.hpp"
#include "boulderseg/checkpoint.hpp"
#include "boulderseg/common.hpp"
#include "boulderseg/model.hpp"

namespace bseg {

// Exhaustive sweep of the encoder design space under the CELM paradigm.
// Every spec is trained independently (its seed is derived from the root
// seed and the spec identity), so reports are identical for any worker
// count. Completed specs are appended to a JSONL checkpoint so an
// interrupted sweep resumes without recomputation.

enum class QualityBand { Excellent = 0, High = 1, Medium = 2, Low = 3 };

inline const char* to_string(QualityBand b) {
    switch (b) {
        case QualityBand::Excellent: return "excellent";
        case QualityBand::High: return "high";
        case QualityBand::Medium: return "medium";
        case QualityBand::Low: return "low";
    }
    return "?";
}

struct SweepRow {
    ArchSpec spec;
    double C = 0.0;
    double val_err_mean = std::nan("");  // mean validation CoB error [px]
    double val_err_std = std::nan("");
    double train_seconds = 0.0;  // whole-spec CELM training wall clock
    double frac_forward_train = 0.0;
    double frac_forward_val = 0.0;
    double frac_solve = 0.0;
    std::size_t param_count = 0;
    bool best_c = false;  // this C won validation for its spec
    bool failed = false;
    std::string error;
    QualityBand band = QualityBand::Low;
};

struct SweepReport {
    std::vector<SweepRow> rows;  // |grid| x |C_grid|, grid-major in enumeration order

    // Index of the best non-failed row (min mean validation error; ties go
    // to the earlier row, i.e. smaller C then enumeration order).
    std::size_t best_row() const {
        std::size_t best = rows.size();
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].failed) continue;
            if (best == rows.size() || rows[i].val_err_mean < rows[best].val_err_mean) best = i;
        }
        check_data(best < rows.size(), "sweep report: no successful rows");
        return best;
    }
};

namespace detail {

struct SpecOutcome {
    std::vector<SweepRow> rows;
    bool failed = false;
    std::string error;
};

inline nlohmann::json outcome_to_json(const std::string& id, const SpecOutcome& oc) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : oc.rows) {
        rows.push_back({{"C", r.C},
                        {"val_err_mean", r.val_err_mean},
                        {"val_err_std", r.val_err_std},
                        {"train_seconds", r.train_seconds},
                        {"frac_forward_train", r.frac_forward_train},
                        {"frac_forward_val", r.frac_forward_val},
                        {"frac_solve", r.frac_solve},
                        {"param_count", r.param_count},
                        {"best_c", r.best_c}});
    }
    return {{"spec", id}, {"failed", oc.failed}, {"error", oc.error}, {"rows", std::move(rows)}};
}

}  // namespace detail

// Trains one spec and emits one row per C.
inline detail::SpecOutcome run_spec(const ArchSpec& spec, const RegressionData& train, const RegressionData& val,
                                    const std::vector<double>& c_grid, std::uint64_t seed) {
    detail::SpecOutcome oc;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        CelmModel model = build_encoder(spec, seed, train.images.shape[1], train.images.shape[2],
                                        train.images.shape[3]);
        CSelection sel = select_regularization(model, train, val, c_grid);
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const auto fr = sel.timing.fractions();
        const std::size_t n_params = count_parameters(model.params).total;
        for (const auto& cand : sel.per_c) {
            SweepRow row;
            row.spec = spec;
            row.C = cand.C;
            row.val_err_mean = cand.mean_err;
            row.val_err_std = cand.std_err;
            row.train_seconds = seconds;
            row.frac_forward_train = fr.forward_train;
            row.frac_forward_val = fr.forward_val;
            row.frac_solve = fr.solve;
            row.param_count = n_params;
            row.best_c = cand.C == sel.c_best;
            oc.rows.push_back(std::move(row));
        }
    } catch (const std::exception& e) {
        oc.failed = true;
        oc.error = e.what();
        oc.rows.clear();
        for (double c : c_grid) {
            SweepRow row;
            row.spec = spec;
            row.C = c;
            row.failed = true;
            row.error = e.what();
            oc.rows.push_back(std::move(row));
        }
    }
    return oc;
}

// Rank-based quartiles over the successful rows: first quarter "excellent",
// then high / medium / low, ties broken by row order.
inline void assign_quality_bands(SweepReport& report) {
    std::vector<std::size_t> ok;
    for (std::size_t i = 0; i < report.rows.size(); ++i) {
        if (!report.rows[i].failed) ok.push_back(i);
    }
    if (ok.empty()) return;
    std::stable_sort(ok.begin(), ok.end(), [&](std::size_t a, std::size_t b) {
        return report.rows[a].val_err_mean < report.rows[b].val_err_mean;
    });
    for (std::size_t rank = 0; rank < ok.size(); ++rank) {
        report.rows[ok[rank]].band = static_cast<QualityBand>(4 * rank / ok.size());
    }
}

// Runs the full grid. checkpoint_path (optional) is an append-only JSONL of
// per-spec results; existing entries are trusted and skipped on resume.
inline SweepReport run_sweep(const std::vector<ArchSpec>& grid, const RegressionData& train,
                             const RegressionData& val, const std::vector<double>& c_grid, std::uint64_t seed,
                             std::size_t jobs = 1, const std::string& checkpoint_path = "") {
    check_arg(!grid.empty(), "run_sweep: empty grid");
    check_arg(!c_grid.empty(), "run_sweep: empty C grid");
    check_data(train.images.shape[0] > 0 && val.images.shape[0] > 0, "run_sweep: empty dataset");

    std::map<std::string, detail::SpecOutcome> done;
    if (!checkpoint_path.empty()) {
        std::ifstream is(checkpoint_path);
        std::string line;
        std::size_t lineno = 0;
        while (is && std::getline(is, line)) {
            ++lineno;
            if (line.empty()) continue;
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
            } catch (const nlohmann::json::parse_error&) {
                continue;  // torn tail line from an interrupted run
            }
            detail::SpecOutcome oc;
            oc.failed = j.value("failed", false);
            oc.error = j.value("error", "");
            for (const auto& r : j.at("rows")) {
                SweepRow row;
                row.C = r.at("C").get<double>();
                row.val_err_mean = r.value("val_err_mean", std::nan(""));
                row.val_err_std = r.value("val_err_std", std::nan(""));
                row.train_seconds = r.value("train_seconds", 0.0);
                row.frac_forward_train = r.value("frac_forward_train", 0.0);
                row.frac_forward_val = r.value("frac_forward_val", 0.0);
                row.frac_solve = r.value("frac_solve", 0.0);
                row.param_count = r.value("param_count", std::size_t{0});
                row.best_c = r.value("best_c", false);
                row.failed = oc.failed;
                row.error = oc.error;
                oc.rows.push_back(std::move(row));
            }
            done[j.at("spec").get<std::string>()] = std::move(oc);
        }
    }

    std::vector<detail::SpecOutcome> outcomes(grid.size());
    std::vector<std::uint8_t> from_checkpoint(grid.size(), 0);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        auto it = done.find(grid[i].id());
        if (it != done.end() && it->second.rows.size() == c_grid.size()) {
            outcomes[i] = it->second;
            for (auto& r : outcomes[i].rows) r.spec = grid[i];
            from_checkpoint[i] = 1;
        }
    }

    std::ofstream ckpt;
    std::mutex ckpt_mutex;
    if (!checkpoint_path.empty()) {
        ckpt.open(checkpoint_path, std::ios::app);
        check_data(ckpt.good(), "cannot open sweep checkpoint for append: " + checkpoint_path);
    }

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= grid.size()) return;
            if (from_checkpoint[i]) continue;
            // per-spec seed from the root seed and the spec identity
            const std::uint64_t spec_seed = Rng::stream(seed, grid[i].id()).next_u64();
            outcomes[i] = run_spec(grid[i], train, val, c_grid, spec_seed);
            if (ckpt.is_open()) {
                const nlohmann::json j = detail::outcome_to_json(grid[i].id(), outcomes[i]);
                std::lock_guard<std::mutex> lock(ckpt_mutex);
                ckpt << j.dump() << '\n';
                ckpt.flush();
            }
        }
    };
    const std::size_t workers = std::max<std::size_t>(1, std::min(jobs, grid.size()));
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    SweepReport report;
    for (const auto& oc : outcomes) {
        for (const auto& r : oc.rows) report.rows.push_back(r);
    }
    assign_quality_bands(report);
    return report;
}

// ---------------------------------------------------------------------------
// Exports
// ---------------------------------------------------------------------------

// Parallel-plot CSV, one row per sweep row. Fixed header:
//   P,d0,n,A,K_d,C,run_index,val_error,quality_band
inline void export_parallel_plot(const SweepReport& report, const std::string& path) {
    std::ofstream os(path);
    check_data(os.good(), "cannot open for writing: " + path);
    os << "P,d0,n,A,K_d,C,run_index,val_error,quality_band\n";
    os.precision(17);
    for (const auto& r : report.rows) {
        os << to_string(r.spec.pooling) << ',' << r.spec.d0 << ',' << r.spec.n_cells << ','
           << to_string(r.spec.activation) << ',' << to_string(r.spec.init) << ',' << r.C << ','
           << r.spec.run_index << ',' << r.val_err_mean << ','
           << (r.failed ? "failed" : to_string(r.band)) << '\n';
    }
    check_data(os.good(), "write failed: " + path);
}

// Full report CSV with timing fractions and parameter counts.
inline void write_report_csv(const SweepReport& report, const std::string& path) {
    std::ofstream os(path);
    check_data(os.good(), "cannot open for writing: " + path);
    os << "P,d0,n,A,K_d,L,run_index,C,val_err_mean,val_err_std,train_seconds,"
          "frac_forward_train,frac_forward_val,frac_solve,param_count,best_c,quality_band,failed\n";
    os.precision(17);
    for (const auto& r : report.rows) {
        os << to_string(r.spec.pooling) << ',' << r.spec.d0 << ',' << r.spec.n_cells << ','
           << to_string(r.spec.activation) << ',' << to_string(r.spec.init) << ',' << r.spec.fc_neurons << ','
           << r.spec.run_index << ',' << r.C << ',' << r.val_err_mean << ',' << r.val_err_std << ','
           << r.train_seconds << ',' << r.frac_forward_train << ',' << r.frac_forward_val << ',' << r.frac_solve
           << ',' << r.param_count << ',' << (r.best_c ? 1 : 0) << ',' << to_string(r.band) << ','
           << (r.failed ? 1 : 0) << '\n';
    }
    check_data(os.good(), "write failed: " + path);
}

}  // namespace bseg
