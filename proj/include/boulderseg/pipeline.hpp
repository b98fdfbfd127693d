#pragma once

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "boulderseg/checkpoint.hpp"
#include "boulderseg/common.hpp"
#include "boulderseg/datagen.hpp"
#include "boulderseg/dataset_io.hpp"
#include "boulderseg/metrics.hpp"
#include "boulderseg/sweep.hpp"
#include "boulderseg/trainer.hpp"
#include "boulderseg/unet.hpp"

namespace bseg {

// Orchestrates the 4-step training procedure:
//   step 1  exhaustive CELM sweep of the encoder grid on the single-boulder
//           set, selecting the best (architecture, C) by validation CoB error
//   step 2  mini-batch gradient-descent fine-tuning of that encoder (CNN)
//   step 3  UNet training on the single-boulder set around the frozen encoder
//   step 4  UNet refinement on the multi-boulder set, warm-started from step 3
// Steps are resumable at step granularity: completed outputs are reused
// unless force is set.

struct StepTrainConfig {
    std::size_t batch_size = 16;
    double learning_rate = 1e-3;
    double dropout = 0.2;
    std::size_t epochs = 50;
};

struct DatagenConfig {
    SceneConfig scene;
    std::size_t n_samples = 400;
    std::size_t crop_to = 0;  // 0 = keep the render size
    NoiseConfig noise;
    SplitSpec split;
};

struct PipelineConfig {
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    std::string out_dir = "out";

    DatagenConfig single;
    DatagenConfig multi;

    GridConfig grid;
    std::vector<double> c_grid = default_c_grid();

    TuneConfig tune;
    bool step2_use_tuned = false;  // otherwise the explicit step2 config below
    StepTrainConfig step2;

    std::vector<std::size_t> decoder_depths = {48, 24, 12};
    StepTrainConfig step3;
    StepTrainConfig step4;
    bool warm_start = true;

    // Desk-scale defaults: the full pipeline runs on a laptop CPU in well
    // under an hour.
    static PipelineConfig desk_default() {
        PipelineConfig c;
        c.seed = 2024;
        c.jobs = 2;

        c.single.scene.mode = SceneMode::SingleBoulder;
        c.single.scene.image_size = 96;
        c.single.n_samples = 640;
        c.single.crop_to = 64;
        c.single.noise.gaussian_sigma = 0.01;
        c.single.split = {0.64, 0.12, 0.12, 0.12};

        c.multi.scene.mode = SceneMode::MultiBoulder;
        c.multi.scene.image_size = 64;
        c.multi.n_samples = 400;
        c.multi.crop_to = 0;
        c.multi.noise.gaussian_sigma = 0.01;
        c.multi.split = {0.64, 0.12, 0.12, 0.12};

        c.grid.pooling = {Pooling::Max, Pooling::Mean};
        c.grid.depth_cells = {{4, {3, 4}}, {8, {4}}};
        c.grid.activations = {ActKind::ELU, ActKind::ReLU};
        c.grid.inits = {InitScheme::Orthogonal, InitScheme::Uniform};
        c.grid.n_runs = 2;
        c.grid.fc_neurons = 128;

        c.tune.batch_sizes = {16, 32};
        c.tune.learning_rates = {0.03, 0.01};
        c.tune.repeats = 1;
        c.tune.short_epochs = 6;
        c.step2 = {16, 0.03, 0.2, 60};

        c.decoder_depths = {48, 24, 12};
        c.step3 = {8, 0.08, 0.2, 36};
        c.step4 = {8, 0.08, 0.2, 28};
        return c;
    }
};

// ---------------------------------------------------------------------------
// Config JSON (schema documented in the README)
// ---------------------------------------------------------------------------

namespace cfgjson {

inline nlohmann::json scene_to_json(const SceneConfig& s) {
    return {{"mode", s.mode == SceneMode::SingleBoulder ? "single_boulder" : "multi_boulder"},
            {"image_size", s.image_size},
            {"n_boulder_archetypes", s.n_boulder_archetypes},
            {"min_boulders", s.min_boulders},
            {"max_boulders", s.max_boulders},
            {"drop_limb_labels", s.drop_limb_labels},
            {"vary_light", s.vary_light},
            {"light_direction", s.light_direction},
            {"light_obliquity_deg", {s.light_obliquity_lo_deg, s.light_obliquity_hi_deg}},
            {"surface_albedo", {s.surface_albedo_lo, s.surface_albedo_hi}},
            {"boulder_albedo", {s.boulder_albedo_lo, s.boulder_albedo_hi}},
            {"terrain_relief", s.terrain_relief},
            {"terrain_roughness", s.terrain_roughness},
            {"boulder_radius", {s.boulder_radius_lo, s.boulder_radius_hi}},
            {"multi_radius", {s.multi_radius_lo, s.multi_radius_hi}},
            {"ambient", s.ambient}};
}

inline void scene_from_json(const nlohmann::json& j, SceneConfig& s) {
    if (j.contains("mode")) {
        s.mode = j.at("mode").get<std::string>() == "multi_boulder" ? SceneMode::MultiBoulder
                                                                    : SceneMode::SingleBoulder;
    }
    s.image_size = j.value("image_size", s.image_size);
    s.n_boulder_archetypes = j.value("n_boulder_archetypes", s.n_boulder_archetypes);
    s.min_boulders = j.value("min_boulders", s.min_boulders);
    s.max_boulders = j.value("max_boulders", s.max_boulders);
    s.drop_limb_labels = j.value("drop_limb_labels", s.drop_limb_labels);
    s.vary_light = j.value("vary_light", s.vary_light);
    if (j.contains("light_direction")) s.light_direction = j.at("light_direction").get<std::array<double, 3>>();
    if (j.contains("light_obliquity_deg")) {
        s.light_obliquity_lo_deg = j.at("light_obliquity_deg")[0].get<double>();
        s.light_obliquity_hi_deg = j.at("light_obliquity_deg")[1].get<double>();
    }
    auto range = [&](const char* key, double& lo, double& hi) {
        if (j.contains(key)) {
            lo = j.at(key)[0].get<double>();
            hi = j.at(key)[1].get<double>();
        }
    };
    range("surface_albedo", s.surface_albedo_lo, s.surface_albedo_hi);
    range("boulder_albedo", s.boulder_albedo_lo, s.boulder_albedo_hi);
    range("boulder_radius", s.boulder_radius_lo, s.boulder_radius_hi);
    range("multi_radius", s.multi_radius_lo, s.multi_radius_hi);
    s.terrain_relief = j.value("terrain_relief", s.terrain_relief);
    s.terrain_roughness = j.value("terrain_roughness", s.terrain_roughness);
    s.ambient = j.value("ambient", s.ambient);
}

inline nlohmann::json datagen_to_json(const DatagenConfig& d) {
    return {{"scene", scene_to_json(d.scene)},
            {"n_samples", d.n_samples},
            {"crop_to", d.crop_to},
            {"noise", {{"gaussian_sigma", d.noise.gaussian_sigma}, {"blur3x3", d.noise.blur3x3}}},
            {"split", {{"tr", d.split.tr}, {"v", d.split.v}, {"te1", d.split.te1}, {"te2", d.split.te2}}}};
}

inline void datagen_from_json(const nlohmann::json& j, DatagenConfig& d) {
    if (j.contains("scene")) scene_from_json(j.at("scene"), d.scene);
    d.n_samples = j.value("n_samples", d.n_samples);
    d.crop_to = j.value("crop_to", d.crop_to);
    if (j.contains("noise")) {
        d.noise.gaussian_sigma = j.at("noise").value("gaussian_sigma", d.noise.gaussian_sigma);
        d.noise.blur3x3 = j.at("noise").value("blur3x3", d.noise.blur3x3);
    }
    if (j.contains("split")) {
        const auto& sp = j.at("split");
        d.split.tr = sp.value("tr", d.split.tr);
        d.split.v = sp.value("v", d.split.v);
        d.split.te1 = sp.value("te1", d.split.te1);
        d.split.te2 = sp.value("te2", d.split.te2);
    }
}

inline nlohmann::json grid_to_json(const GridConfig& g) {
    nlohmann::json pooling = nlohmann::json::array();
    for (Pooling p : g.pooling) pooling.push_back(to_string(p));
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& [d0, ns] : g.depth_cells) cells.push_back({{"d0", d0}, {"n", ns}});
    nlohmann::json acts = nlohmann::json::array();
    for (ActKind a : g.activations) acts.push_back(to_string(a));
    nlohmann::json inits = nlohmann::json::array();
    for (InitScheme s : g.inits) inits.push_back(to_string(s));
    return {{"pooling", pooling},    {"depth_cells", cells},      {"activations", acts},
            {"inits", inits},        {"n_runs", g.n_runs},        {"fc_neurons", g.fc_neurons}};
}

inline void grid_from_json(const nlohmann::json& j, GridConfig& g) {
    if (j.contains("pooling")) {
        g.pooling.clear();
        for (const auto& p : j.at("pooling")) g.pooling.push_back(pooling_from_string(p.get<std::string>()));
    }
    if (j.contains("depth_cells")) {
        g.depth_cells.clear();
        for (const auto& c : j.at("depth_cells")) {
            g.depth_cells.emplace_back(c.at("d0").get<int>(), c.at("n").get<std::vector<int>>());
        }
    }
    if (j.contains("activations")) {
        g.activations.clear();
        for (const auto& a : j.at("activations")) g.activations.push_back(act_from_string(a.get<std::string>()));
    }
    if (j.contains("inits")) {
        g.inits.clear();
        for (const auto& s : j.at("inits")) g.inits.push_back(init_from_string(s.get<std::string>()));
    }
    g.n_runs = j.value("n_runs", g.n_runs);
    g.fc_neurons = j.value("fc_neurons", g.fc_neurons);
}

inline nlohmann::json step_to_json(const StepTrainConfig& s) {
    return {{"batch_size", s.batch_size}, {"learning_rate", s.learning_rate}, {"dropout", s.dropout},
            {"epochs", s.epochs}};
}

inline void step_from_json(const nlohmann::json& j, StepTrainConfig& s) {
    s.batch_size = j.value("batch_size", s.batch_size);
    s.learning_rate = j.value("learning_rate", s.learning_rate);
    s.dropout = j.value("dropout", s.dropout);
    s.epochs = j.value("epochs", s.epochs);
}

}  // namespace cfgjson

inline nlohmann::json to_json(const PipelineConfig& c) {
    nlohmann::json j;
    j["seed"] = c.seed;
    j["jobs"] = c.jobs;
    j["out_dir"] = c.out_dir;
    j["datagen"] = {{"single", cfgjson::datagen_to_json(c.single)}, {"multi", cfgjson::datagen_to_json(c.multi)}};
    j["sweep"] = {{"grid", cfgjson::grid_to_json(c.grid)}, {"c_grid", c.c_grid}};
    j["step2"] = {{"tune",
                   {{"batch_sizes", c.tune.batch_sizes},
                    {"learning_rates", c.tune.learning_rates},
                    {"repeats", c.tune.repeats},
                    {"short_epochs", c.tune.short_epochs}}},
                  {"use_tuned", c.step2_use_tuned},
                  {"final", cfgjson::step_to_json(c.step2)}};
    j["step3"] = {{"decoder_depths", c.decoder_depths}, {"train", cfgjson::step_to_json(c.step3)}};
    j["step4"] = {{"train", cfgjson::step_to_json(c.step4)}, {"warm_start", c.warm_start}};
    return j;
}

inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
    PipelineConfig c = PipelineConfig::desk_default();
    try {
        c.seed = j.value("seed", c.seed);
        c.jobs = j.value("jobs", c.jobs);
        c.out_dir = j.value("out_dir", c.out_dir);
        if (j.contains("datagen")) {
            if (j.at("datagen").contains("single")) cfgjson::datagen_from_json(j.at("datagen").at("single"), c.single);
            if (j.at("datagen").contains("multi")) cfgjson::datagen_from_json(j.at("datagen").at("multi"), c.multi);
        }
        if (j.contains("sweep")) {
            if (j.at("sweep").contains("grid")) cfgjson::grid_from_json(j.at("sweep").at("grid"), c.grid);
            if (j.at("sweep").contains("c_grid")) c.c_grid = j.at("sweep").at("c_grid").get<std::vector<double>>();
        }
        if (j.contains("step2")) {
            const auto& s2 = j.at("step2");
            if (s2.contains("tune")) {
                const auto& t = s2.at("tune");
                if (t.contains("batch_sizes")) c.tune.batch_sizes = t.at("batch_sizes").get<std::vector<std::size_t>>();
                if (t.contains("learning_rates"))
                    c.tune.learning_rates = t.at("learning_rates").get<std::vector<double>>();
                c.tune.repeats = t.value("repeats", c.tune.repeats);
                c.tune.short_epochs = t.value("short_epochs", c.tune.short_epochs);
            }
            c.step2_use_tuned = s2.value("use_tuned", c.step2_use_tuned);
            if (s2.contains("final")) cfgjson::step_from_json(s2.at("final"), c.step2);
        }
        if (j.contains("step3")) {
            if (j.at("step3").contains("decoder_depths"))
                c.decoder_depths = j.at("step3").at("decoder_depths").get<std::vector<std::size_t>>();
            if (j.at("step3").contains("train")) cfgjson::step_from_json(j.at("step3").at("train"), c.step3);
        }
        if (j.contains("step4")) {
            if (j.at("step4").contains("train")) cfgjson::step_from_json(j.at("step4").at("train"), c.step4);
            c.warm_start = j.at("step4").value("warm_start", c.warm_start);
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("invalid pipeline config: ") + e.what());
    }
    return c;
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
    std::ifstream is(path);
    check_data(is.good(), "missing config file: " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(path + ": config parse error: " + e.what());
    }
    return pipeline_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Step implementations
// ---------------------------------------------------------------------------

namespace detail {

inline bool exists(const std::string& path) { return std::filesystem::exists(path); }

inline std::string join(const std::string& a, const std::string& b) {
    return (std::filesystem::path(a) / b).string();
}

// The per-spec training seed used by the sweep; step 2 must rebuild the
// winning encoder bit-identically.
inline std::uint64_t sweep_spec_seed(std::uint64_t root, const ArchSpec& spec) {
    return Rng::stream(root, spec.id()).next_u64();
}

}  // namespace detail

// Generates (or reloads) one dataset directory.
inline Dataset ensure_dataset(const DatagenConfig& dcfg, std::uint64_t seed, std::size_t jobs,
                              const std::string& dir, bool force) {
    if (!force && detail::exists(detail::join(dir, "manifest.json"))) {
        return read_dataset(dir);
    }
    SceneConfig scene = dcfg.scene;
    scene.seed = Rng::stream(seed, "datagen-root").next_u64();
    Dataset ds = generate(scene, dcfg.n_samples, jobs);
    if (dcfg.crop_to != 0 || dcfg.noise.gaussian_sigma > 0.0 || dcfg.noise.blur3x3) {
        const std::size_t crop = dcfg.crop_to == 0 ? scene.image_size : dcfg.crop_to;
        postprocess_dataset(ds, crop, dcfg.noise, Rng::stream(seed, "postprocess-root").next_u64());
    }
    ds.splits = split_dataset(ds, dcfg.split, Rng::stream(seed, "split-root").next_u64());
    write_dataset(ds, dir);
    return ds;
}

struct Step1Result {
    ArchSpec best_spec;
    double best_c = 1.0;
    double best_val_err = 0.0;
    SweepReport report;
};

// Step 1: CELM sweep over the grid; persists the report, the parallel-plot
// CSV and the winning (spec, C).
inline Step1Result run_step1(const PipelineConfig& cfg, const Dataset& ds1, bool force = false) {
    namespace fs = std::filesystem;
    const std::string dir = detail::join(cfg.out_dir, "step1");
    fs::create_directories(dir);
    const std::string best_path = detail::join(dir, "best.json");

    const std::vector<ArchSpec> grid = enumerate_grid(cfg.grid);
    check_data(!ds1.splits.tr.empty() && !ds1.splits.v.empty(), "step1: dataset has no train/val split");
    RegressionData train = to_regression_data(ds1, ds1.splits.tr);
    RegressionData val = to_regression_data(ds1, ds1.splits.v);

    if (force) {
        std::error_code ec;
        fs::remove(detail::join(dir, "sweep_checkpoint.jsonl"), ec);
    }
    SweepReport report = run_sweep(grid, train, val, cfg.c_grid, cfg.seed, cfg.jobs,
                                   detail::join(dir, "sweep_checkpoint.jsonl"));
    write_report_csv(report, detail::join(dir, "report.csv"));
    export_parallel_plot(report, detail::join(dir, "parallel_plot.csv"));

    const SweepRow& best = report.rows[report.best_row()];
    Step1Result res{best.spec, best.C, best.val_err_mean, std::move(report)};

    nlohmann::json j;
    j["spec"] = spec_to_json(res.best_spec);
    j["C"] = res.best_c;
    j["val_err_mean"] = res.best_val_err;
    std::ofstream os(best_path);
    os << j.dump(1) << '\n';
    check_data(os.good(), "write failed: " + best_path);
    return res;
}

inline Step1Result load_step1(const PipelineConfig& cfg) {
    const std::string best_path = detail::join(detail::join(cfg.out_dir, "step1"), "best.json");
    std::ifstream is(best_path);
    check_data(is.good(), "step1 output not found (run step 1 first): " + best_path);
    nlohmann::json j;
    is >> j;
    Step1Result res;
    res.best_spec = spec_from_json(j.at("spec"));
    res.best_c = j.at("C").get<double>();
    res.best_val_err = j.value("val_err_mean", 0.0);
    return res;
}

struct Step2Result {
    CelmModel celm;  // frozen encoder + solved beta
    CelmModel cnn;   // fine-tuned encoder + trained head
    TrainingHistory history;
    std::vector<TuneResult> tune;
};

// Per-dataset mean/std of the CoB error for a model.
inline EvalRecord eval_cob(const CelmModel& m, const RegressionData& data) {
    Tensor pred = predict_cob_normalized(m, data.images);
    std::vector<double> errs(pred.shape[0]);
    for (std::size_t i = 0; i < pred.shape[0]; ++i) {
        const double du = (pred.at(i, 0) - data.targets(static_cast<Eigen::Index>(i), 0)) * data.scale_u;
        const double dv = (pred.at(i, 1) - data.targets(static_cast<Eigen::Index>(i), 1)) * data.scale_v;
        errs[i] = std::sqrt(du * du + dv * dv);
    }
    return EvalRecord::from("cob_error", std::move(errs));
}

// Step 2: solve the winning CELM once more at the selected C (beta from the
// training set), then fine-tune a fully trainable copy with a fresh head by
// mini-batch gradient descent. Writes both encoder checkpoints, the (batch,
// lr) tuning ranking, the training history, the CELM-vs-CNN comparison and
// the output-layer weight histograms.
inline Step2Result run_step2(const PipelineConfig& cfg, const Dataset& ds1, const Step1Result& step1,
                             bool force = false) {
    namespace fs = std::filesystem;
    const std::string dir = detail::join(cfg.out_dir, "step2");
    fs::create_directories(dir);

    RegressionData train = to_regression_data(ds1, ds1.splits.tr);
    RegressionData val = to_regression_data(ds1, ds1.splits.v);

    Step2Result res;
    const std::uint64_t enc_seed = detail::sweep_spec_seed(cfg.seed, step1.best_spec);
    const std::size_t h = train.images.shape[1], w = train.images.shape[2], ch = train.images.shape[3];

    const std::string celm_path = detail::join(dir, "celm_encoder.ckpt");
    if (!force && detail::exists(celm_path)) {
        res.celm = load_celm_checkpoint(celm_path);
    } else {
        res.celm = build_encoder(step1.best_spec, enc_seed, h, w, ch);
        HiddenMatrix ht = compute_hidden(res.celm, train.images);
        RidgeSolution sol = solve_ridge(ht, train.targets, step1.best_c);
        Tensor beta = Tensor::zeros({static_cast<std::size_t>(sol.beta.rows()), static_cast<std::size_t>(sol.beta.cols())});
        for (Eigen::Index i = 0; i < sol.beta.rows(); ++i)
            for (Eigen::Index j = 0; j < sol.beta.cols(); ++j)
                beta.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = sol.beta(i, j);
        res.celm.params.add("out.beta", std::move(beta), /*frozen=*/true);
        save_celm_checkpoint(celm_path, res.celm);
    }

    const std::string cnn_path = detail::join(dir, "cnn_encoder.ckpt");
    auto fresh_cnn = [&](std::uint64_t head_seed) {
        CelmModel cnn = build_encoder(step1.best_spec, enc_seed, h, w, ch);
        cnn.params.set_all_frozen(false);  // the whole encoder trains in step 2
        add_regression_head(cnn, head_seed);
        return cnn;
    };

    if (!force && detail::exists(cnn_path)) {
        res.cnn = load_celm_checkpoint(cnn_path);
    } else {
        // short-epoch (batch, lr) grid, each instance re-initialized
        res.tune = grid_tune(cfg.tune, /*maximize=*/false,
                             [&](std::size_t batch, double lr, int repeat, std::size_t epochs) {
                                 CelmModel probe = fresh_cnn(Rng::stream(cfg.seed, "tune-head",
                                                                         static_cast<std::uint64_t>(repeat)).next_u64());
                                 TrainProblem prob = make_cob_problem(probe, train, val);
                                 TrainConfig tc;
                                 tc.batch_size = batch;
                                 tc.learning_rate = lr;
                                 tc.epochs = epochs;
                                 tc.dropout_rate = cfg.step2.dropout;
                                 tc.seed = Rng::stream(cfg.seed, "tune", static_cast<std::uint64_t>(repeat)).next_u64();
                                 tc.jobs = cfg.jobs;
                                 return train_loop(prob, tc);
                             });
        {
            std::ofstream os(detail::join(dir, "tune.csv"));
            os << "rank,batch_size,learning_rate,repeat,best_val_cob_error\n";
            os.precision(17);
            for (std::size_t i = 0; i < res.tune.size(); ++i) {
                const auto& t = res.tune[i];
                os << i << ',' << t.batch_size << ',' << t.learning_rate << ',' << t.repeat << ',' << t.best_val
                   << '\n';
            }
        }

        res.cnn = fresh_cnn(Rng::stream(cfg.seed, "final-head").next_u64());
        TrainProblem prob = make_cob_problem(res.cnn, train, val);
        TrainConfig tc;
        if (cfg.step2_use_tuned && !res.tune.empty()) {
            tc.batch_size = res.tune.front().batch_size;
            tc.learning_rate = res.tune.front().learning_rate;
        } else {
            tc.batch_size = cfg.step2.batch_size;
            tc.learning_rate = cfg.step2.learning_rate;
        }
        tc.epochs = cfg.step2.epochs;
        tc.dropout_rate = cfg.step2.dropout;
        tc.seed = Rng::stream(cfg.seed, "step2").next_u64();
        tc.jobs = cfg.jobs;
        res.history = train_loop(prob, tc);
        write_history_csv(res.history, detail::join(dir, "history.csv"));
        save_celm_checkpoint(cnn_path, res.cnn);
    }

    // CELM vs CNN comparison on the test splits
    {
        std::ofstream os(detail::join(dir, "comparison.csv"));
        check_data(os.good(), "cannot open for writing: " + detail::join(dir, "comparison.csv"));
        os << "encoder,split,mu_cob_error_px,sigma_cob_error_px\n";
        os.precision(17);
        for (const auto& [name, model] : {std::pair<const char*, const CelmModel*>{"celm", &res.celm},
                                          std::pair<const char*, const CelmModel*>{"cnn", &res.cnn}}) {
            for (const auto& [split, idx] : {std::pair<const char*, const std::vector<std::size_t>*>{"te1", &ds1.splits.te1},
                                             std::pair<const char*, const std::vector<std::size_t>*>{"te2", &ds1.splits.te2}}) {
                if (idx->empty()) continue;
                EvalRecord rec = eval_cob(*model, to_regression_data(ds1, *idx));
                os << name << ',' << split << ',' << rec.mean << ',' << rec.stddev << '\n';
            }
        }
    }

    // output-layer weight distributions (and the CNN head bias)
    for (int col = 0; col < 2; ++col) {
        const char axis = col == 0 ? 'u' : 'v';
        write_histogram_csv(weight_histogram(res.celm.params, "out.beta", 40, col),
                            detail::join(dir, std::string("hist_beta_") + axis + ".csv"));
        write_histogram_csv(weight_histogram(res.cnn.params, "out.weight", 40, col),
                            detail::join(dir, std::string("hist_w_") + axis + ".csv"));
    }
    return res;
}

// Segmentation evaluation CSVs for one split.
inline void write_segmentation_eval(const SegmentationEval& ev, const std::string& dir, const std::string& split) {
    write_eval_csv(ev.wscce, detail::join(dir, "eval_" + split + "_wscce.csv"));
    write_eval_csv(ev.accuracy, detail::join(dir, "eval_" + split + "_accuracy.csv"));
    write_eval_csv(ev.miou, detail::join(dir, "eval_" + split + "_miou.csv"));
    write_eval_csv(ev.boulder_iou, detail::join(dir, "eval_" + split + "_boulder_iou.csv"));
}

inline void append_summary(std::ofstream& os, const std::string& split, const SegmentationEval& ev) {
    os << split << ",wscce," << ev.wscce.mean << ',' << ev.wscce.stddev << '\n';
    os << split << ",accuracy," << ev.accuracy.mean << ',' << ev.accuracy.stddev << '\n';
    os << split << ",miou," << ev.miou.mean << ',' << ev.miou.stddev << '\n';
    os << split << ",boulder_iou," << ev.boulder_iou.mean << ',' << ev.boulder_iou.stddev << '\n';
}

struct StepSegResult {
    UNetModel unet;
    TrainingHistory history;
};

// Steps 3 and 4 share this runner; step is 3 or 4.
inline StepSegResult run_seg_step(const PipelineConfig& cfg, int step, const Dataset& ds, bool warm,
                                  bool force = false) {
    namespace fs = std::filesystem;
    const std::string dir = detail::join(cfg.out_dir, "step" + std::to_string(step));
    fs::create_directories(dir);
    const std::string ckpt_path = detail::join(dir, "unet.ckpt");
    const StepTrainConfig& scfg = step == 3 ? cfg.step3 : cfg.step4;

    StepSegResult res;
    // encoder comes from the step-2 CNN, frozen inside the UNet
    CelmModel encoder = load_celm_checkpoint(detail::join(detail::join(cfg.out_dir, "step2"), "cnn_encoder.ckpt"));
    check_data(encoder.input_h == ds.height() && encoder.input_w == ds.width(),
               "step" + std::to_string(step) + ": dataset size " + std::to_string(ds.height()) +
                   " does not match encoder input " + std::to_string(encoder.input_h));

    if (!force && detail::exists(ckpt_path)) {
        res.unet = load_unet_checkpoint(ckpt_path);
    } else {
        std::vector<std::size_t> depths = cfg.decoder_depths;
        while (depths.size() > static_cast<std::size_t>(encoder.spec.n_cells)) depths.erase(depths.begin());
        res.unet = build_unet(encoder, depths, Rng::stream(cfg.seed, "unet", static_cast<std::uint64_t>(step)).next_u64(),
                              encoder.spec.activation);
        const ParamStore* warm_params = nullptr;
        UNetModel prev;
        if (warm) {
            prev = load_unet_checkpoint(detail::join(detail::join(cfg.out_dir, "step3"), "unet.ckpt"));
            warm_params = &prev.params;
        }
        TrainConfig tc;
        tc.batch_size = scfg.batch_size;
        tc.learning_rate = scfg.learning_rate;
        tc.dropout_rate = scfg.dropout;
        tc.epochs = scfg.epochs;
        tc.seed = Rng::stream(cfg.seed, "step", static_cast<std::uint64_t>(step)).next_u64();
        tc.jobs = cfg.jobs;
        StepResult sr = step == 3 ? train_step3(res.unet, ds, ds.splits.tr, ds.splits.v, tc)
                                  : train_step4(res.unet, ds, ds.splits.tr, ds.splits.v, tc, warm_params);
        res.history = std::move(sr.history);
        write_history_csv(res.history, detail::join(dir, "history.csv"));
        save_unet_checkpoint(ckpt_path, res.unet);
    }

    // evaluation tables per test split
    std::vector<const Tensor*> mask_ptrs;
    for (std::size_t i : ds.splits.tr) mask_ptrs.push_back(&ds.samples[i].mask_shadowed);
    ClassWeights weights = compute_class_weights(mask_ptrs);
    std::ofstream summary(detail::join(dir, "summary.csv"));
    check_data(summary.good(), "cannot open for writing: " + detail::join(dir, "summary.csv"));
    summary << "split,metric,mean,stddev\n";
    summary.precision(17);
    for (const auto& [split, idx] : {std::pair<const char*, const std::vector<std::size_t>*>{"te1", &ds.splits.te1},
                                     std::pair<const char*, const std::vector<std::size_t>*>{"te2", &ds.splits.te2}}) {
        if (idx->empty()) continue;
        SegmentationEval ev =
            evaluate_segmentation(res.unet, to_image_batch(ds, *idx), to_mask_batch(ds, *idx), weights);
        write_segmentation_eval(ev, dir, split);
        append_summary(summary, split, ev);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Standalone evaluation (CLI `evaluate`)
// ---------------------------------------------------------------------------

// Evaluates a checkpoint on a dataset directory; writes per-sample CSVs and
// optionally dumps (input, truth, prediction) PGM triplets.
inline void evaluate_checkpoint(const std::string& ckpt_path, const std::string& data_dir,
                                const std::string& split_name, const std::string& out_dir,
                                std::size_t dump_masks) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    Dataset ds = read_dataset(data_dir);
    std::vector<std::size_t> idx;
    if (split_name == "all" || split_name.empty()) {
        for (std::size_t i = 0; i < ds.size(); ++i) idx.push_back(i);
    } else if (split_name == "tr") {
        idx = ds.splits.tr;
    } else if (split_name == "v") {
        idx = ds.splits.v;
    } else if (split_name == "te1") {
        idx = ds.splits.te1;
    } else if (split_name == "te2") {
        idx = ds.splits.te2;
    } else {
        throw DataError("unknown split '" + split_name + "' (use tr, v, te1, te2 or all)");
    }
    check_data(!idx.empty(), "selected split is empty: " + split_name);

    CheckpointData cp = load_checkpoint(ckpt_path);
    if (cp.kind == "celm") {
        CelmModel m = load_celm_checkpoint(ckpt_path);
        EvalRecord rec = eval_cob(m, to_regression_data(ds, idx));
        write_eval_csv(rec, detail::join(out_dir, "eval_cob_error.csv"));
        return;
    }
    check_data(cp.kind == "unet", ckpt_path + ": unsupported checkpoint kind '" + cp.kind + "'");
    UNetModel u = load_unet_checkpoint(ckpt_path);
    Tensor images = to_image_batch(ds, idx);
    Tensor masks = to_mask_batch(ds, idx);
    SegmentationEval ev = evaluate_segmentation(u, images, masks, ClassWeights::uniform(2));
    write_segmentation_eval(ev, out_dir, split_name.empty() ? "all" : split_name);

    if (dump_masks > 0) {
        SegmentationOutput out = predict_mask(u, images);
        const std::size_t h = images.shape[1], w = images.shape[2];
        for (std::size_t k = 0; k < std::min(dump_masks, idx.size()); ++k) {
            Tensor img({h, w}, std::vector<double>(images.data.begin() + static_cast<std::ptrdiff_t>(k * h * w),
                                                   images.data.begin() + static_cast<std::ptrdiff_t>((k + 1) * h * w)));
            Tensor truth({h, w}, std::vector<double>(masks.data.begin() + static_cast<std::ptrdiff_t>(k * h * w),
                                                     masks.data.begin() + static_cast<std::ptrdiff_t>((k + 1) * h * w)));
            Tensor pred({h, w},
                        std::vector<double>(out.predicted_mask.data.begin() + static_cast<std::ptrdiff_t>(k * h * w),
                                            out.predicted_mask.data.begin() + static_cast<std::ptrdiff_t>((k + 1) * h * w)));
            const std::string stem = detail::join(out_dir, "dump_" + std::to_string(k));
            write_pgm(stem + "_input.pgm", img, false);
            write_pgm(stem + "_truth.pgm", truth, true);
            write_pgm(stem + "_pred.pgm", pred, true);
        }
    }
}

// ---------------------------------------------------------------------------
// Full pipeline
// ---------------------------------------------------------------------------

// Runs datagen and steps 1..4 in order, reusing completed outputs unless
// force is set.
inline void run_pipeline(const PipelineConfig& cfg, bool force = false, bool cold_start_step4 = false) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    Dataset ds1 = ensure_dataset(cfg.single, Rng::stream(cfg.seed, "ds1").next_u64(), cfg.jobs,
                                 detail::join(cfg.out_dir, "data/single"), force);
    Dataset ds2 = ensure_dataset(cfg.multi, Rng::stream(cfg.seed, "ds2").next_u64(), cfg.jobs,
                                 detail::join(cfg.out_dir, "data/multi"), force);

    Step1Result s1;
    if (!force && detail::exists(detail::join(detail::join(cfg.out_dir, "step1"), "best.json"))) {
        s1 = load_step1(cfg);
    } else {
        s1 = run_step1(cfg, ds1, force);
    }
    run_step2(cfg, ds1, s1, force);
    run_seg_step(cfg, 3, ds1, /*warm=*/false, force);
    run_seg_step(cfg, 4, ds2, /*warm=*/cfg.warm_start && !cold_start_step4, force);
}

}  // namespace bseg
