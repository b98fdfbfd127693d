// Command-line front end for the boulder-segmentation training pipeline.
//
// Subcommands: datagen, sweep, train-encoder, train-unet, evaluate,
// export-plot, pipeline run. Exit codes: 0 success, 1 usage error, 2 data
// error, 3 numeric failure.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "boulderseg/pipeline.hpp"

using namespace bseg;

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out_override;
    std::int64_t seed_override = -1;
    std::int64_t jobs_override = -1;

    PipelineConfig load() const {
        PipelineConfig cfg =
            config_path.empty() ? PipelineConfig::desk_default() : load_pipeline_config(config_path);
        if (!out_override.empty()) cfg.out_dir = out_override;
        if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
        if (jobs_override > 0) cfg.jobs = static_cast<std::size_t>(jobs_override);
        return cfg;
    }
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool config_required = true) {
    auto* c = cmd->add_option("--config", opts.config_path, "pipeline config file (JSON)");
    if (config_required) c->required();
    cmd->add_option("--out", opts.out_override, "output directory (overrides the config)");
    cmd->add_option("--seed", opts.seed_override, "global seed (overrides the config)");
    cmd->add_option("--jobs", opts.jobs_override, "worker threads (overrides the config)");
}

Dataset load_or_make_single(const PipelineConfig& cfg, bool force) {
    return ensure_dataset(cfg.single, Rng::stream(cfg.seed, "ds1").next_u64(), cfg.jobs,
                          (std::filesystem::path(cfg.out_dir) / "data/single").string(), force);
}

Dataset load_or_make_multi(const PipelineConfig& cfg, bool force) {
    return ensure_dataset(cfg.multi, Rng::stream(cfg.seed, "ds2").next_u64(), cfg.jobs,
                          (std::filesystem::path(cfg.out_dir) / "data/multi").string(), force);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CELM-driven boulder segmentation pipeline"};
    app.require_subcommand(1);

    CommonOpts opts;
    bool force = false;
    bool cold_start = false;
    int unet_step = 3;
    std::string ckpt_path, data_dir, split_name = "all", eval_out = "eval";
    std::size_t dump_masks = 0;
    std::string plot_out = "parallel_plot.csv";

    auto* cmd_datagen = app.add_subcommand("datagen", "generate the synthetic datasets");
    add_common(cmd_datagen, opts);
    cmd_datagen->add_flag("--force", force, "regenerate even if present");

    auto* cmd_sweep = app.add_subcommand("sweep", "step 1: CELM sweep of the architecture grid");
    add_common(cmd_sweep, opts);
    cmd_sweep->add_flag("--force", force, "restart, discarding the sweep checkpoint");

    auto* cmd_enc = app.add_subcommand("train-encoder", "step 2: gradient-descent fine-tuning of the best encoder");
    add_common(cmd_enc, opts);
    cmd_enc->add_flag("--force", force, "retrain even if checkpoints exist");

    auto* cmd_unet = app.add_subcommand("train-unet", "steps 3/4: UNet segmentation training");
    add_common(cmd_unet, opts);
    cmd_unet->add_option("--step", unet_step, "which step to run (3 or 4)")->check(CLI::IsMember({3, 4}));
    cmd_unet->add_flag("--cold-start", cold_start, "step 4 only: skip the warm start");
    cmd_unet->add_flag("--force", force, "retrain even if checkpoints exist");

    auto* cmd_eval = app.add_subcommand("evaluate", "evaluate a checkpoint on a dataset directory");
    cmd_eval->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
    cmd_eval->add_option("--data", data_dir, "dataset directory")->required();
    cmd_eval->add_option("--split", split_name, "tr, v, te1, te2 or all (default all)");
    cmd_eval->add_option("--out", eval_out, "output directory for CSVs");
    cmd_eval->add_option("--dump-masks", dump_masks, "dump k (input, truth, prediction) PGM triplets");

    auto* cmd_plot = app.add_subcommand("export-plot", "export the parallel-plot CSV from sweep results");
    add_common(cmd_plot, opts);
    cmd_plot->add_option("--plot-out", plot_out, "output CSV path");

    auto* cmd_pipeline = app.add_subcommand("pipeline", "full pipeline");
    auto* cmd_run = cmd_pipeline->add_subcommand("run", "run steps 1..4 in order");
    add_common(cmd_run, opts);
    cmd_run->add_flag("--force", force, "recompute completed steps");
    cmd_run->add_flag("--cold-start", cold_start, "run step 4 without the warm start");
    cmd_pipeline->require_subcommand(1);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // help text, exit 0
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*cmd_datagen) {
            PipelineConfig cfg = opts.load();
            Dataset ds1 = load_or_make_single(cfg, force);
            Dataset ds2 = load_or_make_multi(cfg, force);
            std::printf("single: %zu samples (%zux%zu), multi: %zu samples (%zux%zu) -> %s/data\n", ds1.size(),
                        ds1.height(), ds1.width(), ds2.size(), ds2.height(), ds2.width(), cfg.out_dir.c_str());
        } else if (*cmd_sweep) {
            PipelineConfig cfg = opts.load();
            Dataset ds1 = load_or_make_single(cfg, false);
            Step1Result res = run_step1(cfg, ds1, force);
            std::printf("best spec: %s  C=%g  val CoB error %.3f px\n", res.best_spec.id().c_str(), res.best_c,
                        res.best_val_err);
        } else if (*cmd_enc) {
            PipelineConfig cfg = opts.load();
            Dataset ds1 = load_or_make_single(cfg, false);
            Step1Result s1 = load_step1(cfg);
            Step2Result res = run_step2(cfg, ds1, s1, force);
            std::printf("step 2 done; encoders in %s/step2 (best val CoB error %.3f px)\n", cfg.out_dir.c_str(),
                        res.history.records.empty() ? 0.0 : res.history.best_metric());
        } else if (*cmd_unet) {
            PipelineConfig cfg = opts.load();
            if (unet_step == 3) {
                Dataset ds1 = load_or_make_single(cfg, false);
                run_seg_step(cfg, 3, ds1, false, force);
            } else {
                Dataset ds2 = load_or_make_multi(cfg, false);
                run_seg_step(cfg, 4, ds2, cfg.warm_start && !cold_start, force);
            }
            std::printf("step %d done; outputs in %s/step%d\n", unet_step, opts.load().out_dir.c_str(), unet_step);
        } else if (*cmd_eval) {
            evaluate_checkpoint(ckpt_path, data_dir, split_name, eval_out, dump_masks);
            std::printf("evaluation written to %s\n", eval_out.c_str());
        } else if (*cmd_plot) {
            PipelineConfig cfg = opts.load();
            Dataset ds1 = load_or_make_single(cfg, false);
            Step1Result res = run_step1(cfg, ds1, false);  // resumes from the sweep checkpoint
            export_parallel_plot(res.report, plot_out);
            std::printf("parallel plot: %s (%zu rows)\n", plot_out.c_str(), res.report.rows.size());
        } else if (*cmd_run) {
            PipelineConfig cfg = opts.load();
            run_pipeline(cfg, force, cold_start);
            std::printf("pipeline complete; outputs in %s\n", cfg.out_dir.c_str());
        }
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return 3;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
