#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "boulderseg/arch.hpp"
#include "boulderseg/common.hpp"
#include "boulderseg/datagen.hpp"
#include "boulderseg/dataset_io.hpp"
#include "boulderseg/graph.hpp"
#include "boulderseg/losses.hpp"
#include "boulderseg/metrics.hpp"
#include "boulderseg/model.hpp"
#include "boulderseg/trainer.hpp"

namespace bseg {

// UNet around a frozen hierarchical-pooling encoder. Skip connections tap
// each cell after its activation (before pooling); every decoder stage does
// nearest 2x upsampling, concatenates the matching skip, and applies two 3x3
// convolutions at the stage depth. A final 1x1 convolution emits the
// two-class logits.
//
// When the encoder has more cells than decoder depths, the decoder consumes
// the shallowest len(depths) skips; deeper cells are bridged by skip-less
// stages whose depths extend the configured progression (doubling).
struct UNetModel {
    ArchSpec enc_spec;
    std::size_t input_h = 128;
    std::size_t input_w = 128;
    std::size_t input_c = 1;
    std::vector<std::size_t> decoder_depths;  // deep -> shallow, one per consumed skip
    ActKind decoder_act = ActKind::ELU;
    ParamStore params;

    std::size_t n_stages() const { return static_cast<std::size_t>(enc_spec.n_cells); }
    std::size_t n_bridge() const { return n_stages() - decoder_depths.size(); }

    // Depth of decoder stage s (s = 0 is the deepest stage).
    std::size_t stage_depth(std::size_t s) const {
        if (s < n_bridge()) return decoder_depths.front() << (n_bridge() - s);
        return decoder_depths[s - n_bridge()];
    }
    // Cell whose skip feeds stage s, or -1 for bridge stages.
    int stage_skip_cell(std::size_t s) const {
        return s < n_bridge() ? -1 : enc_spec.n_cells - 1 - static_cast<int>(s);
    }
};

// Assembles the UNet: encoder cell parameters are copied in frozen (the CoB
// dense head is discarded); decoder and head are fresh trainable parameters.
inline UNetModel build_unet(const CelmModel& encoder, std::vector<std::size_t> decoder_depths,
                            std::uint64_t seed, ActKind decoder_act = ActKind::ELU) {
    check_arg(!decoder_depths.empty(), "build_unet: decoder_depths empty");
    if (decoder_depths.size() > static_cast<std::size_t>(encoder.spec.n_cells)) {
        throw std::invalid_argument("build_unet: " + std::to_string(decoder_depths.size()) +
                                    " decoder depths for " + std::to_string(encoder.spec.n_cells) +
                                    " encoder cells");
    }
    UNetModel u;
    u.enc_spec = encoder.spec;
    u.input_h = encoder.input_h;
    u.input_w = encoder.input_w;
    u.input_c = encoder.input_c;
    u.decoder_depths = std::move(decoder_depths);
    u.decoder_act = decoder_act;

    for (const auto& e : encoder.params.entries()) {
        if (e.name.rfind("enc.cell", 0) == 0) u.params.add(e.name, e.value, /*frozen=*/true);
    }

    Rng init_rng = Rng::stream(seed, "decoder");
    auto add_conv = [&](const std::string& name, std::size_t k, std::size_t cin, std::size_t cout) {
        const double lim = std::sqrt(6.0 / static_cast<double>(k * k * cin + cout));
        Tensor kernel = Tensor::zeros({k, k, cin, cout});
        for (double& v : kernel.data) v = init_rng.uniform(-lim, lim);
        u.params.add(name + ".kernel", std::move(kernel), false);
        u.params.add(name + ".bias", Tensor::zeros({cout}), false);
    };

    std::size_t c = static_cast<std::size_t>(u.enc_spec.cell_out_channels(u.enc_spec.n_cells - 1));
    for (std::size_t s = 0; s < u.n_stages(); ++s) {
        const int skip_cell = u.stage_skip_cell(s);
        std::size_t cin = c;
        if (skip_cell >= 0) cin += static_cast<std::size_t>(u.enc_spec.cell_out_channels(skip_cell));
        const std::size_t depth = u.stage_depth(s);
        add_conv("dec.stage" + std::to_string(s) + ".conv1", 3, cin, depth);
        add_conv("dec.stage" + std::to_string(s) + ".conv2", 3, depth, depth);
        c = depth;
    }
    add_conv("dec.head", 1, c, 2);
    return u;
}

// Full forward pass to logits (N,H,W,2).
inline int unet_forward(Graph& g, const UNetModel& u, int x, bool training = false, double dropout_rate = 0.0,
                        Rng* dropout_rng = nullptr) {
    std::vector<int> skips;
    x = encoder_cells_forward(g, u.params, u.enc_spec, x, "enc.", &skips);
    const Activation act{u.decoder_act};
    for (std::size_t s = 0; s < u.n_stages(); ++s) {
        x = g.upsample2x(x);
        const int skip_cell = u.stage_skip_cell(s);
        if (skip_cell >= 0) x = g.concat({x, skips[static_cast<std::size_t>(skip_cell)]});
        for (int conv = 1; conv <= 2; ++conv) {
            const std::string base = "dec.stage" + std::to_string(s) + ".conv" + std::to_string(conv);
            int k = g.param(base + ".kernel", u.params.at(base + ".kernel"), u.params.frozen(base + ".kernel"));
            int b = g.param(base + ".bias", u.params.at(base + ".bias"), u.params.frozen(base + ".bias"));
            x = g.activation(g.bias_add(g.conv2d(x, k, 1), b), act);
        }
        if (training && dropout_rate > 0.0) {
            check_arg(dropout_rng != nullptr, "unet_forward: dropout requires an rng");
            x = g.dropout(x, dropout_rate, *dropout_rng);
        }
    }
    int hk = g.param("dec.head.kernel", u.params.at("dec.head.kernel"), u.params.frozen("dec.head.kernel"));
    int hb = g.param("dec.head.bias", u.params.at("dec.head.bias"), u.params.frozen("dec.head.bias"));
    return g.bias_add(g.conv2d(x, hk, 1), hb);
}

struct SegmentationOutput {
    Tensor logits;          // (N,H,W,2)
    Tensor predicted_mask;  // (N,H,W) in {0,1}
};

// Deterministic inference; argmax ties resolve to class 0.
inline SegmentationOutput predict_mask(const UNetModel& u, const Tensor& images, std::size_t batch_size = 8) {
    check_arg(images.rank() == 4, "predict_mask: images must be (N,H,W,C), got " + images.shape_str());
    if (images.shape[1] != u.input_h || images.shape[2] != u.input_w || images.shape[3] != u.input_c) {
        throw std::invalid_argument("predict_mask: images " + images.shape_str() + " do not match model input");
    }
    const std::size_t n = images.shape[0], h = images.shape[1], w = images.shape[2];
    SegmentationOutput out;
    out.logits = Tensor::zeros({n, h, w, 2});
    out.predicted_mask = Tensor::zeros({n, h, w});
    for (std::size_t i0 = 0; i0 < n; i0 += batch_size) {
        const std::size_t i1 = std::min(n, i0 + batch_size);
        Graph g(false);
        const Tensor& lg = g.value(unet_forward(g, u, g.input(slice_samples(images, i0, i1))));
        std::copy(lg.data.begin(), lg.data.end(),
                  out.logits.data.begin() + static_cast<std::ptrdiff_t>(i0 * h * w * 2));
        for (std::size_t p = 0; p < (i1 - i0) * h * w; ++p) {
            const double c0 = lg.data[2 * p], c1 = lg.data[2 * p + 1];
            out.predicted_mask.data[i0 * h * w + p] = c1 > c0 ? 1.0 : 0.0;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct SegmentationEval {
    EvalRecord wscce;
    EvalRecord accuracy;
    EvalRecord miou;
    EvalRecord boulder_iou;  // class-1 IOU, reported alongside the two-class mean
};

inline SegmentationEval evaluate_segmentation(const UNetModel& u, const Tensor& images, const Tensor& masks,
                                              const ClassWeights& weights, std::size_t batch_size = 8) {
    const std::size_t n = images.shape[0], h = images.shape[1], w = images.shape[2];
    std::vector<double> v_wscce, v_acc, v_miou, v_biou;
    SegmentationOutput out = predict_mask(u, images, batch_size);
    for (std::size_t i = 0; i < n; ++i) {
        Tensor lg = slice_samples(out.logits, i, i + 1);
        Tensor pm({h, w}, std::vector<double>(out.predicted_mask.data.begin() + static_cast<std::ptrdiff_t>(i * h * w),
                                              out.predicted_mask.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * h * w)));
        Tensor tm({h, w}, std::vector<double>(masks.data.begin() + static_cast<std::ptrdiff_t>(i * h * w),
                                              masks.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * h * w)));
        Tensor tm4 = tm.reshaped({1, h, w});
        v_wscce.push_back(wscce_value(lg, tm4, weights));
        v_acc.push_back(accuracy(pm, tm));
        v_miou.push_back(miou(pm, tm));
        v_biou.push_back(class_iou(pm, tm, 1));
    }
    SegmentationEval ev{EvalRecord::from("wscce", std::move(v_wscce)), EvalRecord::from("accuracy", std::move(v_acc)),
                        EvalRecord::from("miou", std::move(v_miou)), EvalRecord::from("boulder_iou", std::move(v_biou))};
    return ev;
}

// ---------------------------------------------------------------------------
// Training problems (steps 3 and 4)
// ---------------------------------------------------------------------------

// WSCCE training problem over image/mask batches; validation tracks the mean
// per-image MIOU (maximized).
inline TrainProblem make_segmentation_problem(UNetModel& u, const Tensor& train_images, const Tensor& train_masks,
                                              const Tensor& val_images, const Tensor& val_masks,
                                              ClassWeights weights) {
    check_arg(train_images.shape[0] == train_masks.shape[0], "segmentation problem: image/mask count mismatch");
    TrainProblem prob;
    prob.params = &u.params;
    prob.n_train = train_images.shape[0];
    prob.maximize_metric = true;
    prob.forward_loss = [&u, &train_images, &train_masks, weights](Graph& g, const std::vector<std::size_t>& idx,
                                                                   double dropout, Rng* rng) {
        int x = g.input(gather_samples(train_images, idx));
        int logits = unet_forward(g, u, x, /*training=*/true, dropout, rng);
        return g.wscce_loss(logits, gather_samples(train_masks, idx), weights);
    };
    prob.validate = [&u, &val_images, &val_masks, weights]() {
        SegmentationEval ev = evaluate_segmentation(u, val_images, val_masks, weights);
        return std::make_pair(ev.wscce.mean, ev.miou.mean);
    };
    return prob;
}

// Loads parameter values from another store (e.g. a step-3 checkpoint) into
// the model; every tensor must exist with identical shape, and the first
// mismatch is named.
inline void load_warm_start(UNetModel& u, const ParamStore& from) {
    for (auto& e : u.params.entries()) {
        if (!from.has(e.name)) {
            throw DataError("warm start: checkpoint is missing tensor '" + e.name + "'");
        }
        const Tensor& src = from.at(e.name);
        if (src.shape != e.value.shape) {
            throw DataError("warm start: tensor '" + e.name + "' has shape " + src.shape_str() +
                            " but the model expects " + e.value.shape_str());
        }
        e.value = src;
    }
}

struct StepResult {
    TrainingHistory history;
    SegmentationEval val_eval;
};

// Shared recipe for the two segmentation steps: class weights from the
// training masks, WSCCE loss, best-validation-MIOU checkpointing.
inline StepResult train_segmentation_step(UNetModel& u, const Dataset& ds, const std::vector<std::size_t>& tr_idx,
                                          const std::vector<std::size_t>& val_idx, const TrainConfig& cfg,
                                          bool warm_started = false) {
    check_data(!tr_idx.empty() && !val_idx.empty(), "segmentation step: empty split");
    Tensor tr_images = to_image_batch(ds, tr_idx);
    Tensor tr_masks = to_mask_batch(ds, tr_idx);
    Tensor val_images = to_image_batch(ds, val_idx);
    Tensor val_masks = to_mask_batch(ds, val_idx);
    std::vector<const Tensor*> mask_ptrs;
    for (std::size_t i : tr_idx) mask_ptrs.push_back(&ds.samples[i].mask_shadowed);
    ClassWeights weights = compute_class_weights(mask_ptrs);

    TrainProblem prob = make_segmentation_problem(u, tr_images, tr_masks, val_images, val_masks, weights);
    StepResult res;
    res.history = train_loop(prob, cfg);
    res.history.warm_start = warm_started;
    res.val_eval = evaluate_segmentation(u, val_images, val_masks, weights);
    return res;
}

// Step 3: train on the single-boulder set from scratch.
inline StepResult train_step3(UNetModel& u, const Dataset& ds1, const std::vector<std::size_t>& tr_idx,
                              const std::vector<std::size_t>& val_idx, const TrainConfig& cfg) {
    return train_segmentation_step(u, ds1, tr_idx, val_idx, cfg, false);
}

// Step 4: continue on the multi-boulder set, warm-started from the step-3
// parameters unless the caller opted out (cold start for A/B comparisons).
inline StepResult train_step4(UNetModel& u, const Dataset& ds2, const std::vector<std::size_t>& tr_idx,
                              const std::vector<std::size_t>& val_idx, const TrainConfig& cfg,
                              const ParamStore* warm_start) {
    if (warm_start) load_warm_start(u, *warm_start);
    return train_segmentation_step(u, ds2, tr_idx, val_idx, cfg, warm_start != nullptr);
}

}  // namespace bseg
