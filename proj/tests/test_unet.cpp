#include <catch2/catch_amalgamated.hpp>

#include "boulderseg/unet.hpp"
#include "oracles.hpp"

using namespace bseg;

namespace {
CelmModel small_encoder(int n_cells = 2, int d0 = 4, std::size_t size = 16, std::uint64_t seed = 3) {
    ArchSpec spec;
    spec.pooling = Pooling::Max;
    spec.d0 = d0;
    spec.n_cells = n_cells;
    spec.activation = ActKind::ELU;
    spec.init = InitScheme::Uniform;
    spec.fc_neurons = 0;
    return build_encoder(spec, seed, size, size, 1);
}

Tensor random_images(std::size_t n, std::size_t hw, std::uint64_t seed) {
    Rng r(seed);
    Tensor t = Tensor::zeros({n, hw, hw, 1});
    for (double& v : t.data) v = r.uniform(0.0, 1.0);
    return t;
}

Tensor random_masks(std::size_t n, std::size_t hw, std::uint64_t seed) {
    Rng r(seed);
    Tensor t = Tensor::zeros({n, hw, hw});
    for (double& v : t.data) v = r.uniform() < 0.3 ? 1.0 : 0.0;
    return t;
}
}  // namespace

TEST_CASE("unet logits keep the input spatial dims for divisible input sizes") {
    for (std::size_t size : {16, 32}) {
        CelmModel enc = small_encoder(2, 4, size);
        UNetModel u = build_unet(enc, {16, 8}, 7);
        Tensor x = random_images(2, size, 11);
        SegmentationOutput out = predict_mask(u, x);
        CHECK(out.logits.shape == std::vector<std::size_t>{2, size, size, 2});
        CHECK(out.predicted_mask.shape == std::vector<std::size_t>{2, size, size});
        for (double v : out.predicted_mask.data) CHECK((v == 0.0 || v == 1.0));
    }
}

TEST_CASE("deeper encoders than decoder depths are bridged without skips") {
    CelmModel enc = small_encoder(3, 4, 32);
    UNetModel u = build_unet(enc, {16, 8}, 9);  // 3 cells, 2 skip stages -> 1 bridge
    CHECK(u.n_bridge() == 1);
    CHECK(u.stage_skip_cell(0) == -1);
    CHECK(u.stage_depth(0) == 32);  // doubled progression in front of 16, 8
    CHECK(u.stage_skip_cell(1) == 1);
    CHECK(u.stage_skip_cell(2) == 0);
    Tensor x = random_images(1, 32, 12);
    CHECK(predict_mask(u, x).logits.shape == std::vector<std::size_t>{1, 32, 32, 2});

    CHECK_THROWS_AS(build_unet(enc, {32, 16, 8, 4}, 9), std::invalid_argument);  // 4 depths, 3 cells
}

TEST_CASE("prediction is deterministic and batch-size independent") {
    CelmModel enc = small_encoder();
    UNetModel u = build_unet(enc, {16, 8}, 13);
    Tensor x = random_images(5, 16, 14);
    SegmentationOutput a = predict_mask(u, x, 2);
    SegmentationOutput b = predict_mask(u, x, 5);
    CHECK(a.logits.data == b.logits.data);
    CHECK(a.predicted_mask.data == b.predicted_mask.data);

    Tensor wrong = random_images(1, 32, 15);
    CHECK_THROWS_AS(predict_mask(u, wrong), std::invalid_argument);
}

TEST_CASE("argmax ties break toward the non-boulder class") {
    CelmModel enc = small_encoder();
    UNetModel u = build_unet(enc, {16, 8}, 17);
    // zero head: logits identical across classes everywhere
    for (double& v : u.params.at("dec.head.kernel").data) v = 0.0;
    for (double& v : u.params.at("dec.head.bias").data) v = 0.0;
    SegmentationOutput out = predict_mask(u, random_images(1, 16, 18));
    for (double v : out.predicted_mask.data) CHECK(v == 0.0);
}

TEST_CASE("encoder stays bitwise frozen through training steps") {
    CelmModel enc = small_encoder();
    UNetModel u = build_unet(enc, {16, 8}, 19);
    const std::uint64_t frozen_before = u.params.byte_hash(true);

    Tensor tr_img = random_images(8, 16, 20);
    Tensor tr_mask = random_masks(8, 16, 21);
    Tensor val_img = random_images(4, 16, 22);
    Tensor val_mask = random_masks(4, 16, 23);
    TrainProblem prob = make_segmentation_problem(u, tr_img, tr_mask, val_img, val_mask, ClassWeights{{0.3, 0.7}});
    TrainConfig cfg;
    cfg.learning_rate = 0.05;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    cfg.dropout_rate = 0.2;
    cfg.seed = 24;
    TrainingHistory h = train_loop(prob, cfg);
    CHECK(u.params.byte_hash(true) == frozen_before);
    CHECK(h.records.size() == 3);
    CHECK(h.maximize_metric);
}

TEST_CASE("gradients reach every decoder stage (finite differences)") {
    CelmModel enc = small_encoder(2, 4, 8, 29);
    UNetModel u = build_unet(enc, {8, 4}, 31);
    Tensor img = random_images(1, 8, 32);
    Tensor mask = random_masks(1, 8, 33);
    ClassWeights w{{0.4, 0.6}};

    auto wire = [&](Graph& g) {
        int logits = unet_forward(g, u, g.input(img));
        return g.wscce_loss(logits, mask, w);
    };
    Graph g(true);
    GradMap grads = g.backward(wire(g));

    auto eval = [&]() {
        Graph ge(false);
        return ge.value(wire(ge)).data[0];
    };

    Rng pick(34);
    double worst = 0.0;
    for (auto& e : u.params.entries()) {
        if (e.frozen) continue;
        REQUIRE(grads.count(e.name) == 1);
        double max_abs = 0.0;
        for (double v : grads.at(e.name).data) max_abs = std::max(max_abs, std::abs(v));
        CHECK(max_abs > 0.0);  // no dead branches
        for (int c = 0; c < 3; ++c) {
            const std::size_t i = static_cast<std::size_t>(pick.below(e.value.size()));
            const double fd = oracle::central_diff(eval, e.value.data[i], 1e-5);
            worst = std::max(worst, oracle::rel_err(grads.at(e.name).data[i], fd, 1e-6));
        }
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("zero-epoch training and self warm start are identities") {
    CelmModel enc = small_encoder();
    UNetModel u = build_unet(enc, {16, 8}, 37);
    const std::uint64_t before = u.params.byte_hash();

    Tensor img = random_images(4, 16, 38);
    Tensor mask = random_masks(4, 16, 39);
    TrainProblem prob = make_segmentation_problem(u, img, mask, img, mask, ClassWeights::uniform(2));
    TrainConfig cfg;
    cfg.epochs = 0;
    TrainingHistory h = train_loop(prob, cfg);
    CHECK(h.records.empty());
    CHECK(u.params.byte_hash() == before);

    // warm start from the model's own parameters
    ParamStore copy;
    for (const auto& e : u.params.entries()) copy.add(e.name, e.value, e.frozen);
    load_warm_start(u, copy);
    CHECK(u.params.byte_hash() == before);
}

TEST_CASE("warm start names the first mismatching tensor") {
    CelmModel enc = small_encoder();
    UNetModel u = build_unet(enc, {16, 8}, 41);

    ParamStore missing;
    CHECK_THROWS_WITH(load_warm_start(u, missing), Catch::Matchers::ContainsSubstring("enc.cell0.rate1.kernel"));

    ParamStore wrong_shape;
    for (const auto& e : u.params.entries()) wrong_shape.add(e.name, e.value, e.frozen);
    wrong_shape.at("dec.stage0.conv1.kernel") = Tensor::zeros({3, 3, 1, 1});
    CHECK_THROWS_WITH(load_warm_start(u, wrong_shape), Catch::Matchers::ContainsSubstring("dec.stage0.conv1.kernel"));
}

TEST_CASE("unet parameter split: frozen encoder, trainable decoder") {
    CelmModel enc = small_encoder(2, 4, 16);
    UNetModel u = build_unet(enc, {16, 8}, 43);
    ParamCount pc = count_parameters(u.params);
    // encoder cells: cell0 3*(9*1*4+4)=120, cell1 3*(9*12*8+8)=2616 -> 2736 frozen
    CHECK(pc.total - pc.trainable == 2736);
    // decoder: stage0 (up 24ch, skip cell1 24ch -> in 48): conv1 9*48*16+16=6928,
    // conv2 9*16*16+16=2320; stage1 (in 16+12=28): conv1 9*28*8+8=2024,
    // conv2 9*8*8+8=584; head 1*1*8*2+2=18 -> 11874 trainable
    CHECK(pc.trainable == 11874);
}

TEST_CASE("a tiny unet learns a separable toy segmentation") {
    // boulder = bright blob on dark background: trainable decoder should
    // overfit 12 samples quickly
    const std::size_t sz = 16;
    Rng r(55);
    Tensor images = Tensor::zeros({12, sz, sz, 1});
    Tensor masks = Tensor::zeros({12, sz, sz});
    for (std::size_t s = 0; s < 12; ++s) {
        const double cx = r.uniform(5.0, 11.0), cy = r.uniform(5.0, 11.0), rad = r.uniform(2.0, 4.0);
        for (std::size_t y = 0; y < sz; ++y)
            for (std::size_t x = 0; x < sz; ++x) {
                const double d = std::hypot(static_cast<double>(x) - cx, static_cast<double>(y) - cy);
                const bool in = d < rad;
                images.at(s, y, x, 0) = std::clamp((in ? 0.8 : 0.2) + 0.05 * r.normal(), 0.0, 1.0);
                masks.data[(s * sz + y) * sz + x] = in ? 1.0 : 0.0;
            }
    }
    CelmModel enc = small_encoder(2, 4, sz, 57);
    UNetModel u = build_unet(enc, {12, 6}, 58);
    TrainProblem prob = make_segmentation_problem(u, images, masks, images, masks,
                                                  compute_class_weights({&masks}));
    TrainConfig cfg;
    cfg.learning_rate = 0.15;
    cfg.epochs = 30;
    cfg.batch_size = 6;
    cfg.seed = 59;
    TrainingHistory h = train_loop(prob, cfg);
    CHECK(h.best_metric() > 0.80);  // mean per-image MIOU on the toy
}
