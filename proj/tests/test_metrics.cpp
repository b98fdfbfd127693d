#include <catch2/catch_amalgamated.hpp>

#include "boulderseg/metrics.hpp"
#include "oracles.hpp"

using namespace bseg;

TEST_CASE("cob_error examples and properties") {
    CHECK(cob_error({3.0, 4.0}, {0.0, 0.0}) == 5.0);
    CHECK(cob_error({2.5, -1.0}, {2.5, -1.0}) == 0.0);
    // batch mean over {(1,0) vs (0,0), (0,2) vs (0,0)} -> (1 + 2) / 2
    const double mean = 0.5 * (cob_error({1, 0}, {0, 0}) + cob_error({0, 2}, {0, 0}));
    CHECK(mean == Catch::Approx(1.5));

    Rng r(1);
    for (int i = 0; i < 50; ++i) {
        CoB a{r.uniform(-10, 10), r.uniform(-10, 10)};
        CoB b{r.uniform(-10, 10), r.uniform(-10, 10)};
        CoB c{r.uniform(-10, 10), r.uniform(-10, 10)};
        CHECK(cob_error(a, b) >= 0.0);
        CHECK(cob_error(a, b) == cob_error(b, a));
        CHECK(cob_error(a, c) <= cob_error(a, b) + cob_error(b, c) + 1e-12);
    }
}

TEST_CASE("miou examples") {
    Tensor both({1, 4}, {1, 1, 0, 0});
    CHECK(miou(both, both) == 1.0);

    Tensor zeros({1, 4}, {0, 0, 0, 0});
    Tensor ones({1, 4}, {1, 1, 1, 1});
    CHECK(miou(zeros, ones) == 0.0);  // disjoint

    // truth [1,1,0,0], pred [1,0,0,0]: IOU1 = 1/2, IOU0 = 2/3, MIOU = 7/12
    Tensor truth({1, 4}, {1, 1, 0, 0});
    Tensor pred({1, 4}, {1, 0, 0, 0});
    CHECK(miou(pred, truth) == Catch::Approx(7.0 / 12.0).margin(1e-12));

    // class absent from both masks is excluded from the mean
    CHECK(miou(zeros, zeros) == 1.0);  // only class 0 present, IOU0 = 1

    Tensor bad({1, 3}, {0, 0, 0});
    CHECK_THROWS_AS(miou(bad, truth), std::invalid_argument);
    Tensor badclass({1, 4}, {0, 0, 0, 3});
    CHECK_THROWS_AS(miou(badclass, truth), std::invalid_argument);
}

TEST_CASE("miou and accuracy match brute-force counting on random 8x8 masks") {
    Rng r(5);
    for (int it = 0; it < 30; ++it) {
        Tensor a = Tensor::zeros({8, 8});
        Tensor b = Tensor::zeros({8, 8});
        for (double& v : a.data) v = r.uniform() < 0.3 ? 1.0 : 0.0;
        for (double& v : b.data) v = r.uniform() < 0.3 ? 1.0 : 0.0;

        double acc_want = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) acc_want += a.data[i] == b.data[i] ? 1.0 : 0.0;
        acc_want /= 64.0;
        CHECK(accuracy(a, b) == Catch::Approx(acc_want).margin(1e-15));

        double sum = 0.0;
        int present = 0;
        for (std::size_t cls = 0; cls < 2; ++cls) {
            auto c = oracle::count_iou(a, b, cls);
            if (c.uni > 0) {
                sum += static_cast<double>(c.inter) / static_cast<double>(c.uni);
                ++present;
            }
        }
        CHECK(miou(a, b) == Catch::Approx(sum / present).margin(1e-12));
    }
}

TEST_CASE("metrics are invariant to a consistent pixel permutation") {
    Rng r(6);
    Tensor a = Tensor::zeros({1, 36});
    Tensor b = Tensor::zeros({1, 36});
    for (double& v : a.data) v = r.uniform() < 0.4 ? 1.0 : 0.0;
    for (double& v : b.data) v = r.uniform() < 0.4 ? 1.0 : 0.0;
    std::vector<std::size_t> perm(36);
    for (std::size_t i = 0; i < 36; ++i) perm[i] = i;
    r.shuffle(perm);
    Tensor ap = Tensor::zeros({1, 36}), bp = Tensor::zeros({1, 36});
    for (std::size_t i = 0; i < 36; ++i) {
        ap.data[i] = a.data[perm[i]];
        bp.data[i] = b.data[perm[i]];
    }
    CHECK(miou(ap, bp) == miou(a, b));
    CHECK(accuracy(ap, bp) == accuracy(a, b));
}

TEST_CASE("accuracy examples") {
    Tensor a({1, 4}, {1, 1, 0, 0});
    CHECK(accuracy(a, a) == 1.0);
    Tensor inv({1, 4}, {0, 0, 1, 1});
    CHECK(accuracy(a, inv) == 0.0);
    Tensor p({1, 4}, {1, 0, 0, 0});
    CHECK(accuracy(p, a) == 0.75);
}

TEST_CASE("eval record mean and stddev recompute from per-sample values") {
    std::vector<double> vals = {1.0, 2.0, 4.0, 8.0};
    EvalRecord rec = EvalRecord::from("miou", vals);
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= 4.0;
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    CHECK(std::abs(rec.mean - mean) < 1e-12);
    CHECK(std::abs(rec.stddev - std::sqrt(var / 4.0)) < 1e-12);
}

TEST_CASE("weight histogram: constant weights occupy a single bin") {
    ParamStore ps;
    ps.add("layer.weight", Tensor::full({8, 2}, 0.7), false);
    WeightHistogram h = weight_histogram(ps, "layer.weight", 10);
    double total = 0.0;
    int occupied = 0;
    for (double p : h.probs) {
        total += p;
        if (p > 0.0) ++occupied;
    }
    CHECK(std::abs(total - 1.0) < 1e-12);
    CHECK(occupied == 1);
    CHECK(h.mean == Catch::Approx(0.7));
    CHECK(h.variance == Catch::Approx(0.0).margin(1e-15));
    CHECK(h.bias.empty());
}

TEST_CASE("weight histogram recovers N(0,1) variance within 10 percent") {
    ParamStore ps;
    Rng r(9);
    Tensor w = Tensor::zeros({20000, 2});
    for (double& v : w.data) v = r.normal();
    ps.add("out.weight", std::move(w), false);
    ps.add("out.bias", Tensor({2}, {0.148, 0.148}), false);
    WeightHistogram h = weight_histogram(ps, "out.weight", 50, 0);
    CHECK(h.variance > 0.9);
    CHECK(h.variance < 1.1);
    double total = 0.0;
    for (double p : h.probs) total += p;
    CHECK(std::abs(total - 1.0) < 1e-12);
    REQUIRE(h.bias.size() == 2);
    CHECK(h.bias[0] == 0.148);

    CHECK_THROWS_AS(weight_histogram(ps, "nope.weight", 5), std::invalid_argument);
}
