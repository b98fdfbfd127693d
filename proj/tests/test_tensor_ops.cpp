#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "boulderseg/ops.hpp"
#include "boulderseg/rng.hpp"
#include "oracles.hpp"

using namespace bseg;

namespace {
Tensor random_tensor(std::vector<std::size_t> shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng r(seed);
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = r.uniform(lo, hi);
    return t;
}
}  // namespace

TEST_CASE("conv2d identity-center kernel reproduces the input") {
    Tensor in = Tensor::full({1, 3, 3, 1}, 1.0);
    Tensor k = Tensor::zeros({3, 3, 1, 1});
    k.data[4] = 1.0;  // center tap
    Tensor out = conv2d(in, k, 1);
    REQUIRE(out.shape == in.shape);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out.data[i] == in.data[i]);
}

TEST_CASE("conv2d delta image with all-ones kernel at rate 2 hits the dilated taps") {
    Tensor in = Tensor::zeros({1, 5, 5, 1});
    in.at(0, 2, 2, 0) = 1.0;
    Tensor k = Tensor::full({3, 3, 1, 1}, 1.0);
    Tensor out = conv2d(in, k, 2);
    for (std::size_t y = 0; y < 5; ++y) {
        for (std::size_t x = 0; x < 5; ++x) {
            const bool tap = (y == 0 || y == 2 || y == 4) && (x == 0 || x == 2 || x == 4);
            CHECK(out.at(0, y, x, 0) == (tap ? 1.0 : 0.0));
        }
    }
}

TEST_CASE("conv2d is linear in the input") {
    Tensor a = random_tensor({2, 6, 6, 3}, 11);
    Tensor b = random_tensor({2, 6, 6, 3}, 12);
    Tensor k = random_tensor({3, 3, 3, 4}, 13);
    Tensor sum = a;
    for (std::size_t i = 0; i < sum.size(); ++i) sum.data[i] += b.data[i];
    Tensor lhs = conv2d(sum, k, 1);
    Tensor ra = conv2d(a, k, 1);
    Tensor rb = conv2d(b, k, 1);
    for (std::size_t i = 0; i < lhs.size(); ++i) {
        CHECK(std::abs(lhs.data[i] - (ra.data[i] + rb.data[i])) < 1e-12);
    }
}

TEST_CASE("conv2d matches the direct-loop oracle for every dilation rate") {
    Tensor in = random_tensor({2, 8, 8, 3}, 21);
    Tensor k = random_tensor({3, 3, 3, 5}, 22);
    for (int rate : {1, 2, 3}) {
        Tensor got = conv2d(in, k, rate);
        Tensor want = oracle::naive_conv2d(in, k, rate);
        REQUIRE(got.shape == std::vector<std::size_t>{2, 8, 8, 5});
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(std::abs(got.data[i] - want.data[i]) < 1e-12);
        }
    }
}

TEST_CASE("conv2d shift equivariance on interior pixels at rate 1") {
    Tensor in = random_tensor({1, 8, 8, 1}, 31);
    Tensor shifted = Tensor::zeros(in.shape);
    for (std::size_t y = 0; y + 1 < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x) shifted.at(0, y + 1, x, 0) = in.at(0, y, x, 0);
    Tensor k = random_tensor({3, 3, 1, 1}, 32);
    Tensor a = conv2d(in, k, 1);
    Tensor b = conv2d(shifted, k, 1);
    // interior rows only: 2..6 of the shifted output match 1..5 of the original
    for (std::size_t y = 2; y < 7; ++y)
        for (std::size_t x = 1; x < 7; ++x) CHECK(std::abs(b.at(0, y, x, 0) - a.at(0, y - 1, x, 0)) < 1e-12);
}

TEST_CASE("conv2d rejects bad arguments") {
    Tensor in = Tensor::zeros({1, 4, 4, 2});
    Tensor k = Tensor::zeros({3, 3, 3, 1});
    CHECK_THROWS_AS(conv2d(in, k, 1), std::invalid_argument);  // channel mismatch
    Tensor k2 = Tensor::zeros({3, 3, 2, 1});
    CHECK_THROWS_AS(conv2d(in, k2, 0), std::invalid_argument);  // dilation < 1
}

TEST_CASE("pool2d windowwise examples") {
    Tensor in({1, 2, 2, 1}, {1, 2, 3, 4});
    CHECK(pool2d(in, Pooling::Max).data[0] == 4.0);
    CHECK(pool2d(in, Pooling::Mean).data[0] == 2.5);
    Tensor odd = Tensor::zeros({1, 3, 4, 1});
    CHECK_THROWS_AS(pool2d(odd, Pooling::Max), std::invalid_argument);
}

TEST_CASE("pooling a constant tensor then duplicating recovers it exactly") {
    Tensor in = Tensor::full({1, 6, 6, 2}, 3.25);
    for (Pooling p : {Pooling::Max, Pooling::Mean}) {
        Tensor pooled = pool2d(in, p);
        for (double v : pooled.data) CHECK(v == 3.25);
        Tensor up = upsample2x(pooled);
        REQUIRE(up.shape == in.shape);
        for (std::size_t i = 0; i < up.size(); ++i) CHECK(up.data[i] == in.data[i]);
    }
}

TEST_CASE("activation examples") {
    Tensor x({1, 3}, {-1.0, 0.0, 2.0});
    Tensor relu = apply_activation(x, {ActKind::ReLU});
    CHECK(relu.data == std::vector<double>{0.0, 0.0, 2.0});

    Tensor same = apply_activation(x, {ActKind::None});
    CHECK(same.data == x.data);

    Tensor z({1, 1}, {0.0});
    CHECK(apply_activation(z, {ActKind::Sigmoid}).data[0] == Catch::Approx(0.5).margin(1e-15));
}

TEST_CASE("scalar activations are monotone non-decreasing") {
    Rng r(77);
    for (ActKind kind : {ActKind::ReLU, ActKind::LReLU, ActKind::ELU, ActKind::Tanh, ActKind::Sigmoid,
                         ActKind::None}) {
        std::vector<double> xs(64);
        for (double& v : xs) v = r.uniform(-4.0, 4.0);
        std::sort(xs.begin(), xs.end());
        Tensor t({xs.size()}, xs);
        Tensor y = apply_activation(t, {kind});
        for (std::size_t i = 1; i < y.size(); ++i) CHECK(y.data[i] >= y.data[i - 1]);
    }
}

TEST_CASE("NReLU normalizes per sample and channel before the gate") {
    Tensor x = random_tensor({2, 6, 6, 3}, 41, -2.0, 5.0);
    Tensor y = apply_activation(x, {ActKind::NReLU});
    REQUIRE(y.shape == x.shape);
    for (double v : y.data) CHECK(v >= 0.0);
    // positive part of a zero-mean unit-variance field: mean of y over space
    // must be strictly below the max
    CHECK(*std::max_element(y.data.begin(), y.data.end()) > 0.0);
    // shift invariance: adding a constant per channel changes nothing
    Tensor xs = x;
    for (std::size_t i = 0; i < xs.size(); ++i) xs.data[i] += 17.5;
    Tensor ys = apply_activation(xs, {ActKind::NReLU});
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(ys.data[i] == Catch::Approx(y.data[i]).margin(1e-9));
}

TEST_CASE("init_kernel is a pure function of shape, scheme and seed") {
    for (InitScheme s : {InitScheme::Uniform, InitScheme::Normal, InitScheme::Orthogonal}) {
        Tensor a = init_kernel({3, 3, 2, 4}, {s, 99});
        Tensor b = init_kernel({3, 3, 2, 4}, {s, 99});
        CHECK(a.data == b.data);  // bitwise
        Tensor c = init_kernel({3, 3, 2, 4}, {s, 100});
        CHECK(a.data != c.data);
    }
}

TEST_CASE("uniform init stays in (-1,1)") {
    Tensor t = init_kernel({3, 3, 8, 16}, {InitScheme::Uniform, 5});
    for (double v : t.data) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("orthogonal init gives orthonormal columns within 1e-10") {
    // 9x9 reshaped kernel
    Tensor t = init_kernel({3, 3, 1, 9}, {InitScheme::Orthogonal, 7});
    Eigen::Map<const MatRM> m(t.data.data(), 9, 9);
    Eigen::MatrixXd gram = m.transpose() * m;
    const double err = (gram - Eigen::MatrixXd::Identity(9, 9)).cwiseAbs().maxCoeff();
    CHECK(err < 1e-10);
}

TEST_CASE("orthogonal init handles tall and wide reshapes") {
    Tensor tall = init_kernel({3, 3, 2, 4}, {InitScheme::Orthogonal, 8});  // 18 x 4
    Eigen::Map<const MatRM> mt(tall.data.data(), 18, 4);
    CHECK(((mt.transpose() * mt) - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-10);

    Tensor wide = init_kernel({2, 8}, {InitScheme::Orthogonal, 9});  // 2 x 8
    Eigen::Map<const MatRM> mw(wide.data.data(), 2, 8);
    CHECK(((mw * mw.transpose()) - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("same padding preserves spatial dims for rates 1..3 and both poolings halve them") {
    Tensor in = random_tensor({1, 12, 12, 2}, 55);
    Tensor k = random_tensor({3, 3, 2, 3}, 56);
    for (int rate : {1, 2, 3}) {
        Tensor out = conv2d(in, k, rate);
        CHECK(out.shape[1] == 12);
        CHECK(out.shape[2] == 12);
        CHECK(out.all_finite());
    }
    CHECK(pool2d(in, Pooling::Max).shape == std::vector<std::size_t>{1, 6, 6, 2});
}
