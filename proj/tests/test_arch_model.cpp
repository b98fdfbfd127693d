#include <catch2/catch_amalgamated.hpp>

#include "boulderseg/arch.hpp"
#include "boulderseg/model.hpp"

using namespace bseg;

TEST_CASE("full table grid enumerates exactly 1134 specs, deterministically") {
    auto grid = enumerate_grid(GridConfig::table2());
    REQUIRE(grid.size() == 1134);
    auto again = enumerate_grid(GridConfig::table2());
    for (std::size_t i = 0; i < grid.size(); ++i) CHECK(grid[i].id() == again[i].id());
    // lexicographic: first spec is the first value of every field
    CHECK(grid[0].pooling == Pooling::Mean);
    CHECK(grid[0].d0 == 4);
    CHECK(grid[0].n_cells == 3);
    CHECK(grid[0].activation == ActKind::NReLU);
    CHECK(grid[0].init == InitScheme::Uniform);
    CHECK(grid[0].run_index == 0);
    CHECK(grid[1].run_index == 1);
}

TEST_CASE("restricted grids multiply out") {
    GridConfig g;
    g.pooling = {Pooling::Max};
    g.depth_cells = {{4, {3}}};
    g.activations = {ActKind::ELU};
    g.inits = {InitScheme::Orthogonal};
    g.n_runs = 1;
    CHECK(enumerate_grid(g).size() == 1);

    GridConfig desk;
    desk.pooling = {Pooling::Max, Pooling::Mean};
    desk.depth_cells = {{4, {3, 4}}};
    desk.activations = {ActKind::ELU, ActKind::ReLU};
    desk.inits = {InitScheme::Orthogonal};
    desk.n_runs = 2;
    CHECK(enumerate_grid(desk).size() == 16);
}

TEST_CASE("grid rejects unpaired d0/n combinations") {
    GridConfig g;
    g.pooling = {Pooling::Max};
    g.depth_cells = {{8, {3}}};  // d0=8 pairs with {4,5,6}
    g.activations = {ActKind::ELU};
    g.inits = {InitScheme::Uniform};
    CHECK_THROWS_AS(enumerate_grid(g), std::invalid_argument);
    g.depth_cells = {{6, {3}}};  // not a power of two
    CHECK_THROWS_AS(enumerate_grid(g), std::invalid_argument);
}

TEST_CASE("build_encoder wiring: depths, spatial halving and determinism") {
    ArchSpec spec;
    spec.pooling = Pooling::Max;
    spec.d0 = 16;
    spec.n_cells = 5;
    spec.activation = ActKind::ELU;
    spec.init = InitScheme::Uniform;
    spec.fc_neurons = 0;
    CelmModel m = build_encoder(spec, 1, 128, 128, 1);

    // cell 0 emits 3 x 16 = 48 channels; 128 / 2^5 = 4
    CHECK(spec.cell_out_channels(0) == 48);
    CHECK(m.flatten_dim() == 4 * 4 * (3 * 256));
    CHECK(m.hidden_dim() == m.flatten_dim());

    CelmModel m2 = build_encoder(spec, 1, 128, 128, 1);
    CHECK(m.params.byte_hash() == m2.params.byte_hash());
    CelmModel m3 = build_encoder(spec, 2, 128, 128, 1);
    CHECK(m.params.byte_hash() != m3.params.byte_hash());

    // run_index participates in the seed
    ArchSpec r1 = spec;
    r1.run_index = 1;
    CelmModel m4 = build_encoder(r1, 1, 128, 128, 1);
    CHECK(m.params.byte_hash() != m4.params.byte_hash());
}

TEST_CASE("build_encoder rejects spatially exhausted configurations") {
    ArchSpec spec;
    spec.d0 = 4;
    spec.n_cells = 5;
    CHECK_THROWS_AS(build_encoder(spec, 1, 16, 16, 1), std::invalid_argument);  // 16/2^4 = 1 < 2
    CHECK_THROWS_AS(build_encoder(spec, 1, 48, 48, 1), std::invalid_argument);  // not divisible by 32
    CHECK_NOTHROW(build_encoder(spec, 1, 32, 32, 1));
}

TEST_CASE("count_parameters matches analytic counts") {
    // single 3x3 conv 1 -> 4 with bias: 4 * (9 + 1) = 40
    ParamStore ps;
    ps.add("k", Tensor::zeros({3, 3, 1, 4}), false);
    ps.add("b", Tensor::zeros({4}), false);
    CHECK(count_parameters(ps).total == 40);

    // dense L -> 2 with bias: 2L + 2
    ParamStore ps2;
    const std::size_t L = 37;
    ps2.add("w", Tensor::zeros({L, 2}), false);
    ps2.add("b", Tensor::zeros({2}), true);
    CHECK(count_parameters(ps2).total == 2 * L + 2);
    CHECK(count_parameters(ps2).trainable == 2 * L);

    // small encoder, by hand: d0=4, n=2, input 16x16, L=8
    // cell0: 3*(9*1*4+4) = 120 ; cell1 (cin=12): 3*(9*12*8+8) = 2616
    // flatten 4*4*24 = 384 ; fc: 384*8+8 = 3080 ; total 5816
    ArchSpec spec;
    spec.d0 = 4;
    spec.n_cells = 2;
    spec.fc_neurons = 8;
    CelmModel m = build_encoder(spec, 3, 16, 16, 1);
    CHECK(count_parameters(m.params).total == 5816);
    CHECK(count_parameters(m.params).trainable == 0);  // all frozen
}

TEST_CASE("paper-scale encoder conv stack parameter count") {
    // d0=16, n=5, no dense projection: the cell stack alone carries
    // 3,527,040 parameters (kernels + biases).
    ArchSpec spec;
    spec.pooling = Pooling::Max;
    spec.d0 = 16;
    spec.n_cells = 5;
    spec.activation = ActKind::ELU;
    spec.init = InitScheme::Uniform;  // uniform: cheaper to build than QR here
    spec.fc_neurons = 0;
    CelmModel m = build_encoder(spec, 1, 128, 128, 1);
    CHECK(count_parameters(m.params).total == 3527040);
}

TEST_CASE("orthogonal kernels from build_encoder satisfy the invariant") {
    ArchSpec spec;
    spec.d0 = 4;
    spec.n_cells = 1;
    spec.init = InitScheme::Orthogonal;
    spec.fc_neurons = 0;
    CelmModel m = build_encoder(spec, 9, 8, 8, 1);
    const Tensor& k = m.params.at("enc.cell0.rate1.kernel");  // 3x3x1x4 -> 9x4
    Eigen::Map<const MatRM> km(k.data.data(), 9, 4);
    CHECK(((km.transpose() * km) - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("regression head is trainable and predictions have the right shape") {
    ArchSpec spec;
    spec.d0 = 2;
    spec.n_cells = 1;
    spec.fc_neurons = 6;
    CelmModel m = build_encoder(spec, 5, 8, 8, 1);
    add_regression_head(m, 6);
    CHECK(m.has_head());
    CHECK_FALSE(m.params.frozen("out.weight"));
    CHECK(count_parameters(m.params).trainable == 6 * 2 + 2);

    Rng r(7);
    Tensor batch = Tensor::zeros({3, 8, 8, 1});
    for (double& v : batch.data) v = r.uniform();
    Tensor pred = predict_cob_normalized(m, batch);
    REQUIRE(pred.shape == std::vector<std::size_t>{3, 2});
    Tensor pred2 = predict_cob_normalized(m, batch, 2);
    CHECK(pred.data == pred2.data);  // batching does not change results
}
