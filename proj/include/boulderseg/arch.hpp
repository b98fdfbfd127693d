#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "boulderseg/common.hpp"
#include "boulderseg/ops.hpp"

namespace bseg {

// One point of the encoder design space. Kernel size, depth expansion and
// the dilation-rate set are fixed by the cell grammar; everything else is
// swept. fc_neurons == 0 means the hidden layer is the flattened feature
// map itself (no random dense projection).
struct ArchSpec {
    Pooling pooling = Pooling::Max;
    int d0 = 4;
    int n_cells = 3;
    ActKind activation = ActKind::ReLU;
    InitScheme init = InitScheme::Uniform;
    int fc_neurons = 0;
    int run_index = 0;

    static constexpr int kKernelSize = 3;
    static constexpr int kExpansion = 2;
    static constexpr int kDilationRates[3] = {1, 2, 3};

    // Per-branch depth of cell i; the concatenated depth is 3x this.
    int branch_depth(int cell) const {
        int d = d0;
        for (int i = 0; i < cell; ++i) d *= kExpansion;
        return d;
    }
    int cell_out_channels(int cell) const { return 3 * branch_depth(cell); }

    std::string id() const {
        std::ostringstream os;
        os << "P=" << to_string(pooling) << ",d0=" << d0 << ",n=" << n_cells << ",A=" << to_string(activation)
           << ",K=" << to_string(init) << ",L=" << fc_neurons << ",r=" << run_index;
        return os.str();
    }
};

// Grid definition: d0 values carry their own admissible cell counts, as the
// hyper-parameter table pairs them.
struct GridConfig {
    std::vector<Pooling> pooling;
    std::vector<std::pair<int, std::vector<int>>> depth_cells;
    std::vector<ActKind> activations;
    std::vector<InitScheme> inits;
    int n_runs = 3;
    int fc_neurons = 0;

    // The full published search space: 2 x (3x3) x 7 x 3 x 3 = 1134 points.
    static GridConfig table2() {
        GridConfig g;
        g.pooling = {Pooling::Mean, Pooling::Max};
        g.depth_cells = {{4, {3, 4, 5}}, {8, {4, 5, 6}}, {16, {5, 6, 7}}};
        g.activations = {ActKind::NReLU, ActKind::ReLU, ActKind::LReLU, ActKind::ELU,
                         ActKind::Tanh,  ActKind::Sigmoid, ActKind::None};
        g.inits = {InitScheme::Uniform, InitScheme::Normal, InitScheme::Orthogonal};
        g.n_runs = 3;
        g.fc_neurons = 0;
        return g;
    }
};

namespace detail {
inline int log2_exact(int v) {
    int p = 0;
    while ((1 << p) < v) ++p;
    return ((1 << p) == v) ? p : -1;
}
}  // namespace detail

inline void validate_grid(const GridConfig& g) {
    check_arg(!g.pooling.empty() && !g.depth_cells.empty() && !g.activations.empty() && !g.inits.empty(),
              "grid: every hyper-parameter list must be non-empty");
    check_arg(g.n_runs >= 1, "grid: n_runs must be >= 1");
    check_arg(g.fc_neurons >= 0, "grid: fc_neurons must be >= 0");
    for (const auto& [d0, ns] : g.depth_cells) {
        const int p = detail::log2_exact(d0);
        check_arg(d0 >= 2 && p > 0, "grid: d0 must be a power of two >= 2, got " + std::to_string(d0));
        check_arg(!ns.empty(), "grid: empty cell-count list for d0=" + std::to_string(d0));
        for (int n : ns) {
            // Pairing rule of the hyper-parameter table: n in {log2(d0)+1 .. +3}.
            if (n < p + 1 || n > p + 3) {
                throw std::invalid_argument("grid: cell count n=" + std::to_string(n) +
                                            " is not paired with d0=" + std::to_string(d0));
            }
        }
    }
}

// Deterministic lexicographic enumeration over (pooling, d0, n, activation,
// init, run_index), in table order.
inline std::vector<ArchSpec> enumerate_grid(const GridConfig& g) {
    validate_grid(g);
    std::vector<ArchSpec> out;
    for (Pooling p : g.pooling) {
        for (const auto& [d0, ns] : g.depth_cells) {
            for (int n : ns) {
                for (ActKind a : g.activations) {
                    for (InitScheme k : g.inits) {
                        for (int r = 0; r < g.n_runs; ++r) {
                            ArchSpec s;
                            s.pooling = p;
                            s.d0 = d0;
                            s.n_cells = n;
                            s.activation = a;
                            s.init = k;
                            s.fc_neurons = g.fc_neurons;
                            s.run_index = r;
                            out.push_back(s);
                        }
                    }
                }
            }
        }
    }
    return out;
}

}  // namespace bseg
