#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "boulderseg/arch.hpp"
#include "boulderseg/common.hpp"
#include "boulderseg/graph.hpp"
#include "boulderseg/ops.hpp"
#include "boulderseg/rng.hpp"
#include "boulderseg/tensor.hpp"

namespace bseg {

// ---------------------------------------------------------------------------
// Parameter store
// ---------------------------------------------------------------------------

struct ParamEntry {
    std::string name;
    Tensor value;
    bool frozen = false;
};

// Ordered, named parameter set. Order is insertion order and is part of the
// checkpoint contract.
class ParamStore {
public:
    void add(std::string name, Tensor value, bool frozen) {
        check_arg(index_.emplace(name, entries_.size()).second, "duplicate parameter: " + name);
        entries_.push_back({std::move(name), std::move(value), frozen});
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Tensor& at(const std::string& name) { return entries_[find(name)].value; }
    const Tensor& at(const std::string& name) const { return entries_[find(name)].value; }
    bool frozen(const std::string& name) const { return entries_[find(name)].frozen; }

    void set_frozen(const std::string& name, bool f) { entries_[find(name)].frozen = f; }
    void set_all_frozen(bool f) {
        for (auto& e : entries_) e.frozen = f;
    }

    void remove(const std::string& name) {
        const std::size_t i = find(name);
        entries_.erase(entries_.begin() + static_cast<std::ptrdiff_t>(i));
        index_.clear();
        for (std::size_t j = 0; j < entries_.size(); ++j) index_[entries_[j].name] = j;
    }

    const std::vector<ParamEntry>& entries() const { return entries_; }
    std::vector<ParamEntry>& entries() { return entries_; }

    std::size_t total_params() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.value.size();
        return n;
    }
    std::size_t trainable_params() const {
        std::size_t n = 0;
        for (const auto& e : entries_)
            if (!e.frozen) n += e.value.size();
        return n;
    }

    // FNV-1a over the raw bytes of the selected subset, in entry order.
    std::uint64_t byte_hash(bool frozen_only = false) const {
        std::uint64_t h = 1469598103934665603ull;
        for (const auto& e : entries_) {
            if (frozen_only && !e.frozen) continue;
            const unsigned char* p = reinterpret_cast<const unsigned char*>(e.value.data.data());
            const std::size_t nbytes = e.value.data.size() * sizeof(double);
            for (std::size_t i = 0; i < nbytes; ++i) {
                h ^= p[i];
                h *= 1099511628211ull;
            }
        }
        return h;
    }

private:
    std::size_t find(const std::string& name) const {
        auto it = index_.find(name);
        check_arg(it != index_.end(), "unknown parameter: " + name);
        return it->second;
    }

    std::vector<ParamEntry> entries_;
    std::map<std::string, std::size_t> index_;
};

// Total / trainable scalar parameter counts, biases included.
struct ParamCount {
    std::size_t total = 0;
    std::size_t trainable = 0;
};

inline ParamCount count_parameters(const ParamStore& params) {
    return {params.total_params(), params.trainable_params()};
}

// ---------------------------------------------------------------------------
// Encoder model
// ---------------------------------------------------------------------------

// Hierarchical pooling encoder: a sequence of cells, each running three
// parallel dilated 3x3 convolutions (rates 1, 2, 3) at the cell's branch
// depth, concatenated in rate order, then activation, then 2x2 pooling.
// After the last cell the feature map is flattened; an optional random dense
// projection to fc_neurons follows. The output stage is either the solved
// ridge matrix ("out.beta", no bias) or a trainable dense head
// ("out.weight"/"out.bias").
struct CelmModel {
    ArchSpec spec;
    std::size_t input_h = 128;
    std::size_t input_w = 128;
    std::size_t input_c = 1;
    ParamStore params;

    std::size_t flatten_dim() const {
        const std::size_t s = input_h >> spec.n_cells;
        return s * (input_w >> spec.n_cells) * static_cast<std::size_t>(spec.cell_out_channels(spec.n_cells - 1));
    }
    // Width of the hidden-layer output matrix H.
    std::size_t hidden_dim() const {
        return spec.fc_neurons > 0 ? static_cast<std::size_t>(spec.fc_neurons) : flatten_dim();
    }
    bool has_beta() const { return params.has("out.beta"); }
    bool has_head() const { return params.has("out.weight"); }
};

namespace detail {

inline std::uint64_t param_seed(std::uint64_t seed, const std::string& name) {
    return Rng::stream(seed, name).next_u64();
}

// Kernels follow the spec'd scheme; biases are drawn uniform in (-1, 1) from
// their own stream ("set randomly" per the training paradigm).
inline void add_conv_params(ParamStore& ps, const std::string& prefix, std::size_t cin, std::size_t cout,
                            InitScheme scheme, std::uint64_t seed, bool frozen, std::size_t k = 3) {
    Tensor kernel = init_kernel({k, k, cin, cout}, {scheme, param_seed(seed, prefix + ".kernel")});
    ps.add(prefix + ".kernel", std::move(kernel), frozen);
    Rng rb = Rng::stream(param_seed(seed, prefix + ".bias"), "init");
    Tensor bias = Tensor::zeros({cout});
    for (double& v : bias.data) v = rb.uniform(-1.0, 1.0);
    ps.add(prefix + ".bias", std::move(bias), frozen);
}

}  // namespace detail

// Builds a frozen-random encoder for the given architecture point. All cell
// kernels and biases plus the optional dense projection are initialized from
// (spec.init, seed, run_index) and marked frozen.
inline CelmModel build_encoder(const ArchSpec& spec, std::uint64_t seed, std::size_t input_h = 128,
                               std::size_t input_w = 128, std::size_t input_c = 1) {
    check_arg(spec.d0 >= 1 && spec.n_cells >= 1, "build_encoder: invalid spec");
    check_arg(spec.fc_neurons >= 0, "build_encoder: fc_neurons must be >= 0");
    const std::size_t div = std::size_t(1) << spec.n_cells;
    if (input_h % div != 0 || input_w % div != 0 || (input_h >> (spec.n_cells - 1)) < 2 ||
        (input_w >> (spec.n_cells - 1)) < 2) {
        throw std::invalid_argument("build_encoder: input " + std::to_string(input_h) + "x" +
                                    std::to_string(input_w) + " exhausts spatially before " +
                                    std::to_string(spec.n_cells) + " pooling stages");
    }

    CelmModel m;
    m.spec = spec;
    m.input_h = input_h;
    m.input_w = input_w;
    m.input_c = input_c;

    const std::uint64_t run_seed = Rng::stream(seed, "encoder", static_cast<std::uint64_t>(spec.run_index)).next_u64();
    std::size_t cin = input_c;
    for (int i = 0; i < spec.n_cells; ++i) {
        const std::size_t d = static_cast<std::size_t>(spec.branch_depth(i));
        for (int r : ArchSpec::kDilationRates) {
            detail::add_conv_params(m.params, "enc.cell" + std::to_string(i) + ".rate" + std::to_string(r), cin,
                                    d, spec.init, run_seed, /*frozen=*/true);
        }
        cin = 3 * d;
    }
    if (spec.fc_neurons > 0) {
        const std::size_t fin = m.flatten_dim();
        const std::size_t fout = static_cast<std::size_t>(spec.fc_neurons);
        Tensor w = init_kernel({fin, fout}, {spec.init, detail::param_seed(run_seed, "enc.fc.weight")});
        m.params.add("enc.fc.weight", std::move(w), true);
        Rng rb = Rng::stream(detail::param_seed(run_seed, "enc.fc.bias"), "init");
        Tensor b = Tensor::zeros({fout});
        for (double& v : b.data) v = rb.uniform(-1.0, 1.0);
        m.params.add("enc.fc.bias", std::move(b), true);
    }
    return m;
}

// Adds a fresh trainable dense head (hidden -> 2 outputs with bias). Glorot
// uniform weights, zero bias.
inline void add_regression_head(CelmModel& m, std::uint64_t seed, std::size_t outputs = 2) {
    check_arg(!m.has_head(), "model already has a head");
    const std::size_t l = m.hidden_dim();
    Rng r = Rng::stream(seed, "head");
    const double lim = std::sqrt(6.0 / static_cast<double>(l + outputs));
    Tensor w = Tensor::zeros({l, outputs});
    for (double& v : w.data) v = r.uniform(-lim, lim);
    m.params.add("out.weight", std::move(w), false);
    m.params.add("out.bias", Tensor::zeros({outputs}), false);
}

// ---------------------------------------------------------------------------
// Graph wiring
// ---------------------------------------------------------------------------

// Runs the cell stack. When skips is non-null it receives, per cell, the node
// id of the activated (pre-pooling) tensor, in cell order.
inline int encoder_cells_forward(Graph& g, const ParamStore& ps, const ArchSpec& spec, int x,
                                 const std::string& prefix = "enc.", std::vector<int>* skips = nullptr) {
    const Activation act{spec.activation};
    for (int i = 0; i < spec.n_cells; ++i) {
        std::vector<int> branches;
        for (int r : ArchSpec::kDilationRates) {
            const std::string base = prefix + "cell" + std::to_string(i) + ".rate" + std::to_string(r);
            int k = g.param(base + ".kernel", ps.at(base + ".kernel"), ps.frozen(base + ".kernel"));
            int b = g.param(base + ".bias", ps.at(base + ".bias"), ps.frozen(base + ".bias"));
            branches.push_back(g.bias_add(g.conv2d(x, k, r), b));
        }
        int cat = g.concat(branches);
        int a = g.activation(cat, act);
        if (skips) skips->push_back(a);
        x = g.pool2d(a, spec.pooling);
    }
    return x;
}

// Cells -> flatten -> optional dense projection; dropout (train only) sits in
// the fully connected layer. Returns the hidden-layer node (rows of H).
inline int encoder_hidden_forward(Graph& g, const CelmModel& m, int x, bool training = false,
                                  double dropout_rate = 0.0, Rng* dropout_rng = nullptr) {
    int h = g.flatten2d(encoder_cells_forward(g, m.params, m.spec, x));
    if (m.spec.fc_neurons > 0) {
        int w = g.param("enc.fc.weight", m.params.at("enc.fc.weight"), m.params.frozen("enc.fc.weight"));
        int b = g.param("enc.fc.bias", m.params.at("enc.fc.bias"), m.params.frozen("enc.fc.bias"));
        h = g.bias_add(g.dense(h, w), b);
    }
    if (training && dropout_rate > 0.0) {
        check_arg(dropout_rng != nullptr, "dropout requires an rng");
        h = g.dropout(h, dropout_rate, *dropout_rng);
    }
    return h;
}

// Hidden -> output. Uses the trainable head when present, otherwise the
// solved ridge matrix.
inline int encoder_output_forward(Graph& g, const CelmModel& m, int hidden) {
    if (m.has_head()) {
        int w = g.param("out.weight", m.params.at("out.weight"), m.params.frozen("out.weight"));
        int b = g.param("out.bias", m.params.at("out.bias"), m.params.frozen("out.bias"));
        return g.bias_add(g.dense(hidden, w), b);
    }
    check_arg(m.has_beta(), "encoder has neither a head nor a ridge solution");
    int beta = g.param("out.beta", m.params.at("out.beta"), m.params.frozen("out.beta"));
    return g.dense(hidden, beta);
}

// Inference-mode CoB prediction in normalized [0,1] image coordinates.
// Streams in batches to bound graph memory.
inline Tensor predict_cob_normalized(const CelmModel& m, const Tensor& batch, std::size_t batch_size = 64) {
    const std::size_t n = batch.shape[0];
    Tensor out;
    for (std::size_t i0 = 0; i0 < n; i0 += batch_size) {
        const std::size_t i1 = std::min(n, i0 + batch_size);
        Graph g(false);
        int x = g.input(slice_samples(batch, i0, i1));
        const Tensor& p = g.value(encoder_output_forward(g, m, encoder_hidden_forward(g, m, x)));
        if (out.data.empty()) out = Tensor::zeros({n, p.shape[1]});
        for (std::size_t r = 0; r < i1 - i0; ++r)
            for (std::size_t c = 0; c < p.shape[1]; ++c) out.at(i0 + r, c) = p.at(r, c);
    }
    return out;
}

}  // namespace bseg
