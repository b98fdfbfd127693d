#pragma once

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "boulderseg/common.hpp"
#include "boulderseg/losses.hpp"
#include "boulderseg/ops.hpp"
#include "boulderseg/rng.hpp"
#include "boulderseg/tensor.hpp"

namespace bseg {

using GradMap = std::map<std::string, Tensor>;

// Reverse-mode tape over whole tensors. Each op computes its value eagerly
// and, when any parent requires gradients, registers a closure that pulls the
// upstream gradient and accumulates into its parents. Parameters are leaves
// identified by name; frozen parameters never require gradients and are
// absent from the gradient map.
//
// A graph is built per mini-batch and discarded; with grads disabled it
// degrades to a plain forward evaluator.
class Graph {
public:
    explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    int input(Tensor v) { return add_node(std::move(v), false); }

    // The parameter value is referenced, not copied; the store must outlive
    // the graph. Rvalues are moved in and owned.
    int param(const std::string& name, const Tensor& value, bool frozen) {
        const int id = add_ref_node(&value, grad_enabled_ && !frozen);
        return register_param(id, name);
    }
    int param(const std::string& name, Tensor&& value, bool frozen) {
        const int id = add_node(std::move(value), grad_enabled_ && !frozen);
        return register_param(id, name);
    }

    const Tensor& value(int id) const { return *nodes_[static_cast<std::size_t>(id)].val; }

    // -- ops ----------------------------------------------------------------

    int conv2d(int x, int k, int dilation) {
        int id = add_node(bseg::conv2d(value(x), value(k), dilation), needs(x) || needs(k));
        if (nodes_[id].needs_grad) {
            nodes_[id].backward = [this, id, x, k, dilation] {
                Tensor* gi = needs(x) ? &grad_buf(x, value(x).shape) : nullptr;
                Tensor* gk = needs(k) ? &grad_buf(k, value(k).shape) : nullptr;
                conv2d_backward(value(x), value(k), dilation, grad(id), gi, gk);
            };
        }
        return id;
    }

    int bias_add(int x, int b) {
        int id = add_node(bseg::bias_add(value(x), value(b)), needs(x) || needs(b));
        if (nodes_[id].needs_grad) {
            nodes_[id].backward = [this, id, x, b] {
                if (needs(x)) accumulate(x, grad(id));
                if (needs(b)) accumulate(b, bias_backward(grad(id), value(b).shape[0]));
            };
        }
        return id;
    }

    int dense(int x, int w) {
        int id = add_node(bseg::dense(value(x), value(w)), needs(x) || needs(w));
        if (nodes_[id].needs_grad) {
            nodes_[id].backward = [this, id, x, w] {
                Tensor* gx = needs(x) ? &grad_buf(x, value(x).shape) : nullptr;
                Tensor* gw = needs(w) ? &grad_buf(w, value(w).shape) : nullptr;
                dense_backward(value(x), value(w), grad(id), gx, gw);
            };
        }
        return id;
    }

    int activation(int x, Activation act) {
        int id = add_node(apply_activation(value(x), act), needs(x));
        if (nodes_[id].needs_grad) {
            nodes_[id].backward = [this, id, x, act] {
                accumulate(x, activation_backward(value(x), value(id), grad(id), act));
            };
        }
        return id;
    }

    int pool2d(int x, Pooling p) {
        const bool ng = needs(x);
        auto argmax = std::make_shared<std::vector<std::uint32_t>>();
        int id = add_node(bseg::pool2d(value(x), p, (ng && p == Pooling::Max) ? argmax.get() : nullptr), ng);
        if (ng) {
            nodes_[id].backward = [this, id, x, p, argmax] {
                accumulate(x, pool2d_backward(value(x), p, grad(id), *argmax));
            };
        }
        return id;
    }

    int upsample2x(int x) {
        int id = add_node(bseg::upsample2x(value(x)), needs(x));
        if (nodes_[id].needs_grad) {
            nodes_[id].backward = [this, id, x] { accumulate(x, upsample2x_backward(value(x), grad(id))); };
        }
        return id;
    }

    int concat(const std::vector<int>& parts) {
        std::vector<const Tensor*> vals;
        bool ng = false;
        for (int p : parts) {
            vals.push_back(&value(p));
            ng = ng || needs(p);
        }
        int id = add_node(concat_channels(vals), ng);
        if (ng) {
            std::vector<int> ps = parts;
            nodes_[id].backward = [this, id, ps] {
                std::size_t coff = 0;
                for (int p : ps) {
                    const std::size_t c = value(p).shape[3];
                    if (needs(p)) accumulate(p, concat_backward_slice(grad(id), coff, c));
                    coff += c;
                }
            };
        }
        return id;
    }

    // (N,H,W,C) -> (N, H*W*C); row-major layout makes this a pure reshape.
    int flatten2d(int x) {
        const Tensor& v = value(x);
        check_arg(v.rank() == 4, "flatten2d: input must be 4-D");
        return reshape(x, {v.shape[0], v.shape[1] * v.shape[2] * v.shape[3]});
    }

    int reshape(int x, std::vector<std::size_t> shape) {
        int id = add_node(value(x).reshaped(shape), needs(x));
        if (nodes_[id].needs_grad) {
            nodes_[id].backward = [this, id, x] { accumulate(x, grad(id).reshaped(value(x).shape)); };
        }
        return id;
    }

    // Inverted dropout: kept units scale by 1/(1-rate) at train time so the
    // inference pass needs no rescaling.
    int dropout(int x, double rate, Rng& rng) {
        check_arg(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0,1)");
        if (rate == 0.0) return x;
        const Tensor& v = value(x);
        auto mask = std::make_shared<std::vector<double>>(v.size());
        const double scale = 1.0 / (1.0 - rate);
        Tensor out = v;
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double m = rng.uniform() < rate ? 0.0 : scale;
            (*mask)[i] = m;
            out.data[i] *= m;
        }
        int id = add_node(std::move(out), needs(x));
        if (nodes_[id].needs_grad) {
            nodes_[id].backward = [this, id, x, mask] {
                Tensor g = grad(id);
                for (std::size_t i = 0; i < g.size(); ++i) g.data[i] *= (*mask)[i];
                accumulate(x, std::move(g));
            };
        }
        return id;
    }

    int scale(int x, double s) {
        Tensor out = value(x);
        for (double& v : out.data) v *= s;
        int id = add_node(std::move(out), needs(x));
        if (nodes_[id].needs_grad) {
            nodes_[id].backward = [this, id, x, s] {
                Tensor g = grad(id);
                for (double& v : g.data) v *= s;
                accumulate(x, std::move(g));
            };
        }
        return id;
    }

    int mse_loss(int pred, Tensor target) {
        check_same_shape(value(pred), target, "mse_loss");
        auto tgt = std::make_shared<Tensor>(std::move(target));
        int id = add_node(Tensor::scalar(mse_value(value(pred), *tgt)), needs(pred));
        if (nodes_[id].needs_grad) {
            nodes_[id].backward = [this, id, pred, tgt] {
                const Tensor& p = value(pred);
                const double s = 2.0 * grad(id).data[0] / static_cast<double>(p.size());
                Tensor g = Tensor::zeros(p.shape);
                for (std::size_t i = 0; i < p.size(); ++i) g.data[i] = s * (p.data[i] - tgt->data[i]);
                accumulate(pred, std::move(g));
            };
        }
        return id;
    }

    int wscce_loss(int logits, Tensor target_mask, ClassWeights weights) {
        auto tgt = std::make_shared<Tensor>(std::move(target_mask));
        auto wts = std::make_shared<ClassWeights>(std::move(weights));
        const bool ng = needs(logits);
        auto probs = std::make_shared<Tensor>();
        const double loss = detail::wscce_forward(value(logits), *tgt, *wts, ng ? probs.get() : nullptr);
        int id = add_node(Tensor::scalar(loss), ng);
        if (ng) {
            nodes_[id].backward = [this, id, logits, tgt, wts, probs] {
                accumulate(logits, wscce_backward(*probs, *tgt, *wts, grad(id).data[0]));
            };
        }
        return id;
    }

    // -- reverse pass ---------------------------------------------------------

    // Runs the tape backwards from a scalar loss and returns gradients for
    // every non-frozen parameter (zeros when disconnected from the loss).
    GradMap backward(int loss) {
        check_arg(value(loss).size() == 1, "backward: loss must be scalar, got " + value(loss).shape_str());
        grads_.assign(nodes_.size(), Tensor());
        grads_[static_cast<std::size_t>(loss)] = Tensor::full(value(loss).shape, 1.0);
        for (int id = loss; id >= 0; --id) {
            Node& n = nodes_[static_cast<std::size_t>(id)];
            if (!n.needs_grad || !n.backward) continue;
            if (grads_[static_cast<std::size_t>(id)].data.empty()) continue;  // not reached from loss
            n.backward();
        }
        GradMap out;
        for (const auto& [id, name] : param_nodes_) {
            Tensor& g = grads_[static_cast<std::size_t>(id)];
            out[name] = g.data.empty() ? Tensor::zeros(value(id).shape) : std::move(g);
        }
        grads_.clear();
        return out;
    }

    bool grad_enabled() const { return grad_enabled_; }

private:
    struct Node {
        Tensor owned;
        const Tensor* val = nullptr;
        bool needs_grad = false;
        std::string param_name;
        std::function<void()> backward;
    };

    int register_param(int id, const std::string& name) {
        check_arg(!name.empty(), "param: empty name");
        check_arg(seen_params_.insert(name).second, "param added twice to one graph: " + name);
        nodes_[static_cast<std::size_t>(id)].param_name = name;
        if (nodes_[static_cast<std::size_t>(id)].needs_grad) param_nodes_.emplace_back(id, name);
        return id;
    }

    bool needs(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

    const Tensor& grad(int id) const { return grads_[static_cast<std::size_t>(id)]; }

    Tensor& grad_buf(int id, const std::vector<std::size_t>& shape) {
        Tensor& g = grads_[static_cast<std::size_t>(id)];
        if (g.data.empty()) g = Tensor::zeros(shape);
        return g;
    }

    void accumulate(int id, Tensor g) {
        Tensor& buf = grads_[static_cast<std::size_t>(id)];
        if (buf.data.empty()) {
            buf = std::move(g);
            return;
        }
        for (std::size_t i = 0; i < buf.size(); ++i) buf.data[i] += g.data[i];
    }

    // Nodes live in a deque so value pointers stay stable as the tape grows.
    int add_node(Tensor v, bool needs_grad) {
        Node n;
        n.owned = std::move(v);
        n.needs_grad = needs_grad && grad_enabled_;
        nodes_.push_back(std::move(n));
        nodes_.back().val = &nodes_.back().owned;
        return static_cast<int>(nodes_.size()) - 1;
    }

    int add_ref_node(const Tensor* v, bool needs_grad) {
        Node n;
        n.val = v;
        n.needs_grad = needs_grad;
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    bool grad_enabled_;
    std::deque<Node> nodes_;
    std::vector<Tensor> grads_;
    std::vector<std::pair<int, std::string>> param_nodes_;
    std::unordered_set<std::string> seen_params_;
};

}  // namespace bseg
