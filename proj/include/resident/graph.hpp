#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "resident/tensor.hpp"

namespace resident {

class Graph;
using NodeId = std::size_t;

// One recorded operation. `value` is the saved forward result; `backward_fn`
// reads this node's grad and accumulates into the parents' grads.
struct Node {
    Tensor value;
    Tensor grad;            // same shape as value once touched
    bool has_grad = false;  // grad buffer valid this backward pass
    bool needs_grad = false;
    std::vector<NodeId> parents;
    std::string op;
    std::string param_name;  // non-empty for named parameters
    std::function<void(Graph&, NodeId)> backward_fn;
};

// Reverse-mode tape. Nodes are appended in evaluation order, which is a
// topological order by construction: an op can only reference ids that
// already exist. A single Graph must not be mutated concurrently.
class Graph {
  public:
    NodeId constant(Tensor v, std::string op = "const") {
        return push(std::move(v), false, {}, std::move(op), {}, nullptr);
    }

    NodeId input(Tensor v, std::string op = "input") {
        bool rg = v.requires_grad;
        return push(std::move(v), rg, {}, std::move(op), {}, nullptr);
    }

    NodeId parameter(const std::string& name, Tensor v) {
        if (param_ids_.count(name))
            throw ContractError("duplicate parameter name '" + name + "'");
        v.requires_grad = true;
        NodeId id = push(std::move(v), true, {}, "param", name, nullptr);
        param_ids_.emplace(name, id);
        return id;
    }

    NodeId add_node(Tensor value, std::vector<NodeId> parents, std::string op,
                    std::function<void(Graph&, NodeId)> backward_fn) {
        bool ng = false;
        for (NodeId p : parents) ng = ng || nodes_[p].needs_grad;
        return push(std::move(value), ng, std::move(parents), std::move(op), {},
                    ng ? std::move(backward_fn) : nullptr);
    }

    const Tensor& value(NodeId id) const { return nodes_[id].value; }
    const Node& node(NodeId id) const { return nodes_[id]; }
    std::size_t size() const { return nodes_.size(); }
    bool needs_grad(NodeId id) const { return nodes_[id].needs_grad; }

    // Grad buffer of `id`, allocated and zeroed on first touch in a pass.
    Tensor& grad_buffer(NodeId id) {
        Node& n = nodes_[id];
        if (!n.has_grad) {
            if (n.grad.data.size() == n.value.data.size()) {
                std::fill(n.grad.data.begin(), n.grad.data.end(), 0.0);
                n.grad.shape = n.value.shape;
            } else {
                n.grad = Tensor::zeros(n.value.shape);
            }
            n.has_grad = true;
        }
        return n.grad;
    }

    void accumulate(NodeId id, const Tensor& contrib) {
        Tensor& g = grad_buffer(id);
        for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += contrib.data[i];
    }

    // dLoss/dParam for every registered parameter; parameters the loss does
    // not reach get all-zero gradients. Grads are reset at entry, so calling
    // twice on the same graph gives identical results.
    std::map<std::string, Tensor> backward(NodeId loss) {
        if (loss >= nodes_.size()) throw ContractError("backward: no such node");
        if (!nodes_[loss].value.is_scalar())
            throw ContractError("backward: loss must be scalar, got " +
                                shape_str(nodes_[loss].value.shape));
        for (Node& n : nodes_) n.has_grad = false;
        grad_buffer(loss).data[0] = 1.0;
        for (NodeId id = loss + 1; id-- > 0;) {
            Node& n = nodes_[id];
            if (n.has_grad && n.needs_grad && n.backward_fn) n.backward_fn(*this, id);
        }
        std::map<std::string, Tensor> out;
        for (const auto& [name, id] : param_ids_) {
            const Node& n = nodes_[id];
            out.emplace(name, n.has_grad ? n.grad : Tensor::zeros(n.value.shape));
        }
        return out;
    }

  private:
    NodeId push(Tensor value, bool needs, std::vector<NodeId> parents, std::string op,
                std::string param_name, std::function<void(Graph&, NodeId)> backward_fn) {
        Node n;
        n.value = std::move(value);
        n.needs_grad = needs;
        n.parents = std::move(parents);
        n.op = std::move(op);
        n.param_name = std::move(param_name);
        n.backward_fn = std::move(backward_fn);
        nodes_.push_back(std::move(n));
        return nodes_.size() - 1;
    }

    std::vector<Node> nodes_;
    std::unordered_map<std::string, NodeId> param_ids_;
};

// Builds a scalar-valued graph over the given inputs. Called once for the
// analytic gradient and twice per perturbed entry for the central
// differences, so it must be a pure function of the input values.
using ScalarBuilder = std::function<NodeId(Graph&, const std::vector<NodeId>&)>;

// Central-difference check of reverse-mode gradients. Returns the max over
// all free input entries of |analytic - numeric| / max(|analytic|, |numeric|,
// 1e-12); any NaN in either estimate yields +inf. `free` (optional,
// per-input) marks entries to perturb; constrained entries (e.g. a pinned
// embedding row) are skipped.
inline double finite_difference_check(const ScalarBuilder& build, std::vector<Tensor> inputs,
                                      double eps,
                                      const std::vector<std::vector<bool>>* free = nullptr) {
    if (!(eps > 0)) throw ContractError("finite_difference_check: eps must be positive");

    auto eval = [&](const std::vector<Tensor>& ins) {
        Graph g;
        std::vector<NodeId> ids;
        ids.reserve(ins.size());
        for (std::size_t i = 0; i < ins.size(); ++i)
            ids.push_back(g.parameter("in" + std::to_string(i), ins[i]));
        NodeId s = build(g, ids);
        if (!g.value(s).is_scalar())
            throw ContractError("finite_difference_check: builder must produce a scalar");
        return std::pair<Graph, NodeId>(std::move(g), s);
    };

    auto [g, loss] = eval(inputs);
    auto grads = g.backward(loss);

    double worst = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Tensor& analytic = grads.at("in" + std::to_string(i));
        for (std::size_t e = 0; e < inputs[i].numel(); ++e) {
            if (free && !(*free)[i][e]) continue;
            const double saved = inputs[i].data[e];
            inputs[i].data[e] = saved + eps;
            auto [gp, lp] = eval(inputs);
            const double fp = gp.value(lp).item();
            inputs[i].data[e] = saved - eps;
            auto [gm, lm] = eval(inputs);
            const double fm = gm.value(lm).item();
            inputs[i].data[e] = saved;

            const double numeric = (fp - fm) / (2.0 * eps);
            const double a = analytic.data[e];
            if (std::isnan(a) || std::isnan(numeric))
                return std::numeric_limits<double>::infinity();
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
            worst = std::max(worst, std::abs(a - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace resident
