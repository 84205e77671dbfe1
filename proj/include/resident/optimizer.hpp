#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "resident/model.hpp"

namespace resident {

// Per-parameter first/second moment accumulators plus the step counter.
struct AdamState {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t t = 0;
    std::map<std::string, Tensor> m, v;
};

// theta <- theta - lr * m_hat / (sqrt(v_hat) + eps), bias-corrected moments.
// Parameters without a gradient entry are left untouched.
inline void adam_step(const std::vector<ParamRef>& params,
                      const std::map<std::string, Tensor>& grads, AdamState& state) {
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (const ParamRef& p : params) {
        auto it = grads.find(p.name);
        if (it == grads.end()) continue;
        const Tensor& g = it->second;
        if (!g.same_shape(*p.tensor))
            throw ContractError("adam_step: gradient shape " + shape_str(g.shape) +
                                " does not match parameter '" + p.name + "' " +
                                shape_str(p.tensor->shape));
        Tensor& m = state.m.try_emplace(p.name, Tensor::zeros(g.shape)).first->second;
        Tensor& v = state.v.try_emplace(p.name, Tensor::zeros(g.shape)).first->second;
        if (!m.same_shape(g) || !v.same_shape(g))
            throw ContractError("adam_step: stale state for '" + p.name + "'");
        for (std::size_t i = 0; i < g.numel(); ++i) {
            const double gi = g.data[i];
            m.data[i] = state.beta1 * m.data[i] + (1.0 - state.beta1) * gi;
            v.data[i] = state.beta2 * v.data[i] + (1.0 - state.beta2) * gi * gi;
            const double mhat = m.data[i] / bc1;
            const double vhat = v.data[i] / bc2;
            p.tensor->data[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

}  // namespace resident
