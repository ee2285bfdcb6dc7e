// Adam with the L2 penalty folded into the gradient as an additive term.

#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "cfm/tensor.hpp"

namespace cfm {

struct AdamState {
    double lr = 1e-3;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t step = 0;
    std::vector<std::vector<double>> m;  // first moments, one buffer per parameter
    std::vector<std::vector<double>> v;  // second moments

    void init(const std::vector<Tensor>& params) {
        m.clear();
        v.clear();
        step = 0;
        for (const auto& p : params) {
            m.emplace_back(p.numel(), 0.0);
            v.emplace_back(p.numel(), 0.0);
        }
    }
};

inline void adam_step(std::vector<Tensor>& params, AdamState& state) {
    if (state.m.size() != params.size() || state.v.size() != params.size())
        throw std::invalid_argument("adam_step: state not initialized for this parameter set");
    ++state.step;
    double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& p = params[k];
        if (!p.has_grad())
            throw std::invalid_argument("adam_step: parameter " + std::to_string(k) +
                                        " has no gradient");
        if (state.m[k].size() != p.numel())
            throw std::invalid_argument("adam_step: moment shape mismatch at parameter " +
                                        std::to_string(k));
        const auto& g = p.grad();
        auto& val = p.mutable_values();
        auto& m = state.m[k];
        auto& v = state.v[k];
        for (std::size_t i = 0; i < val.size(); ++i) {
            double gi = g[i] + state.weight_decay * val[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            val[i] -= state.lr * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

}  // namespace cfm
