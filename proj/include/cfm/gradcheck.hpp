// Finite-difference gradient verification for tape-produced losses.

#pragma once

#include <functional>
#include <limits>
#include <string>

#include "cfm/tensor.hpp"

namespace cfm {

struct GradcheckResult {
    bool passed = true;
    double max_rel_err = 0.0;
    std::size_t worst_leaf = 0;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
    std::size_t skipped = 0;
};

// Pred(leaf_index, coord) -> true to skip a coordinate (kink-adjacent points).
using SkipPred = std::function<bool(std::size_t, std::size_t)>;

// Compares tape gradients of f against central differences over a set of
// leaves. Relative error uses a max(1,|analytic|,|numeric|) denominator.
inline GradcheckResult gradcheck_multi(const std::function<Tensor()>& f,
                                       const std::vector<Tensor>& leaves,
                                       double eps = 1e-5, double tol = 1e-4,
                                       const SkipPred& skip = nullptr) {
    Tensor loss = f();
    if (loss.numel() != 1)
        throw std::invalid_argument("gradcheck: f must return a scalar");
    backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(leaves.size());
    for (const auto& leaf : leaves) {
        if (leaf.has_grad()) analytic.push_back(leaf.grad());
        else analytic.emplace_back(leaf.numel(), 0.0);
    }

    GradcheckResult res;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        Tensor leaf = leaves[li];
        for (std::size_t i = 0; i < leaf.numel(); ++i) {
            if (skip && skip(li, i)) {
                ++res.skipped;
                continue;
            }
            double saved = leaf.values()[i];
            leaf.mutable_values()[i] = saved + eps;
            double fp = f().value();
            leaf.mutable_values()[i] = saved - eps;
            double fm = f().value();
            leaf.mutable_values()[i] = saved;
            double numeric = (fp - fm) / (2.0 * eps);
            double a = analytic[li][i];
            double denom = std::max({1.0, std::fabs(a), std::fabs(numeric)});
            double rel = std::fabs(a - numeric) / denom;
            ++res.checked;
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst_leaf = li;
                res.worst_index = i;
            }
        }
    }
    res.passed = res.max_rel_err <= tol;
    return res;
}

inline GradcheckResult gradcheck(const std::function<Tensor(const Tensor&)>& f,
                                 const Tensor& x, double eps = 1e-5, double tol = 1e-4,
                                 const std::function<bool(std::size_t)>& skip_coord = nullptr) {
    SkipPred skip = nullptr;
    if (skip_coord) skip = [&skip_coord](std::size_t, std::size_t i) { return skip_coord(i); };
    return gradcheck_multi([&]() { return f(x); }, {x}, eps, tol, skip);
}

}  // namespace cfm
