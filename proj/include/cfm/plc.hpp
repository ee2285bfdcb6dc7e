// Progressive learning controller: channel-importance scoring from the
// triplet GAP responses, EMA tracking of the importance vector, the cosine
// drop schedule, channel masking with 1/(1-rho) rescale, and mask-change
// telemetry.

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "cfm/tensor.hpp"

namespace cfm {

// M = S_AP - S_AN per channel: small anchor-positive response difference and
// large anchor-negative difference mark a discriminative channel, so large
// values are the unimportant ones.
inline std::vector<double> channel_importance(const Tensor& f_anc, const Tensor& f_pos,
                                              const Tensor& f_neg) {
    if (f_anc.shape() != f_pos.shape() || f_anc.shape() != f_neg.shape())
        throw std::invalid_argument("channel_importance: feature shapes differ");
    if (f_anc.rank() != 3)
        throw std::invalid_argument("channel_importance: expected [C,H,W], got " +
                                    shape_str(f_anc.shape()));
    NoGradGuard no_grad;
    Tensor ga = global_average_pool(f_anc);
    Tensor gp = global_average_pool(f_pos);
    Tensor gn = global_average_pool(f_neg);
    std::size_t c = ga.numel();
    std::vector<double> m(c);
    for (std::size_t i = 0; i < c; ++i)
        m[i] = std::fabs(ga.values()[i] - gp.values()[i]) -
               std::fabs(ga.values()[i] - gn.values()[i]);
    return m;
}

// rho = 0.5 cos(pi * e_cur / e_total) * [e_cur < e_total / 2]
inline double drop_ratio(int e_cur, int e_total) {
    if (e_total <= 0)
        throw std::invalid_argument("drop_ratio: e_total must be positive");
    if (e_cur < 0 || e_cur >= e_total)
        throw std::invalid_argument("drop_ratio: e_cur out of [0, e_total)");
    if (2 * e_cur >= e_total) return 0.0;
    constexpr double pi = 3.14159265358979323846;
    return 0.5 * std::cos(pi * static_cast<double>(e_cur) / static_cast<double>(e_total));
}

struct PlcState {
    std::vector<double> m_star;       // EMA of the importance vector
    double beta = 0.99;
    bool initialized = false;
    double rho = 0.0;                 // current drop ratio
    std::vector<bool> current_mask;   // true = channel kept
    bool invert_importance = false;   // ablation: treat small M* as unimportant

    std::size_t drop_count(std::size_t channels) const {
        return static_cast<std::size_t>(std::floor(static_cast<double>(channels) * rho));
    }
};

// First call adopts the batch mean; later calls apply the EMA.
inline void update_importance(PlcState& state, const std::vector<double>& m_batch_mean) {
    if (!state.initialized) {
        state.m_star = m_batch_mean;
        state.initialized = true;
        return;
    }
    if (state.m_star.size() != m_batch_mean.size())
        throw std::invalid_argument("update_importance: channel count changed");
    for (std::size_t i = 0; i < state.m_star.size(); ++i)
        state.m_star[i] = state.beta * state.m_star[i] + (1.0 - state.beta) * m_batch_mean[i];
}

// Recomputes the keep/drop mask for the current m_star and rho. Channels with
// the largest m_star are dropped; ties resolve toward the lower channel index
// (stable ascending sort).
inline std::vector<bool> compute_mask(const PlcState& state) {
    if (!state.initialized)
        throw std::logic_error("compute_mask: importance vector not initialized");
    std::size_t c = state.m_star.size();
    std::size_t k = state.drop_count(c);
    std::vector<bool> keep(c, true);
    if (k == 0) return keep;
    std::vector<std::size_t> order = sort_indices(
        Tensor::from_vector({c}, state.m_star));
    if (state.invert_importance) {
        for (std::size_t i = 0; i < k; ++i) keep[order[i]] = false;
    } else {
        for (std::size_t i = 0; i < k; ++i) keep[order[c - 1 - i]] = false;
    }
    return keep;
}

// F-hat: dropped channels zeroed, survivors scaled by 1/(1-rho). rho = 0 is
// the bit-exact identity. Differentiable as a constant gate.
inline Tensor apply_mask(const Tensor& f, const PlcState& state) {
    if (state.rho == 0.0) return f;
    if (f.rank() != 3)
        throw std::invalid_argument("apply_mask: expected [C,H,W], got " +
                                    shape_str(f.shape()));
    std::size_t c = f.shape()[0];
    if (state.current_mask.size() != c)
        throw std::invalid_argument("apply_mask: mask length " +
                                    std::to_string(state.current_mask.size()) +
                                    " vs C=" + std::to_string(c));
    std::vector<double> gate(c);
    double keep_scale = 1.0 / (1.0 - state.rho);
    for (std::size_t i = 0; i < c; ++i) gate[i] = state.current_mask[i] ? keep_scale : 0.0;
    return channel_mask_scale(f, gate);
}

// |dropped(new) \ dropped(prev)| / max(1, dropped count).
inline double change_ratio(const std::vector<bool>& prev_mask,
                           const std::vector<bool>& new_mask) {
    if (prev_mask.size() != new_mask.size())
        throw std::invalid_argument("change_ratio: mask lengths differ");
    std::size_t prev_dropped = 0, new_dropped = 0, changed = 0;
    for (std::size_t i = 0; i < prev_mask.size(); ++i) {
        if (!prev_mask[i]) ++prev_dropped;
        if (!new_mask[i]) {
            ++new_dropped;
            if (prev_mask[i]) ++changed;
        }
    }
    if (prev_dropped != new_dropped)
        throw std::invalid_argument("change_ratio: drop counts differ (" +
                                    std::to_string(prev_dropped) + " vs " +
                                    std::to_string(new_dropped) + ")");
    return static_cast<double>(changed) /
           static_cast<double>(std::max<std::size_t>(1, new_dropped));
}

}  // namespace cfm
