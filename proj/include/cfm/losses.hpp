// The three objectives: instance similarity-aware hinge on the global
// embeddings, local similarity-aware patch loss with easy-example filtering
// and exponential hard-example weighting, and binary cross-entropy. All are
// built from tape ops so gradients flow to the student side.

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "cfm/tensor.hpp"

namespace cfm {

struct LossConfig {
    double d_ins = 1.2;
    double s_pos = 0.8;
    double s_neg = -0.5;
    double t_mask = 0.25;
    bool uniform_tau = false;  // drop the hard-example weighting (ablation)
    double w_ce = 1.0, w_ins = 1.0, w_loc = 1.0;

    void validate() const {
        if (!(s_pos > s_neg))
            throw std::invalid_argument("LossConfig: s_pos must exceed s_neg");
        if (!(d_ins > 0.0))
            throw std::invalid_argument("LossConfig: d_ins must be positive");
    }
};

// L_ins = max(d_ins + z_anc.z_neg - z_anc.z_pos, 0); inputs are unit vectors.
inline Tensor instance_loss(const Tensor& z_anc, const Tensor& z_pos, const Tensor& z_neg,
                            double d_ins) {
    Tensor margin = Tensor::scalar(d_ins);
    return relu(margin + dot(z_anc, z_neg) - dot(z_anc, z_pos));
}

struct LocalLossResult {
    Tensor loss;                 // scalar
    std::size_t counted = 0;     // anchor patches that entered the mean
    bool all_skipped = false;    // no anchor patch had any candidate positives
};

// Per anchor patch i with label l:
//   positives = patches of the positive image with label l,
//   negatives = patches of the negative image with label != l.
// The positive side averages (1-sim) over pairs with sim < s_pos, the
// negative side averages -(1-sim) over pairs with sim > s_neg, both weighted
// by tau = 10^(s_pos - sim) resp. 10^(sim - s_neg). A side whose filter is
// empty contributes 0. A patch with no candidate positives at all is skipped
// from the mean.
inline LocalLossResult local_loss(const Tensor& z_l_anc, const Tensor& z_l_pos,
                                  const Tensor& z_l_neg,
                                  const std::vector<std::uint8_t>& labels_anc,
                                  const std::vector<std::uint8_t>& labels_pos,
                                  const std::vector<std::uint8_t>& labels_neg,
                                  const LossConfig& cfg) {
    cfg.validate();
    if (z_l_anc.rank() != 2 || z_l_pos.rank() != 2 || z_l_neg.rank() != 2)
        throw std::invalid_argument("local_loss: embeddings must be [patches, C*]");
    std::size_t p = z_l_anc.shape()[0];
    std::size_t mp = z_l_pos.shape()[0], mn = z_l_neg.shape()[0];
    if (labels_anc.size() != p || labels_pos.size() != mp || labels_neg.size() != mn)
        throw std::invalid_argument("local_loss: label grid sizes do not match embeddings");
    if (p == 0)
        throw std::invalid_argument("local_loss: anchor has no patches");

    const double ln10 = std::log(10.0);
    Tensor sims_pos = matmul(z_l_anc, z_l_pos, false, true);  // [p, mp]
    Tensor sims_neg = matmul(z_l_anc, z_l_neg, false, true);  // [p, mn]

    // Candidate and filter gates are constants of the current values; the
    // Iverson brackets carry no gradient.
    std::vector<double> gate_pos(p * mp, 0.0), gate_neg(p * mn, 0.0);
    std::vector<double> include(p, 0.0);
    std::size_t counted = 0;
    for (std::size_t i = 0; i < p; ++i) {
        bool has_candidate = false;
        for (std::size_t m = 0; m < mp; ++m) {
            if (labels_pos[m] != labels_anc[i]) continue;
            has_candidate = true;
            if (sims_pos.values()[i * mp + m] < cfg.s_pos) gate_pos[i * mp + m] = 1.0;
        }
        for (std::size_t n = 0; n < mn; ++n) {
            if (labels_neg[n] == labels_anc[i]) continue;
            if (sims_neg.values()[i * mn + n] > cfg.s_neg) gate_neg[i * mn + n] = 1.0;
        }
        if (has_candidate) {
            include[i] = 1.0;
            ++counted;
        }
    }

    LocalLossResult res;
    res.counted = counted;
    if (counted == 0) {
        res.loss = Tensor::scalar(0.0);
        res.all_skipped = true;
        return res;
    }

    auto side = [&](const Tensor& sims, const std::vector<double>& gate, std::size_t cols,
                    bool positive_side) {
        Shape mat{p, cols};
        Tensor gate_t = Tensor::from_vector(mat, gate);
        Tensor one_minus = sub(Tensor::full(mat, 1.0), sims);
        Tensor tau;
        if (cfg.uniform_tau) {
            tau = Tensor::full(mat, 1.0);
        } else if (positive_side) {
            tau = exp(scale(sub(Tensor::full(mat, cfg.s_pos), sims), ln10));
        } else {
            tau = exp(scale(sub(sims, Tensor::full(mat, cfg.s_neg)), ln10));
        }
        Tensor w = mul(gate_t, tau);
        Tensor ones_col = Tensor::full({cols, 1}, 1.0);
        Tensor num = matmul(mul(w, one_minus), ones_col);  // [p,1]
        Tensor den = matmul(w, ones_col);                  // [p,1]
        return safe_div(num, den);
    };

    Tensor pos_term = side(sims_pos, gate_pos, mp, true);
    Tensor neg_term = scale(side(sims_neg, gate_neg, mn, false), -1.0);
    Tensor per_patch = add(pos_term, neg_term);  // [p,1]
    Tensor include_t = Tensor::from_vector({p, 1}, include);
    res.loss = scale(sum(mul(include_t, per_patch)), 1.0 / static_cast<double>(counted));
    return res;
}

// Binary cross-entropy with an internal 1e-12 clamp; y is 0 for real, 1 for fake.
inline Tensor ce_loss(const Tensor& y_hat, double y) {
    if (y_hat.numel() != 1)
        throw std::invalid_argument("ce_loss: prediction must be scalar");
    if (y != 0.0 && y != 1.0)
        throw std::invalid_argument("ce_loss: label must be 0 or 1");
    Tensor one_minus = sub(Tensor::scalar(1.0), y_hat);
    return scale(log(clamp_min(y_hat, 1e-12)), -y) +
           scale(log(clamp_min(one_minus, 1e-12)), -(1.0 - y));
}

// L_total = w_ce*L_ce + w_ins*L_ins + w_loc*L_loc; the weights default to 1
// and exist for ablations only. Non-finite inputs are rejected.
inline Tensor total_loss(const Tensor& l_ce, const Tensor& l_ins, const Tensor& l_loc,
                         const LossConfig& cfg = {}) {
    for (const Tensor* t : {&l_ce, &l_ins, &l_loc}) {
        if (t->numel() != 1)
            throw std::invalid_argument("total_loss: components must be scalars");
        if (!std::isfinite(t->value()))
            throw std::invalid_argument("total_loss: non-finite loss component");
    }
    return scale(l_ce, cfg.w_ce) + scale(l_ins, cfg.w_ins) + scale(l_loc, cfg.w_loc);
}

}  // namespace cfm
