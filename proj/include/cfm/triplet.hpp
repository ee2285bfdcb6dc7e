// Fine-grained triplet construction: anchor/positive from the same video at
// different frames, negative from the counterpart video at the anchor frame,
// with the anchor/negative pair sharing one augmentation spec. Patch labels
// come from the pixel-difference mask of the pre-augmentation frames.

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cfm/augment.hpp"
#include "cfm/synthgen.hpp"

namespace cfm {

// Channel-mean |a-b|, max-normalized when the max exceeds tau, else all-zero.
inline Gray difference_mask(const Image& a, const Image& b, double tau_zero = 1e-6) {
    if (a.h != b.h || a.w != b.w)
        throw std::invalid_argument("difference_mask: frame sizes differ");
    Gray mask(a.h, a.w, 0.0);
    double mx = 0.0;
    for (int y = 0; y < a.h; ++y)
        for (int x = 0; x < a.w; ++x) {
            double d = 0.0;
            for (int c = 0; c < 3; ++c) d += std::fabs(a.at(c, y, x) - b.at(c, y, x));
            d /= 3.0;
            mask.at(y, x) = d;
            mx = std::max(mx, d);
        }
    if (mx > tau_zero)
        for (double& v : mask.data) v /= mx;
    else
        for (double& v : mask.data) v = 0.0;
    return mask;
}

// Average-pools the mask to the feature grid; a patch is fake where the
// pooled value exceeds t_mask.
inline std::vector<std::uint8_t> patch_labels(const Gray& mask, int feature_h, int feature_w,
                                              double t_mask = 0.25) {
    if (feature_h < 1 || feature_w < 1 || mask.h % feature_h != 0 || mask.w % feature_w != 0)
        throw std::invalid_argument("patch_labels: mask " + std::to_string(mask.h) + "x" +
                                    std::to_string(mask.w) + " not divisible by grid " +
                                    std::to_string(feature_h) + "x" + std::to_string(feature_w));
    int ph = mask.h / feature_h, pw = mask.w / feature_w;
    std::vector<std::uint8_t> labels(static_cast<std::size_t>(feature_h) * feature_w, 0);
    for (int fy = 0; fy < feature_h; ++fy)
        for (int fx = 0; fx < feature_w; ++fx) {
            double s = 0.0;
            for (int y = 0; y < ph; ++y)
                for (int x = 0; x < pw; ++x) s += mask.at(fy * ph + y, fx * pw + x);
            s /= static_cast<double>(ph) * pw;
            labels[static_cast<std::size_t>(fy) * feature_w + fx] = s > t_mask ? 1 : 0;
        }
    return labels;
}

struct TripletSample {
    std::string anchor_id;
    Image x_anc, x_pos, x_neg;
    bool anchor_fake = false;
    int frame_anchor = 0, frame_positive = 0;
    Gray diff_mask;  // anchor frame vs counterpart frame, pre-augmentation
    std::vector<std::uint8_t> labels_anc, labels_pos, labels_neg;
    AugSpec aug_shared;  // applied to anchor and negative
    AugSpec aug_pos;     // applied to the positive independently
};

struct TripletConfig {
    int feature_h = 8;
    int feature_w = 8;
    double t_mask = 0.25;
    bool augment = true;
};

inline std::string counterpart_id(const Dataset& ds, const std::string& anchor_id) {
    const ManifestEntry* e = ds.manifest.find(anchor_id);
    if (!e) throw std::runtime_error("build_triplet: unknown video '" + anchor_id + "'");
    if (e->fake) return e->source_id;
    for (const auto& other : ds.manifest.entries)
        if (other.fake && other.source_id == anchor_id) return other.id;
    throw std::runtime_error("build_triplet: no counterpart exists for video '" +
                             anchor_id + "'");
}

inline TripletSample build_triplet(const Dataset& ds, const std::string& anchor_id,
                                   std::mt19937_64& rng, const TripletConfig& cfg = {}) {
    const SynthVideo& anchor_video = ds.video(anchor_id);
    const SynthVideo& counter_video = ds.video(counterpart_id(ds, anchor_id));
    std::size_t n = anchor_video.frames.size();
    if (n < 2 || counter_video.frames.size() < n)
        throw std::runtime_error("build_triplet: video '" + anchor_id + "' too short");

    // Anchor frame uniform; positive a different frame (1 frame = 1 second);
    // negative is the counterpart video time-aligned with the anchor.
    std::uniform_int_distribution<std::size_t> pick_i(0, n - 1);
    std::size_t i = pick_i(rng);
    std::uniform_int_distribution<std::size_t> pick_j(0, n - 2);
    std::size_t j = pick_j(rng);
    if (j >= i) ++j;

    const Image& anc_raw = anchor_video.frames[i];
    const Image& pos_raw = anchor_video.frames[j];
    const Image& neg_raw = counter_video.frames[i];

    TripletSample t;
    t.anchor_id = anchor_id;
    t.anchor_fake = anchor_video.fake;
    t.frame_anchor = static_cast<int>(i);
    t.frame_positive = static_cast<int>(j);
    t.diff_mask = difference_mask(anc_raw, neg_raw);

    // Label grids: a real video is all-real; a fake video is labeled from
    // the difference mask of its own frame against the real counterpart.
    std::vector<std::uint8_t> all_real(static_cast<std::size_t>(cfg.feature_h) * cfg.feature_w, 0);
    std::vector<std::uint8_t> fake_at_i =
        patch_labels(t.diff_mask, cfg.feature_h, cfg.feature_w, cfg.t_mask);
    if (anchor_video.fake) {
        t.labels_anc = fake_at_i;
        t.labels_neg = all_real;
        Gray mask_j = difference_mask(pos_raw, counter_video.frames[j]);
        t.labels_pos = patch_labels(mask_j, cfg.feature_h, cfg.feature_w, cfg.t_mask);
    } else {
        t.labels_anc = all_real;
        t.labels_pos = all_real;
        t.labels_neg = fake_at_i;
    }

    if (cfg.augment) {
        t.aug_shared = sample_aug_spec(rng);
        t.aug_pos = sample_aug_spec(rng);
        t.x_anc = apply_aug(anc_raw, t.aug_shared);
        t.x_neg = apply_aug(neg_raw, t.aug_shared);
        t.x_pos = apply_aug(pos_raw, t.aug_pos);
    } else {
        t.x_anc = anc_raw;
        t.x_neg = neg_raw;
        t.x_pos = pos_raw;
    }
    return t;
}

}  // namespace cfm
