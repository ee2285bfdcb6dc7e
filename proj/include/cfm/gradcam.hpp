// Gradient-weighted class activation map over the final feature map: channel
// weights are the GAP of d(fake score)/dF, the map is the relu of the
// weighted channel sum, bilinearly upsampled and max-normalized.

#pragma once

#include "cfm/image.hpp"
#include "cfm/model.hpp"

namespace cfm {

struct AttentionResult {
    Gray map;              // image resolution, values in [0,1]
    bool all_zero = false; // gradient vanished everywhere
};

inline AttentionResult attention_map(const Model& model, const Image& image) {
    Tensor f;
    {
        NoGradGuard no_grad;
        f = model.encode(Branch::Student, image.to_tensor());
    }
    // Re-root the feature map as a leaf so backward() deposits dScore/dF here.
    Tensor f_leaf = f.clone(true);
    Tensor score = model.classify(f_leaf);
    backward(score);

    std::size_t c = f_leaf.shape()[0], fh = f_leaf.shape()[1], fw = f_leaf.shape()[2];
    const auto& grad = f_leaf.grad();
    std::vector<double> weights(c, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < fh * fw; ++i) weights[ch] += grad[ch * fh * fw + i];
        weights[ch] /= static_cast<double>(fh * fw);
    }

    Gray cam(static_cast<int>(fh), static_cast<int>(fw), 0.0);
    for (std::size_t y = 0; y < fh; ++y)
        for (std::size_t x = 0; x < fw; ++x) {
            double s = 0.0;
            for (std::size_t ch = 0; ch < c; ++ch)
                s += weights[ch] * f_leaf.values()[(ch * fh + y) * fw + x];
            cam.at(static_cast<int>(y), static_cast<int>(x)) = s > 0.0 ? s : 0.0;
        }

    Gray up = resize_bilinear_gray(cam, image.h, image.w);
    double mx = 0.0;
    for (double v : up.data) mx = std::max(mx, v);
    AttentionResult res;
    if (mx > 0.0) {
        for (double& v : up.data) v /= mx;
    } else {
        res.all_zero = true;
        for (double& v : up.data) v = 0.0;
    }
    res.map = std::move(up);
    return res;
}

}  // namespace cfm
