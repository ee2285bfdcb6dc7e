// Student/teacher encoder pair with the projection heads: three stride-2
// conv blocks, a two-layer global mapping head, a 1x1-conv local embedding
// head, and a classifier that exists on the student only. The teacher is a
// gradient-free EMA copy of the student.

#pragma once

#include <random>
#include <string>
#include <vector>

#include "cfm/tensor.hpp"
#include "cfm/util.hpp"

namespace cfm {

struct ModelConfig {
    int image = 64;                         // square input
    std::vector<int> channels = {16, 32, 64};
    int embed_dim = 16;                     // C*, shared by both heads
    int head_hidden = 64;
    bool local_from_masked = false;         // feed the local head F-hat instead of F

    int feature_size() const {
        int s = image;
        for (std::size_t i = 0; i < channels.size(); ++i) s = (s + 1) / 2;
        return s;
    }
    int feature_channels() const { return channels.back(); }
    int patches() const { return feature_size() * feature_size(); }

    std::string signature() const {
        std::string s = "img=" + std::to_string(image) + ";ch=";
        for (int c : channels) s += std::to_string(c) + ":";
        s += ";cstar=" + std::to_string(embed_dim) + ";hidden=" + std::to_string(head_hidden);
        return s;
    }
};

enum class Branch { Student, Teacher };

struct BranchParams {
    std::vector<Tensor> conv_w, conv_b;
    Tensor head_w1, head_b1, head_w2, head_b2;  // global mapping, two layers
    Tensor local_w, local_b;                    // 1x1 conv to C*

    std::vector<std::pair<std::string, Tensor>> named(const std::string& prefix) const {
        std::vector<std::pair<std::string, Tensor>> out;
        for (std::size_t i = 0; i < conv_w.size(); ++i) {
            out.emplace_back(prefix + "_conv" + std::to_string(i) + "_w", conv_w[i]);
            out.emplace_back(prefix + "_conv" + std::to_string(i) + "_b", conv_b[i]);
        }
        out.emplace_back(prefix + "_head_w1", head_w1);
        out.emplace_back(prefix + "_head_b1", head_b1);
        out.emplace_back(prefix + "_head_w2", head_w2);
        out.emplace_back(prefix + "_head_b2", head_b2);
        out.emplace_back(prefix + "_local_w", local_w);
        out.emplace_back(prefix + "_local_b", local_b);
        return out;
    }

    std::vector<Tensor> all() const {
        std::vector<Tensor> out = conv_w;
        out.insert(out.end(), conv_b.begin(), conv_b.end());
        out.insert(out.end(), {head_w1, head_b1, head_w2, head_b2, local_w, local_b});
        return out;
    }
};

namespace detail {

inline Tensor he_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng,
                        bool requires_grad, double gain = 1.0) {
    std::normal_distribution<double> gauss(
        0.0, gain * std::sqrt(2.0 / static_cast<double>(fan_in)));
    std::vector<double> data(shape_numel(shape));
    for (double& v : data) v = gauss(rng);
    return Tensor::from_vector(std::move(shape), std::move(data), requires_grad);
}

inline BranchParams init_branch(const ModelConfig& cfg, std::mt19937_64& rng) {
    BranchParams p;
    std::size_t cin = 3;
    for (int cout : cfg.channels) {
        std::size_t co = static_cast<std::size_t>(cout);
        // Gain > 1 enlarges the feature scale, which speeds up the classifier
        // under Adam's per-coordinate steps at this training budget.
        p.conv_w.push_back(he_normal({co, cin, 3, 3}, cin * 9, rng, true, 1.0));
        p.conv_b.push_back(Tensor::zeros({co}, true));
        cin = co;
    }
    std::size_t c = static_cast<std::size_t>(cfg.feature_channels());
    std::size_t hid = static_cast<std::size_t>(cfg.head_hidden);
    std::size_t cs = static_cast<std::size_t>(cfg.embed_dim);
    p.head_w1 = he_normal({hid, c}, c, rng, true);
    p.head_b1 = Tensor::zeros({hid}, true);
    p.head_w2 = he_normal({cs, hid}, hid, rng, true);
    p.head_b2 = Tensor::zeros({cs}, true);
    p.local_w = he_normal({cs, c, 1, 1}, c, rng, true);
    p.local_b = Tensor::zeros({cs}, true);
    return p;
}

inline BranchParams frozen_copy(const BranchParams& src) {
    BranchParams p;
    for (const auto& t : src.conv_w) p.conv_w.push_back(t.clone(false));
    for (const auto& t : src.conv_b) p.conv_b.push_back(t.clone(false));
    p.head_w1 = src.head_w1.clone(false);
    p.head_b1 = src.head_b1.clone(false);
    p.head_w2 = src.head_w2.clone(false);
    p.head_b2 = src.head_b2.clone(false);
    p.local_w = src.local_w.clone(false);
    p.local_b = src.local_b.clone(false);
    return p;
}

}  // namespace detail

class Model {
public:
    ModelConfig cfg;
    BranchParams student;
    BranchParams teacher;  // EMA copy; parameters never require gradients
    Tensor cls_w, cls_b;   // classifier logit head, student only

    static Model init(const ModelConfig& cfg, std::uint64_t seed) {
        Model m;
        m.cfg = cfg;
        auto rng = make_rng(seed, stream::kInit);
        m.student = detail::init_branch(cfg, rng);
        m.teacher = detail::frozen_copy(m.student);
        std::size_t c = static_cast<std::size_t>(cfg.feature_channels());
        m.cls_w = detail::he_normal({1, c}, c, rng, true);
        m.cls_b = Tensor::zeros({1}, true);
        return m;
    }

    const BranchParams& branch(Branch b) const {
        return b == Branch::Student ? student : teacher;
    }

    // Encoder output F. The teacher branch records nothing on the tape.
    Tensor encode(Branch b, const Tensor& image) const {
        if (image.rank() != 3 || image.shape()[0] != 3 ||
            image.shape()[1] != static_cast<std::size_t>(cfg.image) ||
            image.shape()[2] != static_cast<std::size_t>(cfg.image))
            throw std::invalid_argument("encode: expected [3," + std::to_string(cfg.image) +
                                        "," + std::to_string(cfg.image) + "], got " +
                                        shape_str(image.shape()));
        const BranchParams& p = branch(b);
        // Center pixels to [-1,1]; raw [0,1] input leaves too many relu units dead.
        Tensor x = scale(image, 2.0) - Tensor::full(image.shape(), 1.0);
        for (std::size_t i = 0; i < p.conv_w.size(); ++i)
            x = relu(conv2d(x, p.conv_w[i], p.conv_b[i], 2, 1));
        return x;
    }

    // Z_g from the masked feature map: unit-norm output of the two-layer head.
    Tensor project_global(Branch b, const Tensor& f_masked) const {
        const BranchParams& p = branch(b);
        Tensor h = relu(linear(global_average_pool(f_masked), p.head_w1, p.head_b1));
        return l2_normalize(linear(h, p.head_w2, p.head_b2));
    }

    // Per-patch embeddings as [H*W, C*] rows, each row unit norm.
    Tensor embed_local(Branch b, const Tensor& f) const {
        const BranchParams& p = branch(b);
        Tensor z = conv2d(f, p.local_w, p.local_b, 1, 0);  // [C*,H,W]
        std::size_t cs = z.shape()[0], hw = z.shape()[1] * z.shape()[2];
        return l2_normalize(transpose2d(reshape(z, {cs, hw})));
    }

    // Sigmoid of a linear readout of GAP; student anchor features only.
    Tensor classify(const Tensor& f_masked_anc) const {
        return sigmoid(reshape(linear(global_average_pool(f_masked_anc), cls_w, cls_b), {}));
    }

    std::vector<std::pair<std::string, Tensor>> named_params() const {
        auto out = student.named("student");
        auto t = teacher.named("teacher");
        out.insert(out.end(), t.begin(), t.end());
        out.emplace_back("cls_w", cls_w);
        out.emplace_back("cls_b", cls_b);
        return out;
    }
};

// theta_t <- alpha * theta_t + (1 - alpha) * theta_s, elementwise, applied to
// the encoder and both heads.
inline void ema_update(BranchParams& teacher, const BranchParams& student, double alpha) {
    if (alpha < 0.0 || alpha > 1.0)
        throw std::invalid_argument("ema_update: alpha must be in [0,1]");
    auto blend = [alpha](Tensor& t, const Tensor& s) {
        if (t.shape() != s.shape())
            throw std::invalid_argument("ema_update: teacher/student shape mismatch " +
                                        shape_str(t.shape()) + " vs " + shape_str(s.shape()));
        auto& tv = t.mutable_values();
        const auto& sv = s.values();
        for (std::size_t i = 0; i < tv.size(); ++i)
            tv[i] = alpha * tv[i] + (1.0 - alpha) * sv[i];
    };
    for (std::size_t i = 0; i < teacher.conv_w.size(); ++i) {
        blend(teacher.conv_w[i], student.conv_w[i]);
        blend(teacher.conv_b[i], student.conv_b[i]);
    }
    blend(teacher.head_w1, student.head_w1);
    blend(teacher.head_b1, student.head_b1);
    blend(teacher.head_w2, student.head_w2);
    blend(teacher.head_b2, student.head_b2);
    blend(teacher.local_w, student.local_w);
    blend(teacher.local_b, student.local_b);
}

}  // namespace cfm
