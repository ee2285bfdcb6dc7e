// Dense f64 tensor with reverse-mode differentiation for the fixed op set
// the CFM model needs. Single-threaded semantics; results are bit-identical
// across repeated runs with the same inputs.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cfm {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

namespace detail {

struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;   // filled by backward(); kept on leaves only
    bool requires_grad = false;
    std::uint64_t seq = 0;      // creation order; parents always precede children
    std::vector<std::shared_ptr<TensorNode>> parents;
    // Accumulates d(loss)/d(parents) given d(loss)/d(this node).
    std::function<void(const std::vector<double>&)> backprop;

    bool is_leaf() const { return parents.empty() && !backprop; }
};

inline std::uint64_t next_seq() {
    static std::uint64_t counter = 0;
    return ++counter;
}

inline bool& grad_mode() {
    static bool enabled = true;
    return enabled;
}

}  // namespace detail

// Scoped switch that stops ops from recording backward rules (evaluation paths).
struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return from_data(std::move(shape), {}, requires_grad, 0.0);
    }

    static Tensor full(Shape shape, double v, bool requires_grad = false) {
        return from_data(std::move(shape), {}, requires_grad, v);
    }

    static Tensor scalar(double v) {
        Tensor t = zeros({});
        t.node_->value[0] = v;
        return t;
    }

    static Tensor from_vector(Shape shape, std::vector<double> data,
                              bool requires_grad = false) {
        if (shape_numel(shape) != data.size())
            throw std::invalid_argument("Tensor: shape " + shape_str(shape) +
                                        " does not match data length " +
                                        std::to_string(data.size()));
        Tensor t;
        t.node_ = std::make_shared<detail::TensorNode>();
        t.node_->shape = std::move(shape);
        t.node_->value = std::move(data);
        t.node_->requires_grad = requires_grad;
        t.node_->seq = detail::next_seq();
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return check().shape; }
    std::size_t numel() const { return check().value.size(); }
    std::size_t rank() const { return check().shape.size(); }

    const std::vector<double>& values() const { return check().value; }
    // Direct mutation is only meant for leaves (optimizer / EMA updates).
    std::vector<double>& mutable_values() { return check().value; }

    double value() const {
        const auto& n = check();
        if (n.value.size() != 1)
            throw std::logic_error("Tensor::value: tensor is not scalar, shape " +
                                   shape_str(n.shape));
        return n.value[0];
    }

    bool requires_grad() const { return check().requires_grad; }
    void set_requires_grad(bool b) {
        auto& n = check();
        if (b && !n.is_leaf())
            throw std::logic_error("set_requires_grad: only leaf tensors can be marked");
        n.requires_grad = b;
    }

    bool has_grad() const { return defined() && !node_->grad.empty(); }
    const std::vector<double>& grad() const {
        if (!has_grad())
            throw std::logic_error("Tensor::grad: no gradient present");
        return node_->grad;
    }
    void clear_grad() { check().grad.clear(); }

    Tensor detach() const {
        return from_vector(shape(), values(), false);
    }

    // Deep copy of values into a fresh leaf (shares nothing).
    Tensor clone(bool requires_grad = false) const {
        return from_vector(shape(), values(), requires_grad);
    }

    std::shared_ptr<detail::TensorNode> node() const { return node_; }

private:
    static Tensor from_data(Shape shape, std::vector<double> data,
                            bool requires_grad, double fill) {
        Tensor t;
        t.node_ = std::make_shared<detail::TensorNode>();
        t.node_->value.assign(shape_numel(shape), fill);
        if (!data.empty()) t.node_->value = std::move(data);
        t.node_->shape = std::move(shape);
        t.node_->requires_grad = requires_grad;
        t.node_->seq = detail::next_seq();
        return t;
    }

    detail::TensorNode& check() const {
        if (!node_) throw std::logic_error("Tensor: used before initialization");
        return *node_;
    }

    std::shared_ptr<detail::TensorNode> node_;
};

namespace detail {

inline Tensor make_result(Shape shape, std::vector<double> value,
                          const std::vector<Tensor>& inputs,
                          std::function<void(const std::vector<double>&)> backprop) {
    Tensor out = Tensor::from_vector(std::move(shape), std::move(value));
    bool needs = false;
    if (grad_mode())
        for (const auto& in : inputs)
            if (in.requires_grad()) needs = true;
    if (needs) {
        auto& n = *out.node();
        n.requires_grad = true;
        for (const auto& in : inputs) n.parents.push_back(in.node());
        n.backprop = std::move(backprop);
    }
    return out;
}

inline std::vector<double>& grad_buf(const std::shared_ptr<TensorNode>& n) {
    if (n->grad.size() != n->value.size()) n->grad.assign(n->value.size(), 0.0);
    return n->grad;
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("add", a, b);
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] + b.values()[i];
    auto an = a.node(), bn = b.node();
    return detail::make_result(a.shape(), std::move(v), {a, b},
        [an, bn](const std::vector<double>& g) {
            if (an->requires_grad) {
                auto& ga = detail::grad_buf(an);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (bn->requires_grad) {
                auto& gb = detail::grad_buf(bn);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("sub", a, b);
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] - b.values()[i];
    auto an = a.node(), bn = b.node();
    return detail::make_result(a.shape(), std::move(v), {a, b},
        [an, bn](const std::vector<double>& g) {
            if (an->requires_grad) {
                auto& ga = detail::grad_buf(an);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (bn->requires_grad) {
                auto& gb = detail::grad_buf(bn);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("mul", a, b);
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] * b.values()[i];
    auto an = a.node(), bn = b.node();
    return detail::make_result(a.shape(), std::move(v), {a, b},
        [an, bn](const std::vector<double>& g) {
            if (an->requires_grad) {
                auto& ga = detail::grad_buf(an);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bn->value[i];
            }
            if (bn->requires_grad) {
                auto& gb = detail::grad_buf(bn);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * an->value[i];
            }
        });
}

inline Tensor scale(const Tensor& a, double c) {
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] * c;
    auto an = a.node();
    return detail::make_result(a.shape(), std::move(v), {a},
        [an, c](const std::vector<double>& g) {
            auto& ga = detail::grad_buf(an);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
        });
}

inline Tensor relu(const Tensor& a) {
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] > 0.0 ? a.values()[i] : 0.0;
    auto an = a.node();
    // Subgradient at 0 is defined as 0.
    return detail::make_result(a.shape(), std::move(v), {a},
        [an](const std::vector<double>& g) {
            auto& ga = detail::grad_buf(an);
            for (std::size_t i = 0; i < g.size(); ++i)
                if (an->value[i] > 0.0) ga[i] += g[i];
        });
}

inline Tensor sigmoid(const Tensor& a) {
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1.0 / (1.0 + std::exp(-a.values()[i]));
    auto an = a.node();
    Tensor out = detail::make_result(a.shape(), std::move(v), {a}, nullptr);
    if (out.requires_grad()) {
        auto on = out.node();
        on->backprop = [an, on](const std::vector<double>& g) {
            auto& ga = detail::grad_buf(an);
            for (std::size_t i = 0; i < g.size(); ++i) {
                double y = on->value[i];
                ga[i] += g[i] * y * (1.0 - y);
            }
        };
    }
    return out;
}

inline Tensor log(const Tensor& a) {
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::log(a.values()[i]);
    auto an = a.node();
    return detail::make_result(a.shape(), std::move(v), {a},
        [an](const std::vector<double>& g) {
            auto& ga = detail::grad_buf(an);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / an->value[i];
        });
}

inline Tensor exp(const Tensor& a) {
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::exp(a.values()[i]);
    auto an = a.node();
    Tensor out = detail::make_result(a.shape(), std::move(v), {a}, nullptr);
    if (out.requires_grad()) {
        auto on = out.node();
        on->backprop = [an, on](const std::vector<double>& g) {
            auto& ga = detail::grad_buf(an);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * on->value[i];
        };
    }
    return out;
}

inline Tensor abs(const Tensor& a) {
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::fabs(a.values()[i]);
    auto an = a.node();
    // Subgradient at 0 is 0, matching the relu convention.
    return detail::make_result(a.shape(), std::move(v), {a},
        [an](const std::vector<double>& g) {
            auto& ga = detail::grad_buf(an);
            for (std::size_t i = 0; i < g.size(); ++i) {
                double x = an->value[i];
                if (x > 0.0) ga[i] += g[i];
                else if (x < 0.0) ga[i] -= g[i];
            }
        });
}

// max(x, lo) elementwise; gradient passes only where x > lo.
inline Tensor clamp_min(const Tensor& a, double lo) {
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::max(a.values()[i], lo);
    auto an = a.node();
    return detail::make_result(a.shape(), std::move(v), {a},
        [an, lo](const std::vector<double>& g) {
            auto& ga = detail::grad_buf(an);
            for (std::size_t i = 0; i < g.size(); ++i)
                if (an->value[i] > lo) ga[i] += g[i];
        });
}

// a/b elementwise, defined as 0 where b == 0 (gradient 0 there as well).
// Houses the "empty filtered set contributes 0" rule of the local loss.
inline Tensor safe_div(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("safe_div", a, b);
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i)
        v[i] = b.values()[i] != 0.0 ? a.values()[i] / b.values()[i] : 0.0;
    auto an = a.node(), bn = b.node();
    return detail::make_result(a.shape(), std::move(v), {a, b},
        [an, bn](const std::vector<double>& g) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                double bv = bn->value[i];
                if (bv == 0.0) continue;
                if (an->requires_grad) detail::grad_buf(an)[i] += g[i] / bv;
                if (bn->requires_grad)
                    detail::grad_buf(bn)[i] -= g[i] * an->value[i] / (bv * bv);
            }
        });
}

// ---------------------------------------------------------------------------
// Reductions and vector ops
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double x : a.values()) s += x;
    auto an = a.node();
    return detail::make_result({}, {s}, {a},
        [an](const std::vector<double>& g) {
            auto& ga = detail::grad_buf(an);
            for (double& x : ga) x += g[0];
        });
}

inline Tensor mean(const Tensor& a) {
    if (a.numel() == 0) throw std::invalid_argument("mean: empty tensor");
    double s = 0.0;
    for (double x : a.values()) s += x;
    double inv = 1.0 / static_cast<double>(a.numel());
    auto an = a.node();
    return detail::make_result({}, {s * inv}, {a},
        [an, inv](const std::vector<double>& g) {
            auto& ga = detail::grad_buf(an);
            for (double& x : ga) x += g[0] * inv;
        });
}

inline Tensor dot(const Tensor& a, const Tensor& b) {
    detail::require_same_shape("dot", a, b);
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a.values()[i] * b.values()[i];
    auto an = a.node(), bn = b.node();
    return detail::make_result({}, {s}, {a, b},
        [an, bn](const std::vector<double>& g) {
            if (an->requires_grad) {
                auto& ga = detail::grad_buf(an);
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0] * bn->value[i];
            }
            if (bn->requires_grad) {
                auto& gb = detail::grad_buf(bn);
                for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[0] * an->value[i];
            }
        });
}

// L2-normalizes along the last axis. A zero row maps to a zero row and
// propagates zero gradient.
inline Tensor l2_normalize(const Tensor& a) {
    if (a.rank() == 0) throw std::invalid_argument("l2_normalize: scalar input");
    std::size_t d = a.shape().back();
    std::size_t rows = a.numel() / d;
    std::vector<double> v(a.numel());
    std::vector<double> norms(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            double x = a.values()[r * d + i];
            s += x * x;
        }
        double n = std::sqrt(s);
        norms[r] = n;
        for (std::size_t i = 0; i < d; ++i)
            v[r * d + i] = n > 0.0 ? a.values()[r * d + i] / n : 0.0;
    }
    auto an = a.node();
    Tensor out = detail::make_result(a.shape(), std::move(v), {a}, nullptr);
    if (out.requires_grad()) {
        auto on = out.node();
        on->backprop = [an, on, d, rows, norms](const std::vector<double>& g) {
            auto& ga = detail::grad_buf(an);
            for (std::size_t r = 0; r < rows; ++r) {
                double n = norms[r];
                if (n == 0.0) continue;
                double gy = 0.0;
                for (std::size_t i = 0; i < d; ++i)
                    gy += g[r * d + i] * on->value[r * d + i];
                for (std::size_t i = 0; i < d; ++i)
                    ga[r * d + i] += (g[r * d + i] - gy * on->value[r * d + i]) / n;
            }
        };
    }
    return out;
}

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) +
                                    " as " + shape_str(shape));
    auto an = a.node();
    return detail::make_result(std::move(shape), a.values(), {a},
        [an](const std::vector<double>& g) {
            auto& ga = detail::grad_buf(an);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        });
}

inline Tensor transpose2d(const Tensor& a) {
    if (a.rank() != 2)
        throw std::invalid_argument("transpose2d: expected rank 2, got " + shape_str(a.shape()));
    std::size_t m = a.shape()[0], n = a.shape()[1];
    std::vector<double> v(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) v[j * m + i] = a.values()[i * n + j];
    auto an = a.node();
    return detail::make_result({n, m}, std::move(v), {a},
        [an, m, n](const std::vector<double>& g) {
            auto& ga = detail::grad_buf(an);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
        });
}

// Zeroes or rescales whole channels of a [C,H,W] map by a constant gate.
// The gate is not a differentiable input; dropped channels pass no gradient.
inline Tensor channel_mask_scale(const Tensor& a, const std::vector<double>& gate) {
    if (a.rank() != 3)
        throw std::invalid_argument("channel_mask_scale: expected [C,H,W], got " +
                                    shape_str(a.shape()));
    std::size_t c = a.shape()[0], hw = a.shape()[1] * a.shape()[2];
    if (gate.size() != c)
        throw std::invalid_argument("channel_mask_scale: gate length " +
                                    std::to_string(gate.size()) + " vs C=" + std::to_string(c));
    std::vector<double> v(a.numel());
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < hw; ++i)
            v[ch * hw + i] = a.values()[ch * hw + i] * gate[ch];
    auto an = a.node();
    return detail::make_result(a.shape(), std::move(v), {a},
        [an, gate, c, hw](const std::vector<double>& g) {
            auto& ga = detail::grad_buf(an);
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t i = 0; i < hw; ++i)
                    ga[ch * hw + i] += g[ch * hw + i] * gate[ch];
        });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

// y = W x + b with W [out,in], x [in], b [out].
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 1 || w.rank() != 2 || b.rank() != 1 ||
        w.shape()[1] != x.shape()[0] || w.shape()[0] != b.shape()[0])
        throw std::invalid_argument("linear: shapes x=" + shape_str(x.shape()) +
                                    " w=" + shape_str(w.shape()) + " b=" + shape_str(b.shape()));
    std::size_t out = w.shape()[0], in = w.shape()[1];
    std::vector<double> v(out);
    for (std::size_t o = 0; o < out; ++o) {
        double s = b.values()[o];
        const double* wr = w.values().data() + o * in;
        for (std::size_t i = 0; i < in; ++i) s += wr[i] * x.values()[i];
        v[o] = s;
    }
    auto xn = x.node(), wn = w.node(), bn = b.node();
    return detail::make_result({out}, std::move(v), {x, w, b},
        [xn, wn, bn, out, in](const std::vector<double>& g) {
            if (xn->requires_grad) {
                auto& gx = detail::grad_buf(xn);
                for (std::size_t o = 0; o < out; ++o) {
                    const double* wr = wn->value.data() + o * in;
                    for (std::size_t i = 0; i < in; ++i) gx[i] += g[o] * wr[i];
                }
            }
            if (wn->requires_grad) {
                auto& gw = detail::grad_buf(wn);
                for (std::size_t o = 0; o < out; ++o)
                    for (std::size_t i = 0; i < in; ++i)
                        gw[o * in + i] += g[o] * xn->value[i];
            }
            if (bn->requires_grad) {
                auto& gb = detail::grad_buf(bn);
                for (std::size_t o = 0; o < out; ++o) gb[o] += g[o];
            }
        });
}

// Rank-2 matrix product with optional transposes; rank-3 inputs are treated
// as a batch of rank-2 products (no transposes in the batched form).
inline Tensor matmul(const Tensor& a, const Tensor& b,
                     bool trans_a = false, bool trans_b = false) {
    auto mm = [](const double* A, const double* B, double* C,
                 std::size_t m, std::size_t k, std::size_t n,
                 bool ta, bool tb) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (std::size_t p = 0; p < k; ++p) {
                    double av = ta ? A[p * m + i] : A[i * k + p];
                    double bv = tb ? B[j * k + p] : B[p * n + j];
                    s += av * bv;
                }
                C[i * n + j] = s;
            }
    };

    if (a.rank() == 3 || b.rank() == 3) {
        if (a.rank() != 3 || b.rank() != 3 || trans_a || trans_b ||
            a.shape()[0] != b.shape()[0] || a.shape()[2] != b.shape()[1])
            throw std::invalid_argument("matmul: bad batched shapes " +
                                        shape_str(a.shape()) + " x " + shape_str(b.shape()));
        std::size_t bt = a.shape()[0], m = a.shape()[1], k = a.shape()[2], n = b.shape()[2];
        std::vector<double> v(bt * m * n);
        for (std::size_t t = 0; t < bt; ++t)
            mm(a.values().data() + t * m * k, b.values().data() + t * k * n,
               v.data() + t * m * n, m, k, n, false, false);
        auto an = a.node(), bn = b.node();
        return detail::make_result({bt, m, n}, std::move(v), {a, b},
            [an, bn, bt, m, k, n, mm](const std::vector<double>& g) {
                for (std::size_t t = 0; t < bt; ++t) {
                    const double* gt = g.data() + t * m * n;
                    if (an->requires_grad) {
                        std::vector<double> tmp(m * k);
                        mm(gt, bn->value.data() + t * k * n, tmp.data(), m, n, k, false, true);
                        auto& ga = detail::grad_buf(an);
                        for (std::size_t i = 0; i < m * k; ++i) ga[t * m * k + i] += tmp[i];
                    }
                    if (bn->requires_grad) {
                        std::vector<double> tmp(k * n);
                        mm(an->value.data() + t * m * k, gt, tmp.data(), k, m, n, true, false);
                        auto& gb = detail::grad_buf(bn);
                        for (std::size_t i = 0; i < k * n; ++i) gb[t * k * n + i] += tmp[i];
                    }
                }
            });
    }

    if (a.rank() != 2 || b.rank() != 2)
        throw std::invalid_argument("matmul: expected rank-2 or rank-3 operands, got " +
                                    shape_str(a.shape()) + " x " + shape_str(b.shape()));
    std::size_t m = trans_a ? a.shape()[1] : a.shape()[0];
    std::size_t k = trans_a ? a.shape()[0] : a.shape()[1];
    std::size_t kb = trans_b ? b.shape()[1] : b.shape()[0];
    std::size_t n = trans_b ? b.shape()[0] : b.shape()[1];
    if (k != kb)
        throw std::invalid_argument("matmul: inner dims disagree, " +
                                    shape_str(a.shape()) + " x " + shape_str(b.shape()));
    std::vector<double> v(m * n);
    mm(a.values().data(), b.values().data(), v.data(), m, k, n, trans_a, trans_b);
    auto an = a.node(), bn = b.node();
    return detail::make_result({m, n}, std::move(v), {a, b},
        [an, bn, m, k, n, trans_a, trans_b, mm](const std::vector<double>& g) {
            // dA = G B^T, dB = A^T G in the untransposed case; transposes swap roles.
            if (an->requires_grad) {
                std::vector<double> tmp(m * k);
                mm(g.data(), bn->value.data(), tmp.data(), m, n, k, false, !trans_b);
                auto& ga = detail::grad_buf(an);
                if (!trans_a)
                    for (std::size_t i = 0; i < m * k; ++i) ga[i] += tmp[i];
                else
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t p = 0; p < k; ++p) ga[p * m + i] += tmp[i * k + p];
            }
            if (bn->requires_grad) {
                std::vector<double> tmp(k * n);
                mm(an->value.data(), g.data(), tmp.data(), k, m, n, !trans_a, false);
                auto& gb = detail::grad_buf(bn);
                if (!trans_b)
                    for (std::size_t i = 0; i < k * n; ++i) gb[i] += tmp[i];
                else
                    for (std::size_t p = 0; p < k; ++p)
                        for (std::size_t j = 0; j < n; ++j) gb[j * k + p] += tmp[p * n + j];
            }
        });
}

// ---------------------------------------------------------------------------
// Convolution and pooling
// ---------------------------------------------------------------------------

// Direct conv over [Cin,H,W] with weight [Cout,Cin,kh,kw], zero padding.
inline Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                     int stride = 1, int pad = 0) {
    if (input.rank() != 3 || weight.rank() != 4 || bias.rank() != 1)
        throw std::invalid_argument("conv2d: ranks input=" + shape_str(input.shape()) +
                                    " weight=" + shape_str(weight.shape()) +
                                    " bias=" + shape_str(bias.shape()));
    if (stride != 1 && stride != 2)
        throw std::invalid_argument("conv2d: stride must be 1 or 2");
    std::size_t cin = input.shape()[0], h = input.shape()[1], w = input.shape()[2];
    std::size_t cout = weight.shape()[0], kh = weight.shape()[2], kw = weight.shape()[3];
    if (weight.shape()[1] != cin || bias.shape()[0] != cout)
        throw std::invalid_argument("conv2d: shape mismatch input=" + shape_str(input.shape()) +
                                    " weight=" + shape_str(weight.shape()) +
                                    " bias=" + shape_str(bias.shape()));
    std::size_t oh = (h + 2 * pad - kh) / stride + 1;
    std::size_t ow = (w + 2 * pad - kw) / stride + 1;
    std::size_t ph = h + 2 * pad, pw = w + 2 * pad;

    // Zero-pad once so the inner loops run without bounds checks.
    auto pad_input = [cin, h, w, ph, pw, pad](const std::vector<double>& src) {
        std::vector<double> out(cin * ph * pw, 0.0);
        for (std::size_t ic = 0; ic < cin; ++ic)
            for (std::size_t y = 0; y < h; ++y)
                std::copy_n(src.data() + (ic * h + y) * w, w,
                            out.data() + (ic * ph + y + pad) * pw + pad);
        return out;
    };

    std::vector<double> padded = pad_input(input.values());
    std::vector<double> v(cout * oh * ow);
    const double* wt = weight.values().data();
    for (std::size_t oc = 0; oc < cout; ++oc) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
            double* vrow = v.data() + (oc * oh + oy) * ow;
            for (std::size_t ox = 0; ox < ow; ++ox) vrow[ox] = bias.values()[oc];
            for (std::size_t ic = 0; ic < cin; ++ic) {
                const double* wp = wt + (oc * cin + ic) * kh * kw;
                for (std::size_t ky = 0; ky < kh; ++ky) {
                    const double* irow = padded.data() + (ic * ph + oy * stride + ky) * pw;
                    for (std::size_t kx = 0; kx < kw; ++kx) {
                        double wv = wp[ky * kw + kx];
                        for (std::size_t ox = 0; ox < ow; ++ox)
                            vrow[ox] += wv * irow[ox * stride + kx];
                    }
                }
            }
        }
    }

    auto in_n = input.node(), w_n = weight.node(), b_n = bias.node();
    return detail::make_result({cout, oh, ow}, std::move(v), {input, weight, bias},
        [in_n, w_n, b_n, cin, h, w, cout, kh, kw, oh, ow, ph, pw, stride, pad, pad_input]
        (const std::vector<double>& g) {
            if (b_n->requires_grad) {
                auto& gb = detail::grad_buf(b_n);
                for (std::size_t oc = 0; oc < cout; ++oc) {
                    double s = 0.0;
                    const double* gp = g.data() + oc * oh * ow;
                    for (std::size_t i = 0; i < oh * ow; ++i) s += gp[i];
                    gb[oc] += s;
                }
            }
            if (w_n->requires_grad) {
                std::vector<double> padded = pad_input(in_n->value);
                auto& gw = detail::grad_buf(w_n);
                for (std::size_t oc = 0; oc < cout; ++oc)
                    for (std::size_t ic = 0; ic < cin; ++ic) {
                        double* gwp = gw.data() + (oc * cin + ic) * kh * kw;
                        for (std::size_t oy = 0; oy < oh; ++oy) {
                            const double* gp = g.data() + (oc * oh + oy) * ow;
                            for (std::size_t ky = 0; ky < kh; ++ky) {
                                const double* irow =
                                    padded.data() + (ic * ph + oy * stride + ky) * pw;
                                for (std::size_t kx = 0; kx < kw; ++kx) {
                                    double s = 0.0;
                                    for (std::size_t ox = 0; ox < ow; ++ox)
                                        s += gp[ox] * irow[ox * stride + kx];
                                    gwp[ky * kw + kx] += s;
                                }
                            }
                        }
                    }
            }
            if (in_n->requires_grad) {
                std::vector<double> gpad(cin * ph * pw, 0.0);
                for (std::size_t oc = 0; oc < cout; ++oc)
                    for (std::size_t ic = 0; ic < cin; ++ic) {
                        const double* wp = w_n->value.data() + (oc * cin + ic) * kh * kw;
                        for (std::size_t oy = 0; oy < oh; ++oy) {
                            const double* gp = g.data() + (oc * oh + oy) * ow;
                            for (std::size_t ky = 0; ky < kh; ++ky) {
                                double* grow = gpad.data() + (ic * ph + oy * stride + ky) * pw;
                                for (std::size_t kx = 0; kx < kw; ++kx) {
                                    double wv = wp[ky * kw + kx];
                                    for (std::size_t ox = 0; ox < ow; ++ox)
                                        grow[ox * stride + kx] += wv * gp[ox];
                                }
                            }
                        }
                    }
                auto& gi = detail::grad_buf(in_n);
                for (std::size_t ic = 0; ic < cin; ++ic)
                    for (std::size_t y = 0; y < h; ++y) {
                        const double* src = gpad.data() + (ic * ph + y + pad) * pw + pad;
                        double* dst = gi.data() + (ic * h + y) * w;
                        for (std::size_t x = 0; x < w; ++x) dst[x] += src[x];
                    }
            }
        });
}

// [C,H,W] -> [C] spatial mean per channel.
inline Tensor global_average_pool(const Tensor& a) {
    if (a.rank() != 3)
        throw std::invalid_argument("global_average_pool: expected [C,H,W], got " +
                                    shape_str(a.shape()));
    std::size_t c = a.shape()[0], hw = a.shape()[1] * a.shape()[2];
    std::vector<double> v(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
        double s = 0.0;
        const double* p = a.values().data() + ch * hw;
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
        v[ch] = s / static_cast<double>(hw);
    }
    auto an = a.node();
    return detail::make_result({c}, std::move(v), {a},
        [an, c, hw](const std::vector<double>& g) {
            auto& ga = detail::grad_buf(an);
            double inv = 1.0 / static_cast<double>(hw);
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t i = 0; i < hw; ++i) ga[ch * hw + i] += g[ch] * inv;
        });
}

// ---------------------------------------------------------------------------
// Non-differentiable helpers
// ---------------------------------------------------------------------------

// Ascending argsort over the flattened values; ties keep ascending index order.
inline std::vector<std::size_t> sort_indices(const Tensor& a) {
    std::vector<std::size_t> idx(a.numel());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) {
        return a.values()[i] < a.values()[j];
    });
    return idx;
}

// ---------------------------------------------------------------------------
// Reverse pass
// ---------------------------------------------------------------------------

// Computes d(loss)/d(leaf) for every requires_grad leaf reachable from loss,
// then clears the recorded graph. Interior grads are dropped; leaf grads stay.
inline void backward(const Tensor& loss) {
    if (loss.numel() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                    shape_str(loss.shape()));
    if (!loss.requires_grad())
        throw std::invalid_argument("backward: loss was not produced through the tape");

    // Creation order is a topological order by construction.
    std::vector<std::shared_ptr<detail::TensorNode>> nodes{loss.node()};
    std::vector<const detail::TensorNode*> seen{loss.node().get()};
    auto visited = [&](const detail::TensorNode* n) {
        return std::find(seen.begin(), seen.end(), n) != seen.end();
    };
    for (std::size_t k = 0; k < nodes.size(); ++k) {
        for (const auto& p : nodes[k]->parents) {
            if (!p->requires_grad || visited(p.get())) continue;
            seen.push_back(p.get());
            nodes.push_back(p);
        }
    }
    std::sort(nodes.begin(), nodes.end(),
              [](const auto& a, const auto& b) { return a->seq > b->seq; });

    for (const auto& n : nodes) n->grad.assign(n->value.size(), 0.0);
    loss.node()->grad[0] = 1.0;

    for (const auto& n : nodes)
        if (n->backprop) n->backprop(n->grad);

    // Clear the tape: interior nodes lose grads and links, leaves keep grads.
    for (const auto& n : nodes) {
        if (!n->is_leaf()) {
            n->grad.clear();
            n->parents.clear();
            n->backprop = nullptr;
        }
    }
}

// ---------------------------------------------------------------------------
// Snapshot file: "CFMT", u32 rank, u32 dims..., little-endian f64 payload.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f64(std::ostream& os, double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline double get_f64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
}

}  // namespace detail

inline void write_snapshot(const Tensor& t, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_snapshot: cannot open " + path);
    os.write("CFMT", 4);
    detail::put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) detail::put_u32(os, static_cast<std::uint32_t>(d));
    for (double v : t.values()) detail::put_f64(os, v);
    if (!os) throw std::runtime_error("write_snapshot: write failed for " + path);
}

inline Tensor read_snapshot(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_snapshot: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "CFMT", 4) != 0)
        throw std::runtime_error("read_snapshot: bad magic in " + path);
    std::uint32_t rank = detail::get_u32(is);
    if (!is || rank > 8) throw std::runtime_error("read_snapshot: bad rank in " + path);
    Shape shape(rank);
    for (auto& d : shape) d = detail::get_u32(is);
    if (!is) throw std::runtime_error("read_snapshot: truncated header in " + path);
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = detail::get_f64(is);
    if (!is) throw std::runtime_error("read_snapshot: truncated payload in " + path);
    return Tensor::from_vector(std::move(shape), std::move(data));
}

// Operator sugar for loss code.
inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }

}  // namespace cfm
