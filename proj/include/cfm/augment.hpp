// Prior-knowledge-agnostic augmentation families and the seven robustness
// perturbations. Every random draw is captured in the spec object, so
// applying the same spec twice (or to the anchor/negative pair) reproduces
// identical pixels.

#pragma once

#include <algorithm>
#include <array>
#include <numeric>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "cfm/image.hpp"
#include "cfm/util.hpp"

namespace cfm {

// ---------------------------------------------------------------------------
// Block-DCT compression surrogate
// ---------------------------------------------------------------------------

namespace detail {

// Standard 8x8 luminance quantization table.
inline const std::array<double, 64>& luma_table() {
    static const std::array<double, 64> t = {
        16, 11, 10, 16, 24, 40, 51, 61,
        12, 12, 14, 19, 26, 58, 60, 55,
        14, 13, 16, 24, 40, 57, 69, 56,
        14, 17, 22, 29, 51, 87, 80, 62,
        18, 22, 37, 56, 68, 109, 103, 77,
        24, 35, 55, 64, 81, 104, 113, 92,
        49, 64, 78, 87, 103, 121, 120, 101,
        72, 92, 95, 98, 112, 100, 103, 99};
    return t;
}

// Orthonormal type-II DCT basis, cached: basis[k][n] = c_k cos(pi (n+.5) k / 8).
inline const std::array<std::array<double, 8>, 8>& dct_basis() {
    static const auto basis = [] {
        constexpr double pi = 3.14159265358979323846;
        std::array<std::array<double, 8>, 8> b{};
        for (int k = 0; k < 8; ++k) {
            double c = k == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
            for (int n = 0; n < 8; ++n) b[k][n] = c * std::cos(pi * (n + 0.5) * k / 8.0);
        }
        return b;
    }();
    return basis;
}

inline void dct8(const double in[8], double out[8]) {
    const auto& b = dct_basis();
    for (int k = 0; k < 8; ++k) {
        double s = 0.0;
        for (int n = 0; n < 8; ++n) s += in[n] * b[k][n];
        out[k] = s;
    }
}

inline void idct8(const double in[8], double out[8]) {
    const auto& b = dct_basis();
    for (int n = 0; n < 8; ++n) {
        double s = 0.0;
        for (int k = 0; k < 8; ++k) s += in[k] * b[k][n];
        out[n] = s;
    }
}

}  // namespace detail

// Per 8x8 block: 2-D type-II DCT per channel, quantize with the luminance
// table scaled by 50/q (q<50) or 2-q/50, dequantize, inverse DCT, clamp.
// Pixels are taken in 0..255 scale so the table magnitudes apply.
inline Image dct_compress(const Image& img, double q) {
    if (q < 10.0 || q > 90.0)
        throw std::invalid_argument("dct_compress: q must be in [10,90], got " +
                                    std::to_string(q));
    double qscale = q < 50.0 ? 50.0 / q : 2.0 - q / 50.0;
    std::array<double, 64> table;
    for (int i = 0; i < 64; ++i)
        table[i] = std::max(1.0, detail::luma_table()[i] * qscale);

    Image out(img.h, img.w);
    double block[64], tmp[64], coef[64];
    for (int c = 0; c < 3; ++c)
        for (int by = 0; by < img.h; by += 8)
            for (int bx = 0; bx < img.w; bx += 8) {
                // Edge blocks replicate border pixels.
                for (int y = 0; y < 8; ++y)
                    for (int x = 0; x < 8; ++x) {
                        int sy = std::min(by + y, img.h - 1);
                        int sx = std::min(bx + x, img.w - 1);
                        block[y * 8 + x] = img.at(c, sy, sx) * 255.0 - 128.0;
                    }
                for (int y = 0; y < 8; ++y) detail::dct8(block + y * 8, tmp + y * 8);
                for (int x = 0; x < 8; ++x) {
                    double col[8], dc[8];
                    for (int y = 0; y < 8; ++y) col[y] = tmp[y * 8 + x];
                    detail::dct8(col, dc);
                    for (int y = 0; y < 8; ++y) coef[y * 8 + x] = dc[y];
                }
                for (int i = 0; i < 64; ++i)
                    coef[i] = std::round(coef[i] / table[i]) * table[i];
                for (int x = 0; x < 8; ++x) {
                    double col[8], dc[8];
                    for (int y = 0; y < 8; ++y) col[y] = coef[y * 8 + x];
                    detail::idct8(col, dc);
                    for (int y = 0; y < 8; ++y) tmp[y * 8 + x] = dc[y];
                }
                for (int y = 0; y < 8; ++y) detail::idct8(tmp + y * 8, block + y * 8);
                for (int y = 0; y < 8 && by + y < img.h; ++y)
                    for (int x = 0; x < 8 && bx + x < img.w; ++x)
                        out.at(c, by + y, bx + x) =
                            std::clamp((block[y * 8 + x] + 128.0) / 255.0, 0.0, 1.0);
            }
    return out;
}

// ---------------------------------------------------------------------------
// Grid shuffle
// ---------------------------------------------------------------------------

inline Image apply_grid_permutation(const Image& img, int g,
                                    const std::vector<std::size_t>& perm) {
    if (g < 1 || img.h % g != 0 || img.w % g != 0)
        throw std::invalid_argument("grid_shuffle: image " + std::to_string(img.h) + "x" +
                                    std::to_string(img.w) + " not divisible by g=" +
                                    std::to_string(g));
    if (perm.size() != static_cast<std::size_t>(g) * g)
        throw std::invalid_argument("grid_shuffle: permutation length mismatch");
    int ch = img.h / g, cw = img.w / g;
    Image out(img.h, img.w);
    for (int cell = 0; cell < g * g; ++cell) {
        int sy = static_cast<int>(perm[cell]) / g, sx = static_cast<int>(perm[cell]) % g;
        int dy = cell / g, dx = cell % g;
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < ch; ++y)
                for (int x = 0; x < cw; ++x)
                    out.at(c, dy * ch + y, dx * cw + x) = img.at(c, sy * ch + y, sx * cw + x);
    }
    return out;
}

inline Image grid_shuffle(const Image& img, int g, std::mt19937_64& rng) {
    std::vector<std::size_t> perm(static_cast<std::size_t>(g) * g);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    return apply_grid_permutation(img, g, perm);
}

// ---------------------------------------------------------------------------
// AugSpec: ordered augmentation steps with all randomness frozen in
// ---------------------------------------------------------------------------

struct BlurStep { double sigma; };
struct DownscaleStep { int factor; };
struct CompressStep { double q; };
struct JitterStep { double brightness, contrast, saturation, hue; };
struct NoiseStep { double sigma; std::uint64_t seed; };
struct GridShuffleStep { int g; std::vector<std::size_t> perm; };

using AugStep = std::variant<BlurStep, DownscaleStep, CompressStep, JitterStep,
                             NoiseStep, GridShuffleStep>;

struct AugSpec {
    std::vector<AugStep> steps;
};

// Each of the four families joins independently with probability 1/2.
// Application order is fixed: blur, downscale, compress, jitter, noise, shuffle.
inline AugSpec sample_aug_spec(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    bool take_hf = uni(rng) < 0.5;
    bool take_color = uni(rng) < 0.5;
    bool take_noise = uni(rng) < 0.5;
    bool take_grid = uni(rng) < 0.5;

    AugSpec spec;
    if (take_hf) {
        double sigma = 0.5 + uni(rng) * 1.5;
        int factor = uni(rng) < 0.5 ? 2 : 4;
        double q = 10.0 + uni(rng) * 80.0;
        spec.steps.push_back(BlurStep{sigma});
        spec.steps.push_back(DownscaleStep{factor});
        spec.steps.push_back(CompressStep{q});
    }
    if (take_color) {
        JitterStep j;
        j.brightness = (uni(rng) - 0.5) * 0.4;
        j.contrast = (uni(rng) - 0.5) * 0.4;
        j.saturation = (uni(rng) - 0.5) * 0.4;
        j.hue = (uni(rng) - 0.5) * 0.2;
        spec.steps.push_back(j);
    }
    if (take_noise) {
        double sigma = 0.01 + uni(rng) * 0.07;
        std::uint64_t seed = rng();
        spec.steps.push_back(NoiseStep{sigma, seed});
    }
    if (take_grid) {
        int g = uni(rng) < 0.5 ? 2 : 4;
        std::vector<std::size_t> perm(static_cast<std::size_t>(g) * g);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        spec.steps.push_back(GridShuffleStep{g, std::move(perm)});
    }
    return spec;
}

namespace detail {

inline double luminance_mean(const Image& img) {
    double s = 0.0;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            s += 0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x);
    return s / (static_cast<double>(img.h) * img.w);
}

inline Image apply_jitter(const Image& img, const JitterStep& j) {
    Image out = img;
    for (double& v : out.data) v += j.brightness;
    out.clamp01();
    double m = luminance_mean(out);
    for (double& v : out.data) v = m + (1.0 + j.contrast) * (v - m);
    out.clamp01();
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x) {
            double gray = 0.299 * out.at(0, y, x) + 0.587 * out.at(1, y, x) +
                          0.114 * out.at(2, y, x);
            for (int c = 0; c < 3; ++c)
                out.at(c, y, x) = gray + (1.0 + j.saturation) * (out.at(c, y, x) - gray);
        }
    out.clamp01();
    if (j.hue != 0.0) {
        for (int y = 0; y < out.h; ++y)
            for (int x = 0; x < out.w; ++x) {
                double h, s, v;
                rgb_to_hsv(out.at(0, y, x), out.at(1, y, x), out.at(2, y, x), h, s, v);
                hsv_to_rgb(h + j.hue, s, v, out.at(0, y, x), out.at(1, y, x), out.at(2, y, x));
            }
        out.clamp01();
    }
    return out;
}

}  // namespace detail

inline Image apply_aug(const Image& img, const AugSpec& spec) {
    Image out = img;
    for (const auto& step : spec.steps) {
        if (const auto* b = std::get_if<BlurStep>(&step)) {
            out = gaussian_blur(out, b->sigma);
        } else if (const auto* d = std::get_if<DownscaleStep>(&step)) {
            Image small = resize_bilinear(out, std::max(1, out.h / d->factor),
                                          std::max(1, out.w / d->factor));
            out = resize_bilinear(small, img.h, img.w);
        } else if (const auto* c = std::get_if<CompressStep>(&step)) {
            out = dct_compress(out, c->q);
        } else if (const auto* j = std::get_if<JitterStep>(&step)) {
            out = detail::apply_jitter(out, *j);
        } else if (const auto* n = std::get_if<NoiseStep>(&step)) {
            std::mt19937_64 rng(n->seed);
            std::normal_distribution<double> gauss(0.0, n->sigma);
            for (double& v : out.data) v += gauss(rng);
        } else if (const auto* s = std::get_if<GridShuffleStep>(&step)) {
            out = apply_grid_permutation(out, s->g, s->perm);
        }
        out.clamp01();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Robustness perturbations: seven kinds, severity 1-5 on a monotone ladder
// ---------------------------------------------------------------------------

enum class PerturbKind {
    Saturation, Contrast, Block, MultiplicativeNoise, MotionBlur, Pixelate, Compress
};

inline const std::vector<PerturbKind>& all_perturb_kinds() {
    static const std::vector<PerturbKind> kinds = {
        PerturbKind::Saturation, PerturbKind::Contrast, PerturbKind::Block,
        PerturbKind::MultiplicativeNoise, PerturbKind::MotionBlur,
        PerturbKind::Pixelate, PerturbKind::Compress};
    return kinds;
}

inline std::string perturb_str(PerturbKind k) {
    switch (k) {
        case PerturbKind::Saturation: return "saturation";
        case PerturbKind::Contrast: return "contrast";
        case PerturbKind::Block: return "block";
        case PerturbKind::MultiplicativeNoise: return "multiplicative-noise";
        case PerturbKind::MotionBlur: return "motion-blur";
        case PerturbKind::Pixelate: return "pixelate";
        case PerturbKind::Compress: return "compress";
    }
    throw std::invalid_argument("perturb_str: unknown kind");
}

inline PerturbKind perturb_from_str(const std::string& s) {
    for (PerturbKind k : all_perturb_kinds())
        if (perturb_str(k) == s) return k;
    throw std::runtime_error("unknown perturbation kind '" + s + "'");
}

struct PerturbSpec {
    PerturbKind kind;
    int severity = 1;  // 1..5
};

// The documented severity ladder. One parameter per (kind, level); each
// column is monotone so PSNR decays with severity.
inline double perturb_param(PerturbKind kind, int severity) {
    if (severity < 1 || severity > 5)
        throw std::invalid_argument("perturbation severity must be 1..5, got " +
                                    std::to_string(severity));
    static const double sat[5] = {0.8, 0.6, 0.4, 0.2, 0.0};       // saturation factor
    static const double con[5] = {0.85, 0.70, 0.55, 0.40, 0.25};  // contrast factor
    static const double blk[5] = {0.15, 0.25, 0.35, 0.45, 0.55};  // occluded side fraction
    static const double noi[5] = {0.05, 0.10, 0.15, 0.22, 0.30};  // noise sigma
    static const double mbl[5] = {3, 5, 7, 9, 11};                // kernel length (px)
    static const double pix[5] = {2, 3, 4, 6, 8};                 // downscale factor
    static const double cmp[5] = {75, 55, 35, 20, 10};            // dct quality
    switch (kind) {
        case PerturbKind::Saturation: return sat[severity - 1];
        case PerturbKind::Contrast: return con[severity - 1];
        case PerturbKind::Block: return blk[severity - 1];
        case PerturbKind::MultiplicativeNoise: return noi[severity - 1];
        case PerturbKind::MotionBlur: return mbl[severity - 1];
        case PerturbKind::Pixelate: return pix[severity - 1];
        case PerturbKind::Compress: return cmp[severity - 1];
    }
    throw std::invalid_argument("perturb_param: unknown kind");
}

inline void write_perturbation_table(const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_perturbation_table: cannot open " + path);
    os << "kind,severity,parameter\n";
    for (PerturbKind k : all_perturb_kinds())
        for (int s = 1; s <= 5; ++s)
            os << perturb_str(k) << "," << s << "," << fmt_double(perturb_param(k, s)) << "\n";
}

inline Image apply_perturbation(const Image& img, const PerturbSpec& spec) {
    double p = perturb_param(spec.kind, spec.severity);
    Image out = img;
    switch (spec.kind) {
        case PerturbKind::Saturation: {
            for (int y = 0; y < out.h; ++y)
                for (int x = 0; x < out.w; ++x) {
                    double gray = 0.299 * out.at(0, y, x) + 0.587 * out.at(1, y, x) +
                                  0.114 * out.at(2, y, x);
                    for (int c = 0; c < 3; ++c)
                        out.at(c, y, x) = gray + p * (out.at(c, y, x) - gray);
                }
            break;
        }
        case PerturbKind::Contrast: {
            double m = detail::luminance_mean(out);
            for (double& v : out.data) v = m + p * (v - m);
            break;
        }
        case PerturbKind::Block: {
            // Rectangles are nested across severities: fixed seeded center,
            // side fraction grows with the level.
            auto rng = make_rng(0xb10cULL, 1);
            std::uniform_real_distribution<double> uni(0.3, 0.7);
            double cy = uni(rng) * img.h, cx = uni(rng) * img.w;
            int hh = static_cast<int>(p * img.h / 2.0), hw = static_cast<int>(p * img.w / 2.0);
            for (int y = std::max(0, static_cast<int>(cy) - hh);
                 y <= std::min(img.h - 1, static_cast<int>(cy) + hh); ++y)
                for (int x = std::max(0, static_cast<int>(cx) - hw);
                     x <= std::min(img.w - 1, static_cast<int>(cx) + hw); ++x)
                    for (int c = 0; c < 3; ++c) out.at(c, y, x) = 0.0;
            break;
        }
        case PerturbKind::MultiplicativeNoise: {
            auto rng = make_rng(0x5eedULL, static_cast<std::uint64_t>(spec.severity));
            std::normal_distribution<double> gauss(0.0, p);
            for (double& v : out.data) v *= 1.0 + gauss(rng);
            break;
        }
        case PerturbKind::MotionBlur: {
            int len = static_cast<int>(p);
            Image blurred(img.h, img.w);
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < img.h; ++y)
                    for (int x = 0; x < img.w; ++x) {
                        double s = 0.0;
                        for (int i = -(len / 2); i <= len / 2; ++i)
                            s += out.at(c, y, std::clamp(x + i, 0, img.w - 1));
                        blurred.at(c, y, x) = s / (2 * (len / 2) + 1);
                    }
            out = blurred;
            break;
        }
        case PerturbKind::Pixelate: {
            int f = static_cast<int>(p);
            Image small = resize_nearest(out, std::max(1, img.h / f), std::max(1, img.w / f));
            out = resize_nearest(small, img.h, img.w);
            break;
        }
        case PerturbKind::Compress: {
            out = dct_compress(out, p);
            break;
        }
    }
    out.clamp01();
    return out;
}

}  // namespace cfm
