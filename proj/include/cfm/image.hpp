// Float RGB image in [0,1] (planar CHW) plus single-channel masks, binary
// PPM/PGM round-tripping, and the resampling/filter helpers the generator
// and augmentations share.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfm/tensor.hpp"

namespace cfm {

struct Image {
    int h = 0, w = 0;
    std::vector<double> data;  // 3*h*w, planar: channel, then row, then column

    Image() = default;
    Image(int height, int width, double fill = 0.0)
        : h(height), w(width), data(static_cast<std::size_t>(3) * height * width, fill) {}

    double& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * h + y) * w + x]; }
    double at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * h + y) * w + x]; }
    std::size_t numel() const { return data.size(); }

    void clamp01() {
        for (double& v : data) v = std::clamp(v, 0.0, 1.0);
    }

    Tensor to_tensor() const { return Tensor::from_vector({3, static_cast<std::size_t>(h),
                                                           static_cast<std::size_t>(w)}, data); }
};

struct Gray {
    int h = 0, w = 0;
    std::vector<double> data;

    Gray() = default;
    Gray(int height, int width, double fill = 0.0)
        : h(height), w(width), data(static_cast<std::size_t>(h) * w, fill) {}

    double& at(int y, int x) { return data[static_cast<std::size_t>(y) * w + x]; }
    double at(int y, int x) const { return data[static_cast<std::size_t>(y) * w + x]; }
};

inline double mean_value(const Image& img) {
    double s = 0.0;
    for (double v : img.data) s += v;
    return img.data.empty() ? 0.0 : s / static_cast<double>(img.data.size());
}

inline double psnr(const Image& a, const Image& b) {
    if (a.h != b.h || a.w != b.w)
        throw std::invalid_argument("psnr: image sizes differ");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        double d = a.data[i] - b.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.data.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return -10.0 * std::log10(mse);
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

inline double sample_bilinear(const Image& img, int c, double y, double x) {
    y = std::clamp(y, 0.0, static_cast<double>(img.h - 1));
    x = std::clamp(x, 0.0, static_cast<double>(img.w - 1));
    int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
    int y1 = std::min(y0 + 1, img.h - 1), x1 = std::min(x0 + 1, img.w - 1);
    double fy = y - y0, fx = x - x0;
    double v00 = img.at(c, y0, x0), v01 = img.at(c, y0, x1);
    double v10 = img.at(c, y1, x0), v11 = img.at(c, y1, x1);
    return (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
}

inline Image resize_bilinear(const Image& img, int nh, int nw) {
    Image out(nh, nw);
    double sy = static_cast<double>(img.h) / nh, sx = static_cast<double>(img.w) / nw;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < nh; ++y)
            for (int x = 0; x < nw; ++x)
                out.at(c, y, x) = sample_bilinear(img, c, (y + 0.5) * sy - 0.5, (x + 0.5) * sx - 0.5);
    return out;
}

inline Image resize_nearest(const Image& img, int nh, int nw) {
    Image out(nh, nw);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < nh; ++y)
            for (int x = 0; x < nw; ++x) {
                int sy = std::min(static_cast<int>(static_cast<double>(y) * img.h / nh), img.h - 1);
                int sx = std::min(static_cast<int>(static_cast<double>(x) * img.w / nw), img.w - 1);
                out.at(c, y, x) = img.at(c, sy, sx);
            }
    return out;
}

inline Gray resize_bilinear_gray(const Gray& g, int nh, int nw) {
    Gray out(nh, nw);
    double sy = static_cast<double>(g.h) / nh, sx = static_cast<double>(g.w) / nw;
    for (int y = 0; y < nh; ++y)
        for (int x = 0; x < nw; ++x) {
            double yy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(g.h - 1));
            double xx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(g.w - 1));
            int y0 = static_cast<int>(std::floor(yy)), x0 = static_cast<int>(std::floor(xx));
            int y1 = std::min(y0 + 1, g.h - 1), x1 = std::min(x0 + 1, g.w - 1);
            double fy = yy - y0, fx = xx - x0;
            out.at(y, x) = (1 - fy) * ((1 - fx) * g.at(y0, x0) + fx * g.at(y0, x1)) +
                           fy * ((1 - fx) * g.at(y1, x0) + fx * g.at(y1, x1));
        }
    return out;
}

// Integer-pixel translation with edge replication. Nearest semantics keep
// real/fake counterpart frames equal outside the manipulated region.
inline Image translate_int(const Image& img, int dy, int dx) {
    Image out(img.h, img.w);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) {
                int sy = std::clamp(y - dy, 0, img.h - 1);
                int sx = std::clamp(x - dx, 0, img.w - 1);
                out.at(c, y, x) = img.at(c, sy, sx);
            }
    return out;
}

inline Image gaussian_blur(const Image& img, double sigma) {
    if (sigma <= 0.0) return img;
    int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(2 * radius + 1);
    double ksum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        ksum += kernel[i + radius];
    }
    for (double& k : kernel) k /= ksum;

    Image tmp(img.h, img.w), out(img.h, img.w);
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) {
                double s = 0.0;
                for (int i = -radius; i <= radius; ++i)
                    s += kernel[i + radius] * img.at(c, y, std::clamp(x + i, 0, img.w - 1));
                tmp.at(c, y, x) = s;
            }
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) {
                double s = 0.0;
                for (int i = -radius; i <= radius; ++i)
                    s += kernel[i + radius] * tmp.at(c, std::clamp(y + i, 0, img.h - 1), x);
                out.at(c, y, x) = s;
            }
    }
    return out;
}

// ---------------------------------------------------------------------------
// RGB <-> HSV (h, s, v in [0,1); hue wraps)
// ---------------------------------------------------------------------------

inline void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
    double mx = std::max({r, g, b}), mn = std::min({r, g, b});
    v = mx;
    double d = mx - mn;
    s = mx > 0.0 ? d / mx : 0.0;
    if (d == 0.0) {
        h = 0.0;
        return;
    }
    if (mx == r) h = std::fmod((g - b) / d, 6.0);
    else if (mx == g) h = (b - r) / d + 2.0;
    else h = (r - g) / d + 4.0;
    h /= 6.0;
    if (h < 0.0) h += 1.0;
}

inline void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
    h = h - std::floor(h);
    double i = std::floor(h * 6.0);
    double f = h * 6.0 - i;
    double p = v * (1.0 - s);
    double q = v * (1.0 - f * s);
    double t = v * (1.0 - (1.0 - f) * s);
    switch (static_cast<int>(i) % 6) {
        case 0: r = v; g = t; b = p; break;
        case 1: r = q; g = v; b = p; break;
        case 2: r = p; g = v; b = t; break;
        case 3: r = p; g = q; b = v; break;
        case 4: r = t; g = p; b = v; break;
        default: r = v; g = p; b = q; break;
    }
}

// ---------------------------------------------------------------------------
// PPM (P6) / PGM (P5), 8-bit, strict headers
// ---------------------------------------------------------------------------

inline std::uint8_t quantize8(double v) {
    int q = static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    return static_cast<std::uint8_t>(std::clamp(q, 0, 255));
}

inline void write_ppm(const Image& img, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_ppm: cannot open " + path);
    os << "P6\n" << img.w << " " << img.h << "\n255\n";
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(img.h) * img.w * 3);
    std::size_t k = 0;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c) buf[k++] = quantize8(img.at(c, y, x));
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!os) throw std::runtime_error("write_ppm: write failed for " + path);
}

namespace detail {
inline int read_pnm_int(std::istream& is, const std::string& path) {
    int v = 0;
    if (!(is >> v)) throw std::runtime_error("malformed header in " + path);
    return v;
}
}  // namespace detail

inline Image read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_ppm: cannot open " + path);
    std::string magic;
    is >> magic;
    if (magic != "P6") throw std::runtime_error("read_ppm: not a P6 file: " + path);
    int w = detail::read_pnm_int(is, path);
    int h = detail::read_pnm_int(is, path);
    int maxv = detail::read_pnm_int(is, path);
    if (w <= 0 || h <= 0 || maxv != 255)
        throw std::runtime_error("read_ppm: unsupported header in " + path);
    is.get();  // single whitespace after maxval
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(h) * w * 3);
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(is.gcount()) != buf.size())
        throw std::runtime_error("read_ppm: truncated payload in " + path);
    Image img(h, w);
    std::size_t k = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) img.at(c, y, x) = buf[k++] / 255.0;
    return img;
}

inline void write_pgm(const Gray& g, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_pgm: cannot open " + path);
    os << "P5\n" << g.w << " " << g.h << "\n255\n";
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(g.h) * g.w);
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = quantize8(g.data[i]);
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!os) throw std::runtime_error("write_pgm: write failed for " + path);
}

inline Gray read_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_pgm: cannot open " + path);
    std::string magic;
    is >> magic;
    if (magic != "P5") throw std::runtime_error("read_pgm: not a P5 file: " + path);
    int w = detail::read_pnm_int(is, path);
    int h = detail::read_pnm_int(is, path);
    int maxv = detail::read_pnm_int(is, path);
    if (w <= 0 || h <= 0 || maxv != 255)
        throw std::runtime_error("read_pgm: unsupported header in " + path);
    is.get();
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(h) * w);
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(is.gcount()) != buf.size())
        throw std::runtime_error("read_pgm: truncated payload in " + path);
    Gray g(h, w);
    for (std::size_t i = 0; i < buf.size(); ++i) g.data[i] = buf[i] / 255.0;
    return g;
}

}  // namespace cfm
