// Procedural paired real/fake video generator. Each real video is a smooth
// random field plus a geometric face layout under a slow per-frame drift;
// its fake counterpart differs from it only inside an elliptical region.

#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "cfm/image.hpp"
#include "cfm/util.hpp"

namespace cfm {

enum class Family { None, A, B, C, D };

inline std::string family_str(Family f) {
    switch (f) {
        case Family::A: return "A";
        case Family::B: return "B";
        case Family::C: return "C";
        case Family::D: return "D";
        default: return "none";
    }
}

inline Family family_from_str(const std::string& s) {
    if (s == "A") return Family::A;
    if (s == "B") return Family::B;
    if (s == "C") return Family::C;
    if (s == "D") return Family::D;
    if (s == "none") return Family::None;
    throw std::runtime_error("unknown manipulation family '" + s + "'");
}

struct FrameDrift {
    int dy = 0, dx = 0;
    double brightness = 0.0;
};

struct SynthVideo {
    std::string id;
    std::vector<Image> frames;
    bool fake = false;
    Family family = Family::None;
    std::vector<Gray> region_masks;  // per frame; fake videos only
    std::string source_id;           // fake videos only
    std::vector<FrameDrift> drift;   // generation metadata, not serialized
};

struct GenConfig {
    int height = 64;
    int width = 64;
    int frames = 8;
};

// ---------------------------------------------------------------------------
// Real video generation
// ---------------------------------------------------------------------------

namespace detail {

inline void add_gaussian_bump(Image& img, double cy, double cx, double sigma,
                              const double amp[3]) {
    double inv = 1.0 / (2.0 * sigma * sigma);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
            double g = std::exp(-d2 * inv);
            for (int c = 0; c < 3; ++c) img.at(c, y, x) += amp[c] * g;
        }
}

inline void fill_disk(Image& img, double cy, double cx, double r, const double delta[3]) {
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r)
                for (int c = 0; c < 3; ++c) img.at(c, y, x) += delta[c];
}

inline void fill_ellipse(Gray& mask, double cy, double cx, double ry, double rx) {
    for (int y = 0; y < mask.h; ++y)
        for (int x = 0; x < mask.w; ++x) {
            double dy = (y - cy) / ry, dx = (x - cx) / rx;
            if (dy * dy + dx * dx <= 1.0) mask.at(y, x) = 1.0;
        }
}

inline void fill_triangle(Image& img, double apex_y, double apex_x, double height,
                          double half_base, const double delta[3]) {
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            double t = (y - apex_y) / height;
            if (t < 0.0 || t > 1.0) continue;
            if (std::fabs(x - apex_x) <= t * half_base)
                for (int c = 0; c < 3; ++c) img.at(c, y, x) += delta[c];
        }
}

}  // namespace detail

inline SynthVideo generate_real_video(std::uint64_t seed, const GenConfig& cfg = {}) {
    if (cfg.frames < 3)
        throw std::invalid_argument("generate_real_video: frame count must be >= 3, got " +
                                    std::to_string(cfg.frames));
    auto rng = make_rng(seed, stream::kVideo);
    std::uniform_real_distribution<double> uni(0.0, 1.0);

    Image base(cfg.height, cfg.width, 0.5);
    // Smooth background: a handful of broad color bumps.
    int bumps = 6 + static_cast<int>(uni(rng) * 4);
    for (int i = 0; i < bumps; ++i) {
        double cy = uni(rng) * cfg.height;
        double cx = uni(rng) * cfg.width;
        double sigma = 8.0 + uni(rng) * 16.0;
        double amp[3];
        for (double& a : amp) a = (uni(rng) - 0.5) * 0.5;
        detail::add_gaussian_bump(base, cy, cx, sigma, amp);
    }


    // Face layout: eye disks, nose triangle, mouth ellipse as a gray disk row.
    double fy = cfg.height * (0.40 + 0.08 * (uni(rng) - 0.5));
    double fx = cfg.width * (0.50 + 0.08 * (uni(rng) - 0.5));
    double eye_dx = cfg.width * (0.14 + 0.04 * uni(rng));
    double eye_r = cfg.width * (0.045 + 0.02 * uni(rng));
    const double dark[3] = {-0.28, -0.28, -0.24};
    detail::fill_disk(base, fy, fx - eye_dx, eye_r, dark);
    detail::fill_disk(base, fy, fx + eye_dx, eye_r, dark);
    const double nose[3] = {0.16, 0.10, 0.06};
    detail::fill_triangle(base, fy + cfg.height * 0.04, fx, cfg.height * 0.16,
                          cfg.width * 0.05, nose);
    const double mouth[3] = {-0.20, -0.26, -0.22};
    Gray mouth_mask(cfg.height, cfg.width, 0.0);
    detail::fill_ellipse(mouth_mask, fy + cfg.height * 0.30, fx,
                         cfg.height * 0.035, cfg.width * (0.10 + 0.03 * uni(rng)));
    for (int y = 0; y < cfg.height; ++y)
        for (int x = 0; x < cfg.width; ++x)
            if (mouth_mask.at(y, x) > 0.0)
                for (int c = 0; c < 3; ++c) base.at(c, y, x) += mouth[c];
    base.clamp01();

    SynthVideo video;
    video.id = "v" + std::to_string(seed);
    video.fake = false;
    video.family = Family::None;

    // Slow drift: small integer translation walk plus a brightness wave.
    double bright_amp = 0.01 + uni(rng) * 0.03;
    double bright_phase = uni(rng) * 6.28318530717958647692;
    int dy = 0, dx = 0;
    std::uniform_int_distribution<int> step(-1, 1);
    for (int k = 0; k < cfg.frames; ++k) {
        if (k > 0) {
            dy = std::clamp(dy + step(rng), -2, 2);
            dx = std::clamp(dx + step(rng), -2, 2);
        }
        FrameDrift d;
        d.dy = dy;
        d.dx = dx;
        d.brightness = bright_amp * std::sin(bright_phase + 0.8 * k);
        video.drift.push_back(d);

        Image frame = translate_int(base, d.dy, d.dx);
        for (double& v : frame.data) v += d.brightness;
        frame.clamp01();
        video.frames.push_back(std::move(frame));
    }
    return video;
}

// ---------------------------------------------------------------------------
// Manipulation
// ---------------------------------------------------------------------------

namespace detail {

struct EllipseSpec {
    double cy, cx, ry, rx;
};

inline double ellipse_coverage(const EllipseSpec& e, int h, int w) {
    Gray m(h, w, 0.0);
    fill_ellipse(m, e.cy, e.cx, e.ry, e.rx);
    double s = 0.0;
    for (double v : m.data) s += v;
    return s / static_cast<double>(h * w);
}

// Procedural replacement texture: a soft sinusoid pattern plus a per-channel
// tone offset, sampled in drift-compensated coordinates so it sticks to the
// face. Kept low-contrast so the cue is the foreign color pattern rather
// than raw gradient energy.
inline double texture_value(int c, double y, double x, double freq, double angle,
                            const double tone[3]) {
    double u = std::cos(angle) * y + std::sin(angle) * x;
    double v = -std::sin(angle) * y + std::cos(angle) * x;
    double s = 0.5 + 0.26 * std::sin(freq * u) * std::cos(0.7 * freq * v);
    return s + tone[c];
}

}  // namespace detail

inline SynthVideo manipulate_video(const SynthVideo& real, Family family,
                                   std::uint64_t seed) {
    if (family == Family::None)
        throw std::invalid_argument("manipulate_video: family must be A, B, C or D");
    if (real.frames.empty())
        throw std::invalid_argument("manipulate_video: source video has no frames");
    int h = real.frames[0].h, w = real.frames[0].w;
    auto rng = make_rng(seed, stream::kMask);
    std::uniform_real_distribution<double> uni(0.0, 1.0);

    // Seeded ellipse with 2%-40% coverage even after the drift; bounded retries.
    detail::EllipseSpec ell{};
    bool ok = false;
    for (int attempt = 0; attempt < 32 && !ok; ++attempt) {
        ell.cy = h * (0.34 + 0.32 * uni(rng));
        ell.cx = w * (0.34 + 0.32 * uni(rng));
        ell.ry = h * (0.16 + 0.14 * uni(rng));
        ell.rx = w * (0.16 + 0.14 * uni(rng));
        ok = true;
        for (const auto& d : real.drift) {
            double cov = detail::ellipse_coverage(
                {ell.cy + d.dy, ell.cx + d.dx, ell.ry, ell.rx}, h, w);
            if (cov < 0.02 || cov > 0.40) ok = false;
        }
    }
    if (!ok)
        throw std::runtime_error("manipulate_video: could not place a valid region for " +
                                 real.id);

    double tex_freq = 0.7 + uni(rng) * 0.7;
    double tex_angle = uni(rng) * 3.14159265358979323846;
    double tone[3];
    for (double& t : tone) t = (uni(rng) < 0.5 ? -1.0 : 1.0) * (0.10 + 0.12 * uni(rng));
    double hue_shift = (uni(rng) < 0.5 ? -1.0 : 1.0) * (0.12 + 0.10 * uni(rng));
    double contrast = 1.5 + 0.3 * uni(rng);
    double warp_amp = 3.0 + 1.5 * uni(rng);
    double warp_freq = 0.5 + 0.4 * uni(rng);
    double warp_phase = uni(rng) * 6.28318530717958647692;
    double smear_angle = uni(rng) * 3.14159265358979323846;
    double smear_len = 9.0 + 4.0 * uni(rng);

    SynthVideo fake;
    fake.id = real.id + "_" + family_str(family);
    fake.fake = true;
    fake.family = family;
    fake.source_id = real.id;
    fake.drift = real.drift;

    for (std::size_t k = 0; k < real.frames.size(); ++k) {
        const Image& src = real.frames[k];
        const FrameDrift& d = real.drift[k];
        Gray mask(h, w, 0.0);
        detail::fill_ellipse(mask, ell.cy + d.dy, ell.cx + d.dx, ell.ry, ell.rx);

        Image out = src;
        switch (family) {
            case Family::A: {
                // Texture replacement, offset to match the region's mean.
                double region_mean = 0.0, tex_mean = 0.0;
                std::size_t count = 0;
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x)
                        if (mask.at(y, x) > 0.0)
                            for (int c = 0; c < 3; ++c) {
                                region_mean += src.at(c, y, x);
                                tex_mean += detail::texture_value(
                                    c, y - d.dy, x - d.dx, tex_freq, tex_angle, tone);
                                ++count;
                            }
                double offset = count ? (region_mean - tex_mean) / count : 0.0;
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x)
                        if (mask.at(y, x) > 0.0)
                            for (int c = 0; c < 3; ++c)
                                out.at(c, y, x) = detail::texture_value(
                                    c, y - d.dy, x - d.dx, tex_freq, tex_angle, tone) + offset;
                break;
            }
            case Family::B: {
                // Strong directional blur: face parts smear into streaks.
                double dy2 = std::sin(smear_angle), dx2 = std::cos(smear_angle);
                int half = static_cast<int>(smear_len / 2.0);
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x)
                        if (mask.at(y, x) > 0.0)
                            for (int c = 0; c < 3; ++c) {
                                double s = 0.0;
                                for (int i = -half; i <= half; ++i)
                                    s += sample_bilinear(src, c, y + dy2 * i, x + dx2 * i);
                                out.at(c, y, x) = s / (2 * half + 1);
                            }
                break;
            }
            case Family::C: {
                double region_mean = 0.0;
                std::size_t count = 0;
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x)
                        if (mask.at(y, x) > 0.0)
                            for (int c = 0; c < 3; ++c) {
                                region_mean += src.at(c, y, x);
                                ++count;
                            }
                if (count) region_mean /= count;
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x)
                        if (mask.at(y, x) > 0.0) {
                            double hh, ss, vv;
                            rgb_to_hsv(src.at(0, y, x), src.at(1, y, x), src.at(2, y, x),
                                       hh, ss, vv);
                            double r, g, b;
                            hsv_to_rgb(hh + hue_shift, ss, vv, r, g, b);
                            out.at(0, y, x) = region_mean + contrast * (r - region_mean);
                            out.at(1, y, x) = region_mean + contrast * (g - region_mean);
                            out.at(2, y, x) = region_mean + contrast * (b - region_mean);
                        }
                break;
            }
            case Family::D: {
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x)
                        if (mask.at(y, x) > 0.0) {
                            double wy = warp_amp * std::sin(warp_freq * (x - d.dx) + warp_phase);
                            double wx = warp_amp * std::cos(warp_freq * (y - d.dy) + warp_phase);
                            for (int c = 0; c < 3; ++c)
                                out.at(c, y, x) = sample_bilinear(src, c, y + wy, x + wx);
                        }
                break;
            }
            default: break;
        }
        out.clamp01();
        fake.frames.push_back(std::move(out));
        fake.region_masks.push_back(std::move(mask));
    }
    return fake;
}

// ---------------------------------------------------------------------------
// Dataset manifest and directory layout
// ---------------------------------------------------------------------------

struct ManifestEntry {
    std::string id;
    bool fake = false;
    Family family = Family::None;
    std::string split;      // "train" or "test"
    std::string source_id;  // empty for real videos
    std::string path;       // relative to the dataset root
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::uint64_t seed = 0;

    const ManifestEntry* find(const std::string& id) const {
        for (const auto& e : entries)
            if (e.id == id) return &e;
        return nullptr;
    }

    void validate() const {
        std::set<std::string> ids;
        for (const auto& e : entries) {
            if (!ids.insert(e.id).second)
                throw std::runtime_error("manifest: duplicate id '" + e.id + "'");
            if (e.split != "train" && e.split != "test")
                throw std::runtime_error("manifest: bad split '" + e.split + "' for " + e.id);
        }
        for (const auto& e : entries) {
            if (!e.fake) continue;
            const ManifestEntry* src = find(e.source_id);
            if (!src)
                throw std::runtime_error("manifest: fake '" + e.id +
                                         "' has missing source '" + e.source_id + "'");
            if (src->split != e.split)
                throw std::runtime_error("manifest: '" + e.id + "' and its source '" +
                                         e.source_id + "' straddle train/test");
        }
    }
};

struct DatasetConfig {
    GenConfig gen;
    int sources = 100;        // real videos; each gets one fake counterpart
    double test_fraction = 0.2;
};

// In-memory dataset: manifest plus loaded videos keyed by id.
struct Dataset {
    DatasetManifest manifest;
    std::map<std::string, SynthVideo> videos;

    const SynthVideo& video(const std::string& id) const {
        auto it = videos.find(id);
        if (it == videos.end()) throw std::runtime_error("dataset: unknown video '" + id + "'");
        return it->second;
    }

    std::vector<std::string> split_ids(const std::string& split) const {
        std::vector<std::string> out;
        for (const auto& e : manifest.entries)
            if (e.split == split) out.push_back(e.id);
        return out;
    }
};

inline Dataset generate_dataset(std::uint64_t seed, const DatasetConfig& cfg = {}) {
    Dataset ds;
    ds.manifest.seed = seed;
    std::vector<Family> cycle{Family::A, Family::B, Family::C, Family::D};

    int n_test = static_cast<int>(cfg.sources * cfg.test_fraction + 0.5);
    std::vector<int> order(cfg.sources);
    std::iota(order.begin(), order.end(), 0);
    auto split_rng = make_rng(seed, stream::kShuffle);
    std::shuffle(order.begin(), order.end(), split_rng);
    std::vector<std::string> splits(cfg.sources, "train");
    for (int i = 0; i < n_test && i < cfg.sources; ++i) splits[order[i]] = "test";

    for (int i = 0; i < cfg.sources; ++i) {
        std::uint64_t vid_seed = derive_seed(seed, stream::kVideo, static_cast<std::uint64_t>(i));
        SynthVideo real = generate_real_video(vid_seed, cfg.gen);
        real.id = "v" + std::to_string(i);
        Family fam = cycle[i % cycle.size()];
        SynthVideo fake = manipulate_video(real, fam,
                                           derive_seed(seed, stream::kMask,
                                                       static_cast<std::uint64_t>(i)));

        ds.manifest.entries.push_back({real.id, false, Family::None, splits[i], "",
                                       "videos/" + real.id});
        ds.manifest.entries.push_back({fake.id, true, fam, splits[i], real.id,
                                       "videos/" + fake.id});
        ds.videos[real.id] = std::move(real);
        ds.videos[fake.id] = std::move(fake);
    }
    ds.manifest.validate();
    return ds;
}

inline void write_dataset(const Dataset& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream os(dir + "/manifest.csv");
    if (!os) throw std::runtime_error("write_dataset: cannot open " + dir + "/manifest.csv");
    os << "id,label,family,split,source_id,path\n";
    for (const auto& e : ds.manifest.entries)
        os << e.id << "," << (e.fake ? "fake" : "real") << "," << family_str(e.family)
           << "," << e.split << "," << e.source_id << "," << e.path << "\n";
    os << std::flush;

    for (const auto& [id, video] : ds.videos) {
        std::string vdir = dir + "/videos/" + id;
        fs::create_directories(vdir);
        for (std::size_t k = 0; k < video.frames.size(); ++k)
            write_ppm(video.frames[k], vdir + "/frame_" + std::to_string(k) + ".ppm");
        for (std::size_t k = 0; k < video.region_masks.size(); ++k)
            write_pgm(video.region_masks[k], vdir + "/mask_" + std::to_string(k) + ".pgm");
    }
}

inline Dataset read_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    auto rows = read_csv(dir + "/manifest.csv");
    if (rows.empty() || rows[0] != std::vector<std::string>{"id", "label", "family",
                                                            "split", "source_id", "path"})
        throw std::runtime_error("read_dataset: bad or missing header in " + dir +
                                 "/manifest.csv");
    Dataset ds;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& f = rows[r];
        if (f.size() != 6)
            throw std::runtime_error("read_dataset: bad row " + std::to_string(r) + " in " +
                                     dir + "/manifest.csv");
        ManifestEntry e;
        e.id = f[0];
        if (f[1] == "fake") e.fake = true;
        else if (f[1] == "real") e.fake = false;
        else throw std::runtime_error("read_dataset: bad label '" + f[1] + "' for " + e.id);
        e.family = family_from_str(f[2]);
        e.split = f[3];
        e.source_id = f[4];
        e.path = f[5];
        ds.manifest.entries.push_back(e);
    }
    ds.manifest.validate();

    for (const auto& e : ds.manifest.entries) {
        SynthVideo v;
        v.id = e.id;
        v.fake = e.fake;
        v.family = e.family;
        v.source_id = e.source_id;
        std::string vdir = dir + "/" + e.path;
        for (int k = 0;; ++k) {
            std::string fpath = vdir + "/frame_" + std::to_string(k) + ".ppm";
            if (!fs::exists(fpath)) break;
            v.frames.push_back(read_ppm(fpath));
        }
        if (v.frames.size() < 3)
            throw std::runtime_error("read_dataset: video '" + e.id + "' has fewer than 3 frames");
        if (e.fake) {
            for (std::size_t k = 0; k < v.frames.size(); ++k) {
                std::string mpath = vdir + "/mask_" + std::to_string(k) + ".pgm";
                if (!fs::exists(mpath))
                    throw std::runtime_error("read_dataset: missing mask for fake video '" +
                                             e.id + "' frame " + std::to_string(k));
                Gray m = read_pgm(mpath);
                for (double& x : m.data) x = x > 0.5 ? 1.0 : 0.0;
                v.region_masks.push_back(std::move(m));
            }
        }
        ds.videos[e.id] = std::move(v);
    }
    return ds;
}

// Real videos have no stored region mask; reported as absent rather than a file error.
inline std::optional<Gray> stored_mask(const Dataset& ds, const std::string& id,
                                       std::size_t frame) {
    const SynthVideo& v = ds.video(id);
    if (!v.fake || frame >= v.region_masks.size()) return std::nullopt;
    return v.region_masks[frame];
}

}  // namespace cfm
