// Classification metrics with explicit conventions: fake is the positive
// class (label 1), AUC uses midrank tie credit, EER interpolates the ROC
// linearly, thresholds are always explicit.

#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfm/util.hpp"

namespace cfm {

struct ScoredSample {
    std::string id;
    std::string video_id;
    double score = 0.0;  // higher = more fake
    int label = 0;       // 0 real, 1 fake
};

namespace detail {

inline void require_both_classes(const std::vector<ScoredSample>& samples, const char* op) {
    bool has0 = false, has1 = false;
    for (const auto& s : samples) {
        if (!std::isfinite(s.score))
            throw std::invalid_argument(std::string(op) + ": non-finite score for '" +
                                        s.id + "'");
        (s.label ? has1 : has0) = true;
    }
    if (!has0 || !has1)
        throw std::invalid_argument(std::string(op) + ": both classes must be present");
}

// Deterministic order: by score, ties by id.
inline std::vector<ScoredSample> sorted_by_score(std::vector<ScoredSample> samples) {
    std::stable_sort(samples.begin(), samples.end(),
                     [](const ScoredSample& a, const ScoredSample& b) {
                         if (a.score != b.score) return a.score < b.score;
                         return a.id < b.id;
                     });
    return samples;
}

}  // namespace detail

// Mann-Whitney statistic: P(score_fake > score_real) + 0.5 P(tie), computed
// with midranks over one sort.
inline double roc_auc(const std::vector<ScoredSample>& samples) {
    detail::require_both_classes(samples, "roc_auc");
    auto sorted = detail::sorted_by_score(samples);
    std::size_t n = sorted.size();
    double pos_rank_sum = 0.0;
    std::size_t n_pos = 0, n_neg = 0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && sorted[j].score == sorted[i].score) ++j;
        double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (std::size_t k = i; k < j; ++k)
            if (sorted[k].label) pos_rank_sum += midrank;
        i = j;
    }
    for (const auto& s : sorted) (s.label ? n_pos : n_neg)++;
    double p = static_cast<double>(n_pos);
    return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(n_neg));
}

// Empirical step rates at an explicit threshold: predict fake iff score >= t.
inline double far_at(const std::vector<ScoredSample>& samples, double threshold) {
    std::size_t real = 0, accepted = 0;
    for (const auto& s : samples)
        if (s.label == 0) {
            ++real;
            if (s.score >= threshold) ++accepted;
        }
    return real ? static_cast<double>(accepted) / real : 0.0;
}

inline double frr_at(const std::vector<ScoredSample>& samples, double threshold) {
    std::size_t fake = 0, rejected = 0;
    for (const auto& s : samples)
        if (s.label == 1) {
            ++fake;
            if (s.score < threshold) ++rejected;
        }
    return fake ? static_cast<double>(rejected) / fake : 0.0;
}

struct EerResult {
    double eer = 0.0;
    double threshold = 0.0;
    double far = 0.0;  // rates at the crossing, on the interpolated ROC
    double frr = 0.0;
};

// Walks thresholds from below the minimum score upward; FAR falls and FRR
// rises, and the crossing is resolved by linear interpolation between the
// two adjacent ROC points (where |FAR-FRR| vanishes).
inline EerResult eer(const std::vector<ScoredSample>& samples) {
    detail::require_both_classes(samples, "eer");
    auto sorted = detail::sorted_by_score(samples);
    std::vector<double> thresholds;
    thresholds.push_back(sorted.front().score - 1.0);
    for (const auto& s : sorted)
        if (thresholds.back() != s.score) thresholds.push_back(s.score);
    thresholds.push_back(sorted.back().score + 1.0);

    double prev_t = thresholds[0];
    double prev_far = far_at(samples, prev_t), prev_frr = frr_at(samples, prev_t);
    double prev_diff = prev_far - prev_frr;  // starts at +1
    for (std::size_t k = 1; k < thresholds.size(); ++k) {
        double t = thresholds[k];
        double far = far_at(samples, t), frr = frr_at(samples, t);
        double diff = far - frr;
        if (diff == 0.0) return {0.5 * (far + frr), t, far, frr};
        if (prev_diff > 0.0 && diff < 0.0) {
            // Linear interpolation of both rates over [prev_t, t].
            double a = prev_diff / (prev_diff - diff);
            double cross_far = prev_far + a * (far - prev_far);
            double cross_frr = prev_frr + a * (frr - prev_frr);
            return {0.5 * (cross_far + cross_frr), prev_t + a * (t - prev_t),
                    cross_far, cross_frr};
        }
        prev_diff = diff;
        prev_far = far;
        prev_frr = frr;
        prev_t = t;
    }
    // Unreachable: the endpoint rates are (1,0) and (0,1).
    return {0.5 * (prev_far + prev_frr), prev_t, prev_far, prev_frr};
}

inline double accuracy(const std::vector<ScoredSample>& samples, double threshold = 0.5) {
    if (samples.empty()) throw std::invalid_argument("accuracy: no samples");
    std::size_t correct = 0;
    for (const auto& s : samples) {
        int pred = s.score >= threshold ? 1 : 0;
        if (pred == s.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(samples.size());
}

inline double hter(const std::vector<ScoredSample>& samples, double threshold) {
    detail::require_both_classes(samples, "hter");
    return 0.5 * (far_at(samples, threshold) + frr_at(samples, threshold));
}

// One sample per video: the arithmetic mean of its frame scores.
inline std::vector<ScoredSample> video_level(const std::vector<ScoredSample>& samples) {
    std::map<std::string, ScoredSample> agg;
    std::map<std::string, std::size_t> counts;
    for (const auto& s : samples) {
        auto [it, inserted] = agg.try_emplace(s.video_id, ScoredSample{s.video_id, s.video_id,
                                                                       0.0, s.label});
        if (!inserted && it->second.label != s.label)
            throw std::invalid_argument("video_level: mixed labels within video '" +
                                        s.video_id + "'");
        it->second.score += s.score;
        counts[s.video_id]++;
    }
    std::vector<ScoredSample> out;
    out.reserve(agg.size());
    for (auto& [id, s] : agg) {
        s.score /= static_cast<double>(counts[id]);
        out.push_back(s);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Report rows: protocol, split, level, ACC, AUC, EER, HTER, n_real, n_fake
// ---------------------------------------------------------------------------

struct MetricsRow {
    std::string protocol;
    std::string split;
    std::string level;  // "image" or "video"
    double acc = 0.0, auc = 0.0, eer = 0.0, hter = 0.0;
    std::size_t n_real = 0, n_fake = 0;
};

inline MetricsRow compute_metrics(const std::vector<ScoredSample>& samples,
                                  const std::string& protocol, const std::string& split,
                                  const std::string& level, double threshold = 0.5) {
    MetricsRow row;
    row.protocol = protocol;
    row.split = split;
    row.level = level;
    row.acc = accuracy(samples, threshold);
    row.auc = roc_auc(samples);
    row.eer = eer(samples).eer;
    row.hter = hter(samples, threshold);
    for (const auto& s : samples) (s.label ? row.n_fake : row.n_real)++;
    return row;
}

inline void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_metrics_csv: cannot open " + path);
    os << "protocol,split,level,acc,auc,eer,hter,n_real,n_fake\n";
    for (const auto& r : rows)
        os << r.protocol << "," << r.split << "," << r.level << "," << fmt_double(r.acc)
           << "," << fmt_double(r.auc) << "," << fmt_double(r.eer) << ","
           << fmt_double(r.hter) << "," << r.n_real << "," << r.n_fake << "\n";
}

inline std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
    auto rows = read_csv(path);
    if (rows.empty() || rows[0].size() != 9 || rows[0][0] != "protocol")
        throw std::runtime_error("read_metrics_csv: bad header in " + path);
    std::vector<MetricsRow> out;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& f = rows[i];
        if (f.size() != 9)
            throw std::runtime_error("read_metrics_csv: bad row in " + path);
        MetricsRow r;
        r.protocol = f[0];
        r.split = f[1];
        r.level = f[2];
        r.acc = parse_double(f[3], "acc");
        r.auc = parse_double(f[4], "auc");
        r.eer = parse_double(f[5], "eer");
        r.hter = parse_double(f[6], "hter");
        r.n_real = static_cast<std::size_t>(parse_long(f[7], "n_real"));
        r.n_fake = static_cast<std::size_t>(parse_long(f[8], "n_fake"));
        out.push_back(r);
    }
    return out;
}

}  // namespace cfm
