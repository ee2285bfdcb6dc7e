// Training loop and evaluation protocols. One epoch is a pass over the
// train-split videos, one triplet per video; frames are resampled each
// epoch. All rng streams derive statelessly from (seed, epoch, video), so a
// checkpoint restores a bit-identical continuation.

#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cfm/adam.hpp"
#include "cfm/augment.hpp"
#include "cfm/losses.hpp"
#include "cfm/metrics.hpp"
#include "cfm/model.hpp"
#include "cfm/plc.hpp"
#include "cfm/synthgen.hpp"
#include "cfm/triplet.hpp"

namespace cfm {

struct TrainConfig {
    int epochs = 10;
    double lr = 1e-3;
    int lr_decay_every = 5;
    double lr_decay_factor = 0.5;
    double weight_decay = 1e-5;
    int batch_size = 8;
    double alpha = 0.99;  // teacher EMA (paper-scale value 0.999 stays available)
    double beta = 0.99;   // importance EMA
    LossConfig loss;
    bool aug = true;
    bool isl = true;
    bool lsl = true;
    std::string masking = "plc";     // plc | random | none
    double random_mask_rho = 0.5;    // fixed rate of the random-masking strategy
    bool lsl_student_branch = false; // route positive/negative local embeddings
                                     // through the student instead of the teacher
    bool plc_invert_importance = false;
    std::uint64_t seed = 1;
    ModelConfig model;
    std::string train_family = "all";  // all | A | B | C | D

    bool plc_on() const { return masking == "plc"; }

    double lr_at_epoch(int epoch) const {
        return lr * std::pow(lr_decay_factor, epoch / lr_decay_every);
    }

    void validate() const {
        if (epochs <= 0) throw std::invalid_argument("config: epochs must be positive");
        if (batch_size <= 0) throw std::invalid_argument("config: batch_size must be positive");
        if (lr_decay_every <= 0)
            throw std::invalid_argument("config: lr_decay_every must be positive");
        if (alpha < 0.0 || alpha > 1.0)
            throw std::invalid_argument("config: alpha must be in [0,1]");
        if (beta < 0.0 || beta > 1.0)
            throw std::invalid_argument("config: beta must be in [0,1]");
        if (masking != "plc" && masking != "random" && masking != "none")
            throw std::invalid_argument("config: masking must be plc, random or none");
        if (train_family != "all") family_from_str(train_family);
        loss.validate();
    }
};

// ---------------------------------------------------------------------------
// Flat key=value config files; unknown keys are rejected
// ---------------------------------------------------------------------------

namespace detail {

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::runtime_error("config: expected true/false for " + key + ", got '" + v + "'");
}

}  // namespace detail

inline void apply_config_kv(TrainConfig& cfg, const std::string& key, const std::string& val) {
    if (key == "epochs") cfg.epochs = static_cast<int>(parse_long(val, key));
    else if (key == "lr") cfg.lr = parse_double(val, key);
    else if (key == "lr_decay_every") cfg.lr_decay_every = static_cast<int>(parse_long(val, key));
    else if (key == "lr_decay_factor") cfg.lr_decay_factor = parse_double(val, key);
    else if (key == "weight_decay") cfg.weight_decay = parse_double(val, key);
    else if (key == "batch_size") cfg.batch_size = static_cast<int>(parse_long(val, key));
    else if (key == "alpha") cfg.alpha = parse_double(val, key);
    else if (key == "beta") cfg.beta = parse_double(val, key);
    else if (key == "d_ins") cfg.loss.d_ins = parse_double(val, key);
    else if (key == "s_pos") cfg.loss.s_pos = parse_double(val, key);
    else if (key == "s_neg") cfg.loss.s_neg = parse_double(val, key);
    else if (key == "t_mask") cfg.loss.t_mask = parse_double(val, key);
    else if (key == "uniform_tau") cfg.loss.uniform_tau = detail::parse_bool(val, key);
    else if (key == "w_ce") cfg.loss.w_ce = parse_double(val, key);
    else if (key == "w_ins") cfg.loss.w_ins = parse_double(val, key);
    else if (key == "w_loc") cfg.loss.w_loc = parse_double(val, key);
    else if (key == "aug") cfg.aug = detail::parse_bool(val, key);
    else if (key == "isl") cfg.isl = detail::parse_bool(val, key);
    else if (key == "lsl") cfg.lsl = detail::parse_bool(val, key);
    else if (key == "masking") cfg.masking = val;
    else if (key == "random_mask_rho") cfg.random_mask_rho = parse_double(val, key);
    else if (key == "lsl_student_branch") cfg.lsl_student_branch = detail::parse_bool(val, key);
    else if (key == "plc_invert_importance")
        cfg.plc_invert_importance = detail::parse_bool(val, key);
    else if (key == "local_from_masked") cfg.model.local_from_masked = detail::parse_bool(val, key);
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_long(val, key));
    else if (key == "image") cfg.model.image = static_cast<int>(parse_long(val, key));
    else if (key == "c_star") cfg.model.embed_dim = static_cast<int>(parse_long(val, key));
    else if (key == "head_hidden") cfg.model.head_hidden = static_cast<int>(parse_long(val, key));
    else if (key == "channels") {
        cfg.model.channels.clear();
        std::string cur;
        for (char ch : val + ":") {
            if (ch == ':') {
                if (!cur.empty()) cfg.model.channels.push_back(
                    static_cast<int>(parse_long(cur, key)));
                cur.clear();
            } else cur += ch;
        }
        if (cfg.model.channels.empty())
            throw std::runtime_error("config: channels must list at least one value");
    }
    else if (key == "train_family") cfg.train_family = val;
    else throw std::runtime_error("config: unknown key '" + key + "'");
}

inline TrainConfig load_config(const std::string& path,
                               const std::vector<std::string>& overrides = {}) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path);
    TrainConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config: line " + std::to_string(lineno) +
                                     " is not key=value: '" + line + "'");
        apply_config_kv(cfg, line.substr(0, eq), line.substr(eq + 1));
    }
    for (const auto& ov : overrides) {
        auto eq = ov.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("override is not key=value: '" + ov + "'");
        apply_config_kv(cfg, ov.substr(0, eq), ov.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
}

inline void save_config(const TrainConfig& cfg, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("config: cannot open " + path + " for writing");
    os << "epochs=" << cfg.epochs << "\n";
    os << "lr=" << fmt_double(cfg.lr) << "\n";
    os << "lr_decay_every=" << cfg.lr_decay_every << "\n";
    os << "lr_decay_factor=" << fmt_double(cfg.lr_decay_factor) << "\n";
    os << "weight_decay=" << fmt_double(cfg.weight_decay) << "\n";
    os << "batch_size=" << cfg.batch_size << "\n";
    os << "alpha=" << fmt_double(cfg.alpha) << "\n";
    os << "beta=" << fmt_double(cfg.beta) << "\n";
    os << "d_ins=" << fmt_double(cfg.loss.d_ins) << "\n";
    os << "s_pos=" << fmt_double(cfg.loss.s_pos) << "\n";
    os << "s_neg=" << fmt_double(cfg.loss.s_neg) << "\n";
    os << "t_mask=" << fmt_double(cfg.loss.t_mask) << "\n";
    os << "uniform_tau=" << (cfg.loss.uniform_tau ? "true" : "false") << "\n";
    os << "w_ce=" << fmt_double(cfg.loss.w_ce) << "\n";
    os << "w_ins=" << fmt_double(cfg.loss.w_ins) << "\n";
    os << "w_loc=" << fmt_double(cfg.loss.w_loc) << "\n";
    os << "aug=" << (cfg.aug ? "true" : "false") << "\n";
    os << "isl=" << (cfg.isl ? "true" : "false") << "\n";
    os << "lsl=" << (cfg.lsl ? "true" : "false") << "\n";
    os << "masking=" << cfg.masking << "\n";
    os << "random_mask_rho=" << fmt_double(cfg.random_mask_rho) << "\n";
    os << "lsl_student_branch=" << (cfg.lsl_student_branch ? "true" : "false") << "\n";
    os << "plc_invert_importance=" << (cfg.plc_invert_importance ? "true" : "false") << "\n";
    os << "local_from_masked=" << (cfg.model.local_from_masked ? "true" : "false") << "\n";
    os << "seed=" << cfg.seed << "\n";
    os << "image=" << cfg.model.image << "\n";
    std::string ch;
    for (int c : cfg.model.channels) ch += (ch.empty() ? "" : ":") + std::to_string(c);
    os << "channels=" << ch << "\n";
    os << "c_star=" << cfg.model.embed_dim << "\n";
    os << "head_hidden=" << cfg.model.head_hidden << "\n";
    os << "train_family=" << cfg.train_family << "\n";
}

// ---------------------------------------------------------------------------
// Telemetry
// ---------------------------------------------------------------------------

struct TelemetryRow {
    std::uint64_t iteration = 0;
    int epoch = 0;
    double lr = 0.0;
    double rho = 0.0;
    std::optional<double> change_ratio;  // absent when drop counts differ
    double l_ce = 0.0, l_ins = 0.0, l_loc = 0.0, l_total = 0.0;
};

inline void write_telemetry(const std::vector<TelemetryRow>& rows, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_telemetry: cannot open " + path);
    os << "iteration,epoch,lr,rho,change_ratio,l_ce,l_ins,l_loc,l_total\n";
    for (const auto& r : rows)
        os << r.iteration << "," << r.epoch << "," << fmt_double(r.lr) << ","
           << fmt_double(r.rho) << ","
           << (r.change_ratio ? fmt_double(*r.change_ratio) : std::string())
           << "," << fmt_double(r.l_ce) << "," << fmt_double(r.l_ins) << ","
           << fmt_double(r.l_loc) << "," << fmt_double(r.l_total) << "\n";
}

inline void write_plc_log(const std::vector<TelemetryRow>& rows, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_plc_log: cannot open " + path);
    os << "iteration,rho,change_ratio\n";
    for (const auto& r : rows)
        os << r.iteration << "," << fmt_double(r.rho) << ","
           << (r.change_ratio ? fmt_double(*r.change_ratio) : std::string()) << "\n";
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

class Trainer {
public:
    Trainer(const Dataset& dataset, const TrainConfig& cfg)
        : ds_(&dataset), cfg_(cfg) {
        cfg_.validate();
        model_ = Model::init(cfg_.model, cfg_.seed);
        plc_.beta = cfg_.beta;
        plc_.invert_importance = cfg_.plc_invert_importance;
        train_ids_ = select_train_ids(dataset, cfg_.train_family);
        if (train_ids_.empty())
            throw std::runtime_error("trainer: train split is empty for family '" +
                                     cfg_.train_family + "'");
        bool has_real = false, has_fake = false;
        for (const auto& id : train_ids_)
            (ds_->manifest.find(id)->fake ? has_fake : has_real) = true;
        if (!has_real || !has_fake)
            throw std::runtime_error("trainer: train split needs both classes");
        adam_.lr = cfg_.lr;
        adam_.weight_decay = cfg_.weight_decay;
        adam_.init(trainable_params());
    }

    static std::vector<std::string> select_train_ids(const Dataset& ds,
                                                     const std::string& family) {
        std::vector<std::string> ids;
        for (const auto& e : ds.manifest.entries) {
            if (e.split != "train") continue;
            if (family == "all") {
                ids.push_back(e.id);
                continue;
            }
            Family f = family_from_str(family);
            if (e.fake && e.family == f) ids.push_back(e.id);
            if (!e.fake) {
                // keep the real video iff its counterpart has the family
                for (const auto& o : ds.manifest.entries)
                    if (o.fake && o.source_id == e.id && o.family == f) {
                        ids.push_back(e.id);
                        break;
                    }
            }
        }
        return ids;
    }

    std::vector<Tensor> trainable_params() {
        std::vector<Tensor> params;
        for (auto& t : model_.student.conv_w) params.push_back(t);
        for (auto& t : model_.student.conv_b) params.push_back(t);
        params.push_back(model_.cls_w);
        params.push_back(model_.cls_b);
        if (cfg_.isl) {
            params.push_back(model_.student.head_w1);
            params.push_back(model_.student.head_b1);
            params.push_back(model_.student.head_w2);
            params.push_back(model_.student.head_b2);
        }
        if (cfg_.lsl) {
            params.push_back(model_.student.local_w);
            params.push_back(model_.student.local_b);
        }
        return params;
    }

    std::size_t iterations_per_epoch() const {
        return (train_ids_.size() + cfg_.batch_size - 1) / cfg_.batch_size;
    }

    bool done() const { return epoch_ >= cfg_.epochs; }

    // One optimizer iteration over the next batch. Returns false once training
    // has completed all epochs.
    bool step() {
        if (done()) return false;
        auto order = epoch_order(epoch_);
        std::size_t begin = iter_in_epoch_ * cfg_.batch_size;
        std::size_t end = std::min(order.size(), begin + cfg_.batch_size);

        adam_.lr = cfg_.lr_at_epoch(epoch_);
        TripletConfig tcfg;
        tcfg.feature_h = cfg_.model.feature_size();
        tcfg.feature_w = cfg_.model.feature_size();
        tcfg.t_mask = cfg_.loss.t_mask;
        tcfg.augment = cfg_.aug;

        std::vector<TripletSample> batch;
        for (std::size_t k = begin; k < end; ++k) {
            auto rng = make_rng(cfg_.seed, stream::kTriplet,
                                static_cast<std::uint64_t>(epoch_), hash_str(order[k]));
            batch.push_back(build_triplet(*ds_, order[k], rng, tcfg));
        }

        std::vector<Tensor> f_anc, f_pos, f_neg;
        for (const auto& t : batch) {
            f_anc.push_back(model_.encode(Branch::Student, t.x_anc.to_tensor()));
            f_pos.push_back(model_.encode(Branch::Teacher, t.x_pos.to_tensor()));
            f_neg.push_back(model_.encode(Branch::Teacher, t.x_neg.to_tensor()));
        }

        // Masking state for this iteration; importance EMA updates before the
        // mask is recomputed, and one mask serves all branches in the batch.
        double rho = 0.0;
        std::optional<double> cr;
        std::size_t channels = static_cast<std::size_t>(cfg_.model.feature_channels());
        if (cfg_.plc_on()) {
            std::vector<double> m_mean(channels, 0.0);
            for (std::size_t k = 0; k < batch.size(); ++k) {
                auto m = channel_importance(f_anc[k], f_pos[k], f_neg[k]);
                for (std::size_t c = 0; c < channels; ++c) m_mean[c] += m[c];
            }
            for (double& v : m_mean) v /= static_cast<double>(batch.size());
            update_importance(plc_, m_mean);
            rho = drop_ratio(epoch_, cfg_.epochs);
            plc_.rho = rho;
            std::vector<bool> mask = compute_mask(plc_);
            cr = mask_change(mask);
            plc_.current_mask = std::move(mask);
        } else if (cfg_.masking == "random") {
            rho = cfg_.random_mask_rho;
            plc_.rho = rho;
            std::size_t k = plc_.drop_count(channels);
            std::vector<std::size_t> idx(channels);
            std::iota(idx.begin(), idx.end(), 0);
            auto rng = make_rng(cfg_.seed, stream::kMask,
                                static_cast<std::uint64_t>(epoch_),
                                static_cast<std::uint64_t>(iter_in_epoch_));
            std::shuffle(idx.begin(), idx.end(), rng);
            std::vector<bool> mask(channels, true);
            for (std::size_t i = 0; i < k; ++i) mask[idx[i]] = false;
            cr = mask_change(mask);
            plc_.current_mask = std::move(mask);
        }

        Tensor ce_sum = Tensor::scalar(0.0);
        Tensor ins_sum = Tensor::scalar(0.0);
        Tensor loc_sum = Tensor::scalar(0.0);
        for (std::size_t k = 0; k < batch.size(); ++k) {
            Tensor fa_hat = apply_mask(f_anc[k], plc_);
            Tensor fp_hat = apply_mask(f_pos[k], plc_);
            Tensor fn_hat = apply_mask(f_neg[k], plc_);

            Tensor y_hat = model_.classify(fa_hat);
            ce_sum = ce_sum + ce_loss(y_hat, batch[k].anchor_fake ? 1.0 : 0.0);

            if (cfg_.isl) {
                Tensor za = model_.project_global(Branch::Student, fa_hat);
                Tensor zp = model_.project_global(Branch::Teacher, fp_hat);
                Tensor zn = model_.project_global(Branch::Teacher, fn_hat);
                ins_sum = ins_sum + instance_loss(za, zp, zn, cfg_.loss.d_ins);
            }
            if (cfg_.lsl) {
                const Tensor& fa_loc = cfg_.model.local_from_masked ? fa_hat : f_anc[k];
                Branch pn_branch = cfg_.lsl_student_branch ? Branch::Student : Branch::Teacher;
                Tensor fp_loc, fn_loc;
                if (cfg_.lsl_student_branch) {
                    fp_loc = model_.encode(Branch::Student, batch[k].x_pos.to_tensor());
                    fn_loc = model_.encode(Branch::Student, batch[k].x_neg.to_tensor());
                    if (cfg_.model.local_from_masked) {
                        fp_loc = apply_mask(fp_loc, plc_);
                        fn_loc = apply_mask(fn_loc, plc_);
                    }
                } else {
                    fp_loc = cfg_.model.local_from_masked ? fp_hat : f_pos[k];
                    fn_loc = cfg_.model.local_from_masked ? fn_hat : f_neg[k];
                }
                Tensor zla = model_.embed_local(Branch::Student, fa_loc);
                Tensor zlp = model_.embed_local(pn_branch, fp_loc);
                Tensor zln = model_.embed_local(pn_branch, fn_loc);
                auto ll = local_loss(zla, zlp, zln, batch[k].labels_anc, batch[k].labels_pos,
                                     batch[k].labels_neg, cfg_.loss);
                loc_sum = loc_sum + ll.loss;
            }
        }
        double inv = 1.0 / static_cast<double>(batch.size());
        Tensor l_ce = scale(ce_sum, inv);
        Tensor l_ins = scale(ins_sum, inv);
        Tensor l_loc = scale(loc_sum, inv);
        Tensor l_total = total_loss(l_ce, l_ins, l_loc, cfg_.loss);
        if (!std::isfinite(l_total.value()))
            throw std::runtime_error("trainer: non-finite loss at iteration " +
                                     std::to_string(global_iter_) + " (epoch " +
                                     std::to_string(epoch_) + ")");

        TelemetryRow row;
        row.iteration = global_iter_;
        row.epoch = epoch_;
        row.lr = adam_.lr;
        row.rho = rho;
        row.change_ratio = cr;
        row.l_ce = l_ce.value();
        row.l_ins = l_ins.value();
        row.l_loc = l_loc.value();
        row.l_total = l_total.value();
        telemetry_.push_back(row);

        backward(l_total);
        auto params = trainable_params();
        adam_step(params, adam_);
        ema_update(model_.teacher, model_.student, cfg_.alpha);

        ++global_iter_;
        if (++iter_in_epoch_ >= iterations_per_epoch()) {
            iter_in_epoch_ = 0;
            ++epoch_;
        }
        return !done();
    }

    void run() {
        while (!done()) step();
    }

    const Model& model() const { return model_; }
    Model& model() { return model_; }
    const PlcState& plc() const { return plc_; }
    const AdamState& adam() const { return adam_; }
    const TrainConfig& config() const { return cfg_; }
    const std::vector<TelemetryRow>& telemetry() const { return telemetry_; }
    int epoch() const { return epoch_; }
    std::uint64_t iteration() const { return global_iter_; }

    // ------------------------------------------------------------------
    // Checkpointing: parameter snapshots + optimizer moments + controller
    // state + the config, enough for a bit-identical continuation.
    // ------------------------------------------------------------------

    void save_checkpoint(const std::string& dir) const {
        namespace fs = std::filesystem;
        fs::create_directories(dir + "/params");
        fs::create_directories(dir + "/adam");
        for (const auto& [name, t] : model_.named_params())
            write_snapshot(t, dir + "/params/" + name + ".cfmt");
        for (std::size_t k = 0; k < adam_.m.size(); ++k) {
            write_snapshot(Tensor::from_vector({adam_.m[k].size()}, adam_.m[k]),
                           dir + "/adam/m" + std::to_string(k) + ".cfmt");
            write_snapshot(Tensor::from_vector({adam_.v[k].size()}, adam_.v[k]),
                           dir + "/adam/v" + std::to_string(k) + ".cfmt");
        }
        if (plc_.initialized)
            write_snapshot(Tensor::from_vector({plc_.m_star.size()}, plc_.m_star),
                           dir + "/plc_m_star.cfmt");
        if (!plc_.current_mask.empty()) {
            std::vector<double> m(plc_.current_mask.size());
            for (std::size_t i = 0; i < m.size(); ++i) m[i] = plc_.current_mask[i] ? 1.0 : 0.0;
            write_snapshot(Tensor::from_vector({m.size()}, m), dir + "/plc_mask.cfmt");
        }
        save_config(cfg_, dir + "/config.cfg");
        std::ofstream os(dir + "/metadata.csv");
        if (!os) throw std::runtime_error("checkpoint: cannot open " + dir + "/metadata.csv");
        os << "key,value\n";
        os << "format_version,1\n";
        os << "arch," << model_.cfg.signature() << "\n";
        os << "step," << adam_.step << "\n";
        os << "iteration," << global_iter_ << "\n";
        os << "epoch," << epoch_ << "\n";
        os << "iter_in_epoch," << iter_in_epoch_ << "\n";
        os << "alpha," << fmt_double(cfg_.alpha) << "\n";
        os << "rng_seed," << cfg_.seed << "\n";
        os << "plc_initialized," << (plc_.initialized ? 1 : 0) << "\n";
        os << "train_family," << cfg_.train_family << "\n";
    }

    static std::map<std::string, std::string> read_metadata(const std::string& dir) {
        auto rows = read_csv(dir + "/metadata.csv");
        if (rows.empty() || rows[0] != std::vector<std::string>{"key", "value"})
            throw std::runtime_error("checkpoint: bad metadata header in " + dir);
        std::map<std::string, std::string> kv;
        for (std::size_t i = 1; i < rows.size(); ++i) {
            if (rows[i].size() != 2)
                throw std::runtime_error("checkpoint: bad metadata row in " + dir);
            kv[rows[i][0]] = rows[i][1];
        }
        return kv;
    }

    static Trainer load_checkpoint(const std::string& dir, const Dataset& dataset) {
        TrainConfig cfg = load_config(dir + "/config.cfg");
        auto meta = read_metadata(dir);
        if (meta["format_version"] != "1")
            throw std::runtime_error("checkpoint: unsupported format version in " + dir);
        if (meta["arch"] != cfg.model.signature())
            throw std::runtime_error("checkpoint: architecture mismatch in " + dir +
                                     " (" + meta["arch"] + " vs " + cfg.model.signature() + ")");
        Trainer tr(dataset, cfg);
        for (auto& [name, t] : tr.model_.named_params()) {
            Tensor loaded = read_snapshot(dir + "/params/" + name + ".cfmt");
            if (loaded.shape() != t.shape())
                throw std::runtime_error("checkpoint: shape mismatch for " + name);
            t.mutable_values() = loaded.values();
        }
        tr.adam_.step = static_cast<std::uint64_t>(parse_long(meta["step"], "step"));
        for (std::size_t k = 0; k < tr.adam_.m.size(); ++k) {
            Tensor m = read_snapshot(dir + "/adam/m" + std::to_string(k) + ".cfmt");
            Tensor v = read_snapshot(dir + "/adam/v" + std::to_string(k) + ".cfmt");
            if (m.numel() != tr.adam_.m[k].size() || v.numel() != tr.adam_.v[k].size())
                throw std::runtime_error("checkpoint: optimizer moment shape mismatch");
            tr.adam_.m[k] = m.values();
            tr.adam_.v[k] = v.values();
        }
        tr.plc_.initialized = meta["plc_initialized"] == "1";
        if (tr.plc_.initialized)
            tr.plc_.m_star = read_snapshot(dir + "/plc_m_star.cfmt").values();
        if (std::filesystem::exists(dir + "/plc_mask.cfmt")) {
            auto mv = read_snapshot(dir + "/plc_mask.cfmt").values();
            tr.plc_.current_mask.assign(mv.size(), true);
            for (std::size_t i = 0; i < mv.size(); ++i)
                tr.plc_.current_mask[i] = mv[i] != 0.0;
        }
        tr.global_iter_ = static_cast<std::uint64_t>(parse_long(meta["iteration"], "iteration"));
        tr.epoch_ = static_cast<int>(parse_long(meta["epoch"], "epoch"));
        tr.iter_in_epoch_ = static_cast<std::size_t>(
            parse_long(meta["iter_in_epoch"], "iter_in_epoch"));
        return tr;
    }

private:
    std::vector<std::string> epoch_order(int epoch) const {
        auto order = train_ids_;
        auto rng = make_rng(cfg_.seed, stream::kShuffle, static_cast<std::uint64_t>(epoch));
        std::shuffle(order.begin(), order.end(), rng);
        return order;
    }

    // Change ratio against the previous iteration's mask; defined only when
    // both masks drop the same nonzero channel count.
    std::optional<double> mask_change(const std::vector<bool>& mask) const {
        if (plc_.current_mask.size() != mask.size()) return std::nullopt;
        std::size_t prev = 0, cur = 0;
        for (bool b : plc_.current_mask)
            if (!b) ++prev;
        for (bool b : mask)
            if (!b) ++cur;
        if (prev != cur || cur == 0) return std::nullopt;
        return change_ratio(plc_.current_mask, mask);
    }

    const Dataset* ds_;
    TrainConfig cfg_;
    Model model_;
    PlcState plc_;
    AdamState adam_;
    std::vector<std::string> train_ids_;
    std::vector<TelemetryRow> telemetry_;
    int epoch_ = 0;
    std::size_t iter_in_epoch_ = 0;
    std::uint64_t global_iter_ = 0;
};

// ---------------------------------------------------------------------------
// Evaluation protocols
// ---------------------------------------------------------------------------

inline double score_frame(const Model& model, const Image& frame) {
    NoGradGuard no_grad;
    Tensor f = model.encode(Branch::Student, frame.to_tensor());
    return model.classify(f).value();
}

template <typename FramePerturb>
inline std::vector<ScoredSample> score_split(const Model& model, const Dataset& ds,
                                             const std::string& split,
                                             FramePerturb&& perturb) {
    std::vector<ScoredSample> out;
    for (const auto& e : ds.manifest.entries) {
        if (e.split != split) continue;
        const SynthVideo& v = ds.video(e.id);
        for (std::size_t k = 0; k < v.frames.size(); ++k) {
            ScoredSample s;
            s.id = e.id + "#" + std::to_string(k);
            s.video_id = e.id;
            s.label = e.fake ? 1 : 0;
            s.score = score_frame(model, perturb(v.frames[k]));
            out.push_back(s);
        }
    }
    return out;
}

inline std::vector<ScoredSample> score_split(const Model& model, const Dataset& ds,
                                             const std::string& split) {
    return score_split(model, ds, split, [](const Image& f) { return f; });
}

// Image- and video-level metrics on one split.
inline std::vector<MetricsRow> evaluate_intra(const Model& model, const Dataset& ds,
                                              const std::string& split = "test") {
    auto frames = score_split(model, ds, split);
    std::vector<MetricsRow> rows;
    rows.push_back(compute_metrics(frames, "intra", split, "image"));
    rows.push_back(compute_metrics(video_level(frames), "intra", split, "video"));
    return rows;
}

// Per-family AUC plus the held-out average, mirroring the cross-manipulation
// table: the training family is excluded from "cross_avg".
inline std::vector<MetricsRow> evaluate_cross_manip(const Model& model, const Dataset& ds,
                                                    const std::string& train_family) {
    if (train_family == "all" || train_family.empty())
        throw std::invalid_argument("cross-manipulation evaluation requires a checkpoint "
                                    "trained on a single family, got '" + train_family + "'");
    Family trained = family_from_str(train_family);
    auto frames = score_split(model, ds, "test");
    std::vector<MetricsRow> rows;
    MetricsRow avg;
    avg.protocol = "cross_manip/train=" + train_family + "/cross_avg";
    avg.split = "test";
    avg.level = "image";
    int held_out = 0;
    for (Family f : {Family::A, Family::B, Family::C, Family::D}) {
        std::vector<ScoredSample> subset;
        for (const auto& s : frames) {
            const ManifestEntry* e = ds.manifest.find(s.video_id);
            if (!e->fake || e->family == f) subset.push_back(s);
        }
        MetricsRow row = compute_metrics(subset, "cross_manip/train=" + train_family +
                                         "/eval=" + family_str(f), "test", "image");
        rows.push_back(row);
        if (f != trained) {
            avg.acc += row.acc;
            avg.auc += row.auc;
            avg.eer += row.eer;
            avg.hter += row.hter;
            avg.n_real += row.n_real;
            avg.n_fake += row.n_fake;
            ++held_out;
        }
    }
    avg.acc /= held_out;
    avg.auc /= held_out;
    avg.eer /= held_out;
    avg.hter /= held_out;
    rows.push_back(avg);
    return rows;
}

// Clean baseline plus the seven perturbations at one severity level.
inline std::vector<MetricsRow> evaluate_robustness(const Model& model, const Dataset& ds,
                                                   int severity = 3) {
    std::vector<MetricsRow> rows;
    auto clean = score_split(model, ds, "test");
    rows.push_back(compute_metrics(clean, "robustness/clean", "test", "image"));
    for (PerturbKind kind : all_perturb_kinds()) {
        PerturbSpec spec{kind, severity};
        auto scored = score_split(model, ds, "test",
                                  [&](const Image& f) { return apply_perturbation(f, spec); });
        rows.push_back(compute_metrics(scored, "robustness/" + perturb_str(kind), "test",
                                       "image"));
    }
    return rows;
}

}  // namespace cfm
