#pragma once

// Training loop: standard splat fitting with densification, plus a one-shot
// mask window that learns which Gaussians to prune mid-run. The trainer is
// copyable so a shared prefix can be snapshotted and branched.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gsprune/core.hpp"
#include "gsprune/importance.hpp"
#include "gsprune/loss.hpp"
#include "gsprune/masking.hpp"
#include "gsprune/metrics.hpp"
#include "gsprune/optim.hpp"
#include "gsprune/render.hpp"
#include "gsprune/rng.hpp"

namespace gsprune {

enum class MaskKind {
    kOff,     // plain training, no mask window
    kGumbel,  // stochastic Gumbel-sigmoid gates, learned prune ratio
    kSte,     // straight-through estimator on a hard sigmoid threshold
};

inline const char* mask_kind_name(MaskKind kind) {
    switch (kind) {
        case MaskKind::kOff: return "off";
        case MaskKind::kGumbel: return "gumbel";
        case MaskKind::kSte: return "ste";
    }
    throw std::logic_error("unreachable mask kind");
}

inline MaskKind parse_mask_kind(const std::string& name) {
    if (name == "off") return MaskKind::kOff;
    if (name == "gumbel") return MaskKind::kGumbel;
    if (name == "ste") return MaskKind::kSte;
    throw std::invalid_argument("unknown mask kind: " + name);
}

struct LearningRates {
    double positions = 1.6e-4;  // decays exponentially to positions_final
    double positions_final = 1.6e-6;
    double log_scales = 5e-3;
    double rotations = 1e-3;
    double opacities = 5e-2;
    double sh = 2.5e-3;
    double mask = 0.01;
};

struct TrainConfig {
    std::uint64_t seed = 0;
    std::size_t total_iters = 30000;

    // Mask window [begin, end): gates apply to renders, the mask parameters
    // train, and the prune fires at `end`. begin >= end disables the window.
    std::size_t mask_window_begin = 19500;
    std::size_t mask_window_end = 20000;
    MaskKind mask_kind = MaskKind::kGumbel;
    MaskMode mask_mode = MaskMode::kScoreModulated;
    ScoreMode score_mode = ScoreMode::kRadsplatMax;
    double tau = 0.5;
    double lambda_ssim = 0.2;
    double lambda_m = 5e-4;
    double ste_epsilon = 0.6;
    double gate_prune = 0.5;
    // >= 0: ignore the learned gates and prune exactly ceil(ratio * N) lowest
    // scorers at mask_window_end (fixed-ratio baseline; works with mask off).
    double hard_prune_ratio = -1.0;
    std::size_t score_update_every = 20;
    std::size_t score_subsample = 32;  // max training views per score refresh

    std::size_t densify_interval = 100;
    std::size_t densify_until = 15000;
    double grad_threshold = 2e-4;   // mean pixel-space positional gradient
    double min_opacity = 0.005;     // cull below this at densify steps
    std::size_t opacity_reset_every = 3000;  // 0 disables; never fires in/after the window

    std::size_t psnr_every = 0;  // 0: holdout PSNR only at the final iteration
    LearningRates lr;
    int threads = 1;

    bool mask_enabled() const {
        return mask_kind != MaskKind::kOff && mask_window_begin < mask_window_end;
    }

    // A fixed-ratio prune fires at mask_window_end even with the mask off.
    bool hard_prune_enabled() const {
        return hard_prune_ratio >= 0.0 && mask_window_end > 0 && mask_window_end <= total_iters;
    }

    bool prune_scheduled() const { return mask_enabled() || hard_prune_enabled(); }

    void validate() const {
        if (total_iters == 0) {
            throw std::invalid_argument("config: total_iters must be positive");
        }
        if (prune_scheduled()) {
            if (mask_window_end > total_iters) {
                throw std::invalid_argument("config: mask window must end within total_iters");
            }
            if (densify_until > mask_window_begin) {
                throw std::invalid_argument("config: densification must stop before the mask window");
            }
        }
        if (!(tau > 0.0)) {
            throw std::invalid_argument("config: tau must be positive");
        }
        if (lambda_ssim < 0.0 || lambda_ssim > 1.0) {
            throw std::invalid_argument("config: lambda_ssim must lie in [0, 1]");
        }
        if (lambda_m < 0.0) {
            throw std::invalid_argument("config: lambda_m must be non-negative");
        }
        if (!(ste_epsilon > 0.0 && ste_epsilon < 1.0)) {
            throw std::invalid_argument("config: ste_epsilon must lie in (0, 1)");
        }
        if (!(gate_prune > 0.0 && gate_prune < 1.0)) {
            throw std::invalid_argument("config: gate_prune must lie in (0, 1)");
        }
        if (hard_prune_ratio > 1.0) {
            throw std::invalid_argument("config: hard_prune_ratio must not exceed 1");
        }
        if (score_update_every == 0 || score_subsample == 0) {
            throw std::invalid_argument("config: score refresh settings must be positive");
        }
        if (densify_interval == 0) {
            throw std::invalid_argument("config: densify_interval must be positive");
        }
        if (threads < 0) {
            throw std::invalid_argument("config: threads must be non-negative");
        }
    }

    // Short-run settings sized for small synthetic scenes on one core.
    static TrainConfig desk_preset() {
        TrainConfig cfg;
        cfg.total_iters = 3000;
        cfg.mask_window_begin = 1950;
        cfg.mask_window_end = 2000;
        cfg.score_update_every = 10;
        cfg.score_subsample = 24;
        cfg.densify_interval = 100;
        cfg.densify_until = 1500;
        cfg.opacity_reset_every = 0;
        cfg.lr.mask = 0.3;
        return cfg;
    }
};

// --- flat key=value config text ---------------------------------------------

namespace detail {

template <typename Fn>
void for_each_config_key(TrainConfig& cfg, Fn&& fn) {
    fn("seed", cfg.seed);
    fn("total_iters", cfg.total_iters);
    fn("mask_window_begin", cfg.mask_window_begin);
    fn("mask_window_end", cfg.mask_window_end);
    fn("mask_kind", cfg.mask_kind);
    fn("mask_mode", cfg.mask_mode);
    fn("score_mode", cfg.score_mode);
    fn("tau", cfg.tau);
    fn("lambda_ssim", cfg.lambda_ssim);
    fn("lambda_m", cfg.lambda_m);
    fn("ste_epsilon", cfg.ste_epsilon);
    fn("gate_prune", cfg.gate_prune);
    fn("hard_prune_ratio", cfg.hard_prune_ratio);
    fn("score_update_every", cfg.score_update_every);
    fn("score_subsample", cfg.score_subsample);
    fn("densify_interval", cfg.densify_interval);
    fn("densify_until", cfg.densify_until);
    fn("grad_threshold", cfg.grad_threshold);
    fn("min_opacity", cfg.min_opacity);
    fn("opacity_reset_every", cfg.opacity_reset_every);
    fn("psnr_every", cfg.psnr_every);
    fn("threads", cfg.threads);
    fn("lr_positions", cfg.lr.positions);
    fn("lr_positions_final", cfg.lr.positions_final);
    fn("lr_log_scales", cfg.lr.log_scales);
    fn("lr_rotations", cfg.lr.rotations);
    fn("lr_opacities", cfg.lr.opacities);
    fn("lr_sh", cfg.lr.sh);
    fn("lr_mask", cfg.lr.mask);
}

inline std::string config_value_to_string(double v) { return csv_num(v); }
inline std::string config_value_to_string(std::uint64_t v) { return std::to_string(v); }
inline std::string config_value_to_string(int v) { return std::to_string(v); }
inline std::string config_value_to_string(MaskKind v) { return mask_kind_name(v); }
inline std::string config_value_to_string(MaskMode v) { return mask_mode_name(v); }
inline std::string config_value_to_string(ScoreMode v) { return score_mode_name(v); }

inline void config_value_from_string(const std::string& s, double& out) { out = std::stod(s); }
inline void config_value_from_string(const std::string& s, std::uint64_t& out) {
    out = std::stoull(s);
}
inline void config_value_from_string(const std::string& s, int& out) { out = std::stoi(s); }
inline void config_value_from_string(const std::string& s, MaskKind& out) {
    out = parse_mask_kind(s);
}
inline void config_value_from_string(const std::string& s, MaskMode& out) {
    out = parse_mask_mode(s);
}
inline void config_value_from_string(const std::string& s, ScoreMode& out) {
    out = parse_score_mode(s);
}

inline std::string config_trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

}  // namespace detail

inline std::string serialize_config(const TrainConfig& cfg) {
    std::string out;
    TrainConfig copy = cfg;
    detail::for_each_config_key(copy, [&out](const char* key, auto& value) {
        out += std::string(key) + " = " + detail::config_value_to_string(value) + "\n";
    });
    return out;
}

// Parses "key = value" lines over `base`; '#' starts a comment.
inline TrainConfig parse_config(const std::string& text, TrainConfig base) {
    TrainConfig cfg = std::move(base);
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            line = line.substr(0, hash);
        }
        line = detail::config_trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("config: malformed line '" + line + "'");
        }
        const std::string key = detail::config_trim(line.substr(0, eq));
        const std::string value = detail::config_trim(line.substr(eq + 1));
        if (key.empty() || value.empty()) {
            throw std::invalid_argument("config: malformed line '" + line + "'");
        }
        bool known = false;
        detail::for_each_config_key(cfg, [&](const char* name, auto& slot) {
            if (!known && key == name) {
                detail::config_value_from_string(value, slot);
                known = true;
            }
        });
        if (!known) {
            throw std::invalid_argument("config: unknown key '" + key + "'");
        }
    }
    return cfg;
}

inline TrainConfig parse_config(const std::string& text) {
    return parse_config(text, TrainConfig{});
}

// --- training history --------------------------------------------------------

struct HistoryRow {
    std::size_t iter = 0;
    double loss = 0.0;
    double l1 = 0.0;
    double ssim = 0.0;     // the (1 - SSIM) term
    double mask_l1 = 0.0;  // mean |m|, zero outside the window
    std::size_t n_gaussians = 0;
    double prune_ratio = 0.0;  // fraction removed so far
    double psnr_holdout = std::numeric_limits<double>::quiet_NaN();  // NaN: not measured
};

inline std::string format_history_csv(const std::vector<HistoryRow>& rows) {
    std::string out = "iter,loss,l1,ssim,mask_l1,n_gaussians,prune_ratio,psnr_holdout\n";
    for (const HistoryRow& r : rows) {
        out += std::to_string(r.iter) + "," + detail::csv_num(r.loss) + "," +
               detail::csv_num(r.l1) + "," + detail::csv_num(r.ssim) + "," +
               detail::csv_num(r.mask_l1) + "," + std::to_string(r.n_gaussians) + "," +
               detail::csv_num(r.prune_ratio) + ",";
        if (std::isfinite(r.psnr_holdout)) {
            out += detail::csv_num(r.psnr_holdout);
        }
        out += "\n";
    }
    return out;
}

// Largest camera distance from the camera centroid; scales densify thresholds.
inline double scene_extent_from_views(const std::vector<TrainingView>& views) {
    Vec3 centroid = Vec3::Zero();
    for (const TrainingView& v : views) {
        centroid += v.camera.position();
    }
    centroid /= static_cast<double>(views.size());
    double extent = 0.0;
    for (const TrainingView& v : views) {
        extent = std::max(extent, (v.camera.position() - centroid).norm());
    }
    return extent;
}

struct TrainResult {
    GaussianCloud cloud;
    std::vector<HistoryRow> history;
    MaskState mask_state;
    std::vector<double> window_end_inputs;  // pre-activation m*S (or m) at prune time
    std::size_t prune_iteration = 0;
    std::size_t pruned_count = 0;
    std::size_t n_before_prune = 0;
    double learned_ratio = 0.0;
};

// Complete mid-run trainer state; enough to resume bit-exactly given the same
// views. Serialized by the data module.
struct Checkpoint {
    TrainConfig config;
    std::uint64_t iteration = 0;
    GaussianCloud cloud;
    AdamState adam;
    MaskState mask;
    std::uint64_t score_rr = 0;
    std::vector<double> grad_accum;
    std::vector<std::uint32_t> grad_count;
    std::uint64_t n_before_prune = 0;
    std::uint64_t pruned_count = 0;
    std::uint64_t prune_iteration = 0;
    double learned_ratio = 0.0;
    std::vector<double> window_end_inputs;
};

class Trainer {
public:
    Trainer(GaussianCloud cloud, std::vector<TrainingView> train_views,
            std::vector<TrainingView> holdout_views, TrainConfig cfg)
        : cfg_(std::move(cfg)),
          cloud_(std::move(cloud)),
          views_(std::move(train_views)),
          holdout_(std::move(holdout_views)) {
        cfg_.validate();
        if (views_.size() < 2) {
            throw std::invalid_argument("train: need at least two training views");
        }
        if (cloud_.size() == 0) {
            throw std::invalid_argument("train: empty initial model");
        }
        if (cloud_.mask_params.size() != cloud_.size()) {
            cloud_.mask_params.assign(cloud_.size(), 1.0);
        }
        if (cloud_.scores.size() != cloud_.size()) {
            cloud_.scores.assign(cloud_.size(), 0.0);
        }
        rcfg_.threads = cfg_.threads;
        adam_ = AdamState::init(cloud_);
        mask_state_.tau = cfg_.tau;
        mask_state_.mode = cfg_.mask_mode;
        mask_state_.rng = CounterRng{cfg_.seed};
        rng_ = CounterRng{cfg_.seed};
        scene_extent_ = scene_extent_from_views(views_);
        grad_accum_.assign(cloud_.size(), 0.0);
        grad_count_.assign(cloud_.size(), 0);
    }

    // Resumes from a snapshot; the views must match the original run's.
    Trainer(const Checkpoint& ck, std::vector<TrainingView> train_views,
            std::vector<TrainingView> holdout_views)
        : Trainer(ck.cloud, std::move(train_views), std::move(holdout_views), ck.config) {
        adam_ = ck.adam;
        mask_state_ = ck.mask;
        it_ = ck.iteration;
        score_rr_ = static_cast<std::size_t>(ck.score_rr);
        grad_accum_ = ck.grad_accum;
        grad_count_ = ck.grad_count;
        n_before_prune_ = static_cast<std::size_t>(ck.n_before_prune);
        pruned_count_ = static_cast<std::size_t>(ck.pruned_count);
        prune_iteration_ = static_cast<std::size_t>(ck.prune_iteration);
        learned_ratio_ = ck.learned_ratio;
        window_end_inputs_ = ck.window_end_inputs;
    }

    Checkpoint checkpoint() const {
        Checkpoint ck;
        ck.config = cfg_;
        ck.iteration = it_;
        ck.cloud = cloud_;
        ck.adam = adam_;
        ck.mask = mask_state_;
        ck.score_rr = score_rr_;
        ck.grad_accum = grad_accum_;
        ck.grad_count = grad_count_;
        ck.n_before_prune = n_before_prune_;
        ck.pruned_count = pruned_count_;
        ck.prune_iteration = prune_iteration_;
        ck.learned_ratio = learned_ratio_;
        ck.window_end_inputs = window_end_inputs_;
        return ck;
    }

    const GaussianCloud& cloud() const { return cloud_; }
    const std::vector<HistoryRow>& history() const { return history_; }
    std::size_t iteration() const { return it_; }
    bool window_active() const { return mask_state_.active; }
    double learned_ratio() const { return learned_ratio_; }
    const TrainConfig& config() const { return cfg_; }

    void run_until(std::size_t iteration) {
        const std::size_t stop = std::min(iteration, cfg_.total_iters);
        while (it_ < stop) {
            step();
        }
    }

    TrainResult result() const {
        TrainResult r;
        r.cloud = cloud_;
        r.history = history_;
        r.mask_state = mask_state_;
        r.window_end_inputs = window_end_inputs_;
        r.prune_iteration = prune_iteration_;
        r.pruned_count = pruned_count_;
        r.n_before_prune = n_before_prune_;
        r.learned_ratio = learned_ratio_;
        return r;
    }

    void step() {
        const std::size_t it = it_;
        if (cfg_.mask_enabled() && it == cfg_.mask_window_begin) {
            begin_window();
        }
        const bool active = mask_state_.active;
        if (active && it != cfg_.mask_window_begin &&
            (it - cfg_.mask_window_begin) % cfg_.score_update_every == 0) {
            refresh_scores(/*gated=*/true);
        }

        const std::size_t view_idx =
            static_cast<std::size_t>(rng_.raw(rng_stream::kViewOrder, it, 0, 0) % views_.size());
        const TrainingView& view = views_[view_idx];

        GateEval gates;
        Gate gate;
        if (active) {
            mask_state_.iteration = it;
            gates = stochastic_gates();
            gate = make_gate(gates.values, scales_too());
        }

        const RenderForward fwd = render_forward(cloud_, view.camera, rcfg_, gate);
        const TotalLoss tl = total_loss(fwd.image, view.image, cloud_.mask_params, active,
                                        cfg_.lambda_ssim, cfg_.lambda_m);
        const GradientBuffer gb =
            render_backward(cloud_, view.camera, fwd, tl.grad_image, rcfg_, gate);

        const double t = static_cast<double>(it) / static_cast<double>(cfg_.total_iters);
        const double lr_pos =
            cfg_.lr.positions * std::pow(cfg_.lr.positions_final / cfg_.lr.positions, t);
        adam_step(cloud_.positions, gb.positions, adam_.positions, lr_pos, "positions");
        adam_step(cloud_.log_scales, gb.log_scales, adam_.log_scales, cfg_.lr.log_scales,
                  "log_scales");
        adam_step(cloud_.rotations, gb.rotations, adam_.rotations, cfg_.lr.rotations, "rotations");
        adam_step(cloud_.opacity_logits, gb.opacity_logits, adam_.opacities, cfg_.lr.opacities,
                  "opacities");
        adam_step(cloud_.sh_coeffs, gb.sh_coeffs, adam_.sh, cfg_.lr.sh, "sh");

        if (active) {
            std::vector<double> grad_mask(cloud_.size());
            for (std::size_t i = 0; i < cloud_.size(); ++i) {
                grad_mask[i] = gb.gate[i] * gates.dvalue_dm[i] + tl.grad_mask[i];
            }
            adam_step(cloud_.mask_params, grad_mask, adam_.mask, cfg_.lr.mask, "mask");
            if (cfg_.mask_kind == MaskKind::kGumbel) {
                for (double& m : cloud_.mask_params) {
                    m = std::max(m, kMaskFloor);
                }
            }
        }

        const std::size_t next = it + 1;
        if (it < cfg_.densify_until) {
            for (const ProjectedGaussian& splat : fwd.splats) {
                const auto row = static_cast<std::size_t>(splat.index);
                grad_accum_[row] += gb.mean2d[row].norm();
                grad_count_[row] += 1;
            }
            if (next % cfg_.densify_interval == 0 && next <= cfg_.densify_until) {
                densify(it);
            }
        }
        if (cfg_.opacity_reset_every > 0 && next % cfg_.opacity_reset_every == 0 &&
            next < cfg_.total_iters &&
            (!cfg_.prune_scheduled() || next < cfg_.mask_window_begin)) {
            reset_opacities();
        }
        if (cfg_.prune_scheduled() && next == cfg_.mask_window_end) {
            prune_at_window_end();
        }

        HistoryRow row;
        row.iter = it;
        row.loss = tl.value;
        row.l1 = tl.l1;
        row.ssim = tl.ssim;
        row.mask_l1 = tl.mask_l1;
        row.n_gaussians = cloud_.size();
        row.prune_ratio = learned_ratio_;
        const bool timed = cfg_.psnr_every > 0 && next % cfg_.psnr_every == 0;
        if (!holdout_.empty() && (timed || next == cfg_.total_iters)) {
            row.psnr_holdout = holdout_psnr();
        }
        history_.push_back(row);
        it_ = next;
        mask_state_.iteration = it_;
    }

private:
    bool scales_too() const { return cfg_.mask_mode == MaskMode::kDirectOpacityScale; }

    // Stochastic gates for one training render; chain rule factors included.
    GateEval stochastic_gates() {
        if (cfg_.mask_kind == MaskKind::kGumbel) {
            return eval_gates(mask_state_, cloud_.mask_params, cloud_.scores,
                              /*deterministic=*/false);
        }
        const bool modulated = cfg_.mask_mode == MaskMode::kScoreModulated;
        GateEval out;
        out.values.resize(cloud_.size());
        out.dvalue_dm.resize(cloud_.size());
        for (std::size_t i = 0; i < cloud_.size(); ++i) {
            const double mod = modulated ? cloud_.scores[i] : 1.0;
            const ValueGrad vg = ste_mask(cloud_.mask_params[i] * mod, cfg_.ste_epsilon);
            out.values[i] = vg.value;
            out.dvalue_dm[i] = vg.grad * mod;
        }
        return out;
    }

    // Noise-free gate values used for mid-window scoring and the final prune.
    std::vector<double> deterministic_gate_values() const {
        if (cfg_.mask_kind == MaskKind::kSte) {
            const bool modulated = cfg_.mask_mode == MaskMode::kScoreModulated;
            std::vector<double> values(cloud_.size());
            for (std::size_t i = 0; i < cloud_.size(); ++i) {
                const double mod = modulated ? cloud_.scores[i] : 1.0;
                values[i] = ste_mask(cloud_.mask_params[i] * mod, cfg_.ste_epsilon).value;
            }
            return values;
        }
        return gate_values(mask_state_, cloud_.mask_params, cloud_.scores,
                           /*deterministic=*/true);
    }

    // Recomputes importance over a rotating subsample of training views.
    void refresh_scores(bool gated) {
        const std::size_t take = std::min(cfg_.score_subsample, views_.size());
        std::vector<Camera> cams;
        cams.reserve(take);
        for (std::size_t k = 0; k < take; ++k) {
            cams.push_back(views_[(score_rr_ + k) % views_.size()].camera);
        }
        score_rr_ = (score_rr_ + take) % views_.size();
        std::vector<double> new_scores;
        if (gated) {
            const std::vector<double> det = deterministic_gate_values();
            new_scores =
                compute_scores(cloud_, cams, cfg_.score_mode, rcfg_, make_gate(det, scales_too()));
        } else {
            new_scores = compute_scores(cloud_, cams, cfg_.score_mode, rcfg_);
        }
        cloud_.scores = std::move(new_scores);
    }

    void begin_window() {
        mask_state_.active = true;
        cloud_.mask_params.assign(cloud_.size(), 1.0);
        adam_.mask.m1.assign(cloud_.size(), 0.0);
        adam_.mask.m2.assign(cloud_.size(), 0.0);
        adam_.mask.steps = 0;
        refresh_scores(/*gated=*/false);
    }

    void prune_at_window_end() {
        const bool modulated = cfg_.mask_mode == MaskMode::kScoreModulated;
        window_end_inputs_.resize(cloud_.size());
        for (std::size_t i = 0; i < cloud_.size(); ++i) {
            const double mod = modulated ? cloud_.scores[i] : 1.0;
            window_end_inputs_[i] = cloud_.mask_params[i] * mod;
        }

        std::vector<std::uint8_t> keep;
        if (cfg_.hard_prune_enabled()) {
            refresh_scores(/*gated=*/false);
            keep = ratio_keep(cloud_.scores, cfg_.hard_prune_ratio);
        } else {
            const std::vector<double> det = deterministic_gate_values();
            keep.resize(cloud_.size());
            for (std::size_t i = 0; i < cloud_.size(); ++i) {
                keep[i] = det[i] < cfg_.gate_prune ? 0 : 1;
            }
        }

        n_before_prune_ = cloud_.size();
        prune_iteration_ = cfg_.mask_window_end;
        mask_state_.active = false;
        cloud_ = compact_cloud(cloud_, keep);
        adam_.compact(keep, static_cast<std::size_t>(cloud_.basis_count()));
        pruned_count_ = n_before_prune_ - cloud_.size();
        learned_ratio_ =
            static_cast<double>(pruned_count_) / static_cast<double>(n_before_prune_);
        grad_accum_.assign(cloud_.size(), 0.0);
        grad_count_.assign(cloud_.size(), 0);
    }

    // Clone small / split large Gaussians whose mean screen-space positional
    // gradient exceeds the threshold; cull near-transparent ones.
    void densify(std::size_t it) {
        const std::size_t n = cloud_.size();
        const double size_limit = 0.01 * scene_extent_;
        enum class Action { kNone, kClone, kSplit };
        std::vector<Action> action(n, Action::kNone);
        std::vector<std::uint8_t> keep(n, 1);
        std::size_t kept = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (sigmoid(cloud_.opacity_logits[i]) < cfg_.min_opacity) {
                keep[i] = 0;
                continue;
            }
            if (grad_count_[i] > 0) {
                const double avg = grad_accum_[i] / static_cast<double>(grad_count_[i]);
                if (avg > cfg_.grad_threshold) {
                    const double max_scale = cloud_.log_scales[i].array().exp().maxCoeff();
                    action[i] = max_scale <= size_limit ? Action::kClone : Action::kSplit;
                }
            }
            // A split replaces the parent with two children.
            if (action[i] == Action::kSplit) {
                keep[i] = 0;
            } else {
                ++kept;
            }
        }

        struct NewRow {
            Vec3 position;
            Vec3 log_scales;
            Vec4 rotation;
            double opacity_logit;
            std::vector<double> sh;
            double score;
        };
        const std::size_t basis = static_cast<std::size_t>(cloud_.basis_count());
        static constexpr double kSplitScaleDown = 1.6;  // children shrink by this factor
        std::vector<NewRow> added;
        for (std::size_t i = 0; i < n; ++i) {
            if (action[i] == Action::kNone || sigmoid(cloud_.opacity_logits[i]) < cfg_.min_opacity) {
                continue;
            }
            NewRow base;
            base.position = cloud_.positions[i];
            base.log_scales = cloud_.log_scales[i];
            base.rotation = cloud_.rotations[i];
            base.opacity_logit = cloud_.opacity_logits[i];
            base.sh.assign(cloud_.sh_at(i), cloud_.sh_at(i) + basis * 3);
            base.score = cloud_.scores[i];
            if (action[i] == Action::kClone) {
                added.push_back(base);
                continue;
            }
            const Mat3 rot = quaternion_to_rotation(cloud_.rotations[i]);
            const Vec3 s = cloud_.log_scales[i].array().exp();
            for (std::size_t child = 0; child < 2; ++child) {
                Vec3 z;
                for (int c = 0; c < 3; ++c) {
                    z[c] = rng_.normal(rng_stream::kDensify, it, i,
                                       child * 3 + static_cast<std::size_t>(c));
                }
                NewRow row = base;
                row.position = base.position + rot * (s.asDiagonal() * z);
                row.log_scales = base.log_scales.array() - std::log(kSplitScaleDown);
                added.push_back(row);
            }
        }

        if (kept + added.size() == 0 || (kept == n && added.empty())) {
            grad_accum_.assign(cloud_.size(), 0.0);
            grad_count_.assign(cloud_.size(), 0);
            return;
        }
        if (kept > 0) {
            cloud_ = compact_cloud(cloud_, keep);
            adam_.compact(keep, basis);
        } else {
            // Nothing survives on its own; rebuild from the added rows alone.
            cloud_ = GaussianCloud::zeros(0, cloud_.sh_degree);
            adam_ = AdamState::init(cloud_);
        }
        for (const NewRow& row : added) {
            cloud_.positions.push_back(row.position);
            cloud_.log_scales.push_back(row.log_scales);
            cloud_.rotations.push_back(row.rotation);
            cloud_.opacity_logits.push_back(row.opacity_logit);
            cloud_.sh_coeffs.insert(cloud_.sh_coeffs.end(), row.sh.begin(), row.sh.end());
            cloud_.mask_params.push_back(1.0);
            cloud_.scores.push_back(row.score);
        }
        adam_.append_rows(added.size(), basis);
        grad_accum_.assign(cloud_.size(), 0.0);
        grad_count_.assign(cloud_.size(), 0);
    }

    void reset_opacities() {
        const double cap = inverse_sigmoid(0.01);
        for (double& logit : cloud_.opacity_logits) {
            logit = std::min(logit, cap);
        }
        adam_.opacities.m1.assign(cloud_.size(), 0.0);
        adam_.opacities.m2.assign(cloud_.size(), 0.0);
        adam_.opacities.steps = 0;
    }

    double holdout_psnr() const {
        std::vector<double> det;
        Gate gate;
        if (mask_state_.active) {
            det = deterministic_gate_values();
            gate = Gate{det.data(), det.size(),
                        cfg_.mask_mode == MaskMode::kDirectOpacityScale};
        }
        double sum = 0.0;
        for (const TrainingView& v : holdout_) {
            sum += psnr(render_image(cloud_, v.camera, rcfg_, gate), v.image);
        }
        return sum / static_cast<double>(holdout_.size());
    }

    TrainConfig cfg_;
    GaussianCloud cloud_;
    std::vector<TrainingView> views_;
    std::vector<TrainingView> holdout_;
    RenderConfig rcfg_;
    AdamState adam_;
    MaskState mask_state_;
    CounterRng rng_{0};
    std::size_t it_ = 0;
    std::size_t score_rr_ = 0;
    std::vector<double> grad_accum_;
    std::vector<std::uint32_t> grad_count_;
    std::vector<HistoryRow> history_;
    std::vector<double> window_end_inputs_;
    double scene_extent_ = 1.0;
    std::size_t n_before_prune_ = 0;
    std::size_t pruned_count_ = 0;
    std::size_t prune_iteration_ = 0;
    double learned_ratio_ = 0.0;
};

inline TrainResult train(GaussianCloud cloud, std::vector<TrainingView> train_views,
                         std::vector<TrainingView> holdout_views, const TrainConfig& cfg) {
    Trainer trainer(std::move(cloud), std::move(train_views), std::move(holdout_views), cfg);
    trainer.run_until(cfg.total_iters);
    return trainer.result();
}

}  // namespace gsprune
