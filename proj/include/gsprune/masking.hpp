#pragma once

// Trainable Gumbel-Sigmoid mask, the STE baseline, hard score thresholds,
// and the one-time prune that compacts the model.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "gsprune/core.hpp"
#include "gsprune/rng.hpp"

namespace gsprune {

// Lower clamp applied to mask parameters after every optimizer step so
// log(m * S) stays finite; unbounded above so keepers can push the gate up.
inline constexpr double kMaskFloor = 1e-6;

enum class MaskMode {
    kScoreModulated,     // gate input is m_i * S_i
    kDirectOpacity,      // gate input is m_i, gate applied to opacity only
    kDirectOpacityScale  // gate input is m_i, gate applied to opacity and scales
};

inline const char* mask_mode_name(MaskMode mode) {
    switch (mode) {
        case MaskMode::kScoreModulated: return "score-modulated";
        case MaskMode::kDirectOpacity: return "direct-opacity";
        case MaskMode::kDirectOpacityScale: return "direct-opacity-scale";
    }
    return "?";
}

inline MaskMode parse_mask_mode(const std::string& name) {
    if (name == "score-modulated" || name == "score") {
        return MaskMode::kScoreModulated;
    }
    if (name == "direct-opacity" || name == "opacity") {
        return MaskMode::kDirectOpacity;
    }
    if (name == "direct-opacity-scale" || name == "opacity-scale") {
        return MaskMode::kDirectOpacityScale;
    }
    throw std::invalid_argument("unknown mask mode: " + name);
}

// Masking configuration. The trainable values themselves live in
// GaussianCloud::mask_params so that densify, prune, checkpointing, and the
// optimizer treat them like every other per-Gaussian parameter; this struct
// carries what the gate computation needs besides them. `iteration` keys the
// Gumbel draws: stochastic gates are a pure function of
// (seed, iteration, gaussian index), independent of thread count.
struct MaskState {
    double tau = 0.5;
    MaskMode mode = MaskMode::kScoreModulated;
    CounterRng rng{0};
    std::uint64_t iteration = 0;
    bool active = false;
};

inline double gumbel_from_uniform(double u) {
    u = std::clamp(u, 1e-12, 1.0 - 1e-12);
    return -std::log(-std::log(u));
}

template <class Rng>
double sample_gumbel(Rng& rng) {
    return gumbel_from_uniform(rng.uniform());
}

struct ValueGrad {
    double value = 0.0;
    double grad = 0.0;
};

// gs(x) = sigmoid((log x + g0 - g1) / tau); x = 0 is the limit value 0 with
// zero gradient.
inline ValueGrad gumbel_sigmoid(double x, double tau, double g0, double g1) {
    if (!(tau > 0.0)) {
        throw std::invalid_argument("gumbel_sigmoid: tau must be positive");
    }
    if (x < 0.0) {
        throw std::invalid_argument("gumbel_sigmoid: negative input");
    }
    if (x == 0.0) {
        return {0.0, 0.0};
    }
    const double v = sigmoid((std::log(x) + g0 - g1) / tau);
    return {v, v * (1.0 - v) / (tau * x)};
}

// Noise-free gate used for evaluation, score recomputation, and pruning.
inline ValueGrad deterministic_gate(double x, double tau) {
    return gumbel_sigmoid(x, tau, 0.0, 0.0);
}

struct GateEval {
    std::vector<double> values;
    std::vector<double> dvalue_dm;  // chain from gate back to the mask entry
};

inline GateEval eval_gates(const MaskState& state, const std::vector<double>& m,
                           const std::vector<double>& scores, bool deterministic) {
    const std::size_t n = m.size();
    const bool modulated = state.mode == MaskMode::kScoreModulated;
    if (modulated && scores.size() != n) {
        throw std::invalid_argument("gate_values: score-modulated mode requires scores");
    }
    GateEval out;
    out.values.resize(n);
    out.dvalue_dm.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double dx_dm = modulated ? scores[i] : 1.0;
        const double x = m[i] * dx_dm;
        ValueGrad vg;
        if (deterministic) {
            vg = deterministic_gate(x, state.tau);
        } else {
            const double g0 = gumbel_from_uniform(
                state.rng.uniform(rng_stream::kGumbel, state.iteration, i, 0));
            const double g1 = gumbel_from_uniform(
                state.rng.uniform(rng_stream::kGumbel, state.iteration, i, 1));
            vg = gumbel_sigmoid(x, state.tau, g0, g1);
        }
        out.values[i] = vg.value;
        out.dvalue_dm[i] = vg.grad * dx_dm;
    }
    return out;
}

inline std::vector<double> gate_values(const MaskState& state, const std::vector<double>& m,
                                       const std::vector<double>& scores, bool deterministic) {
    return eval_gates(state, m, scores, deterministic).values;
}

// Straight-through baseline: forward is the hard indicator, backward is the
// sigmoid derivative as if the indicator were not there.
inline ValueGrad ste_mask(double m, double epsilon) {
    const double s = sigmoid(m);
    return {s > epsilon ? 1.0 : 0.0, s * (1.0 - s)};
}

inline std::vector<std::uint8_t> hard_threshold_keep(const std::vector<double>& scores,
                                                     double t_prune) {
    std::vector<std::uint8_t> keep(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        keep[i] = scores[i] >= t_prune ? 1 : 0;
    }
    return keep;
}

namespace detail {

inline std::size_t prune_count_for_ratio(std::size_t n, double ratio) {
    if (n == 0) {
        throw std::invalid_argument("threshold_for_ratio: empty scores");
    }
    const double k = std::ceil(ratio * static_cast<double>(n) - 1e-9);
    return static_cast<std::size_t>(std::clamp(k, 0.0, static_cast<double>(n)));
}

// Indices ordered by (score, index): a total order, so ties resolve by index.
inline std::vector<std::size_t> score_order(const std::vector<double>& scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores[a] != scores[b] ? scores[a] < scores[b] : a < b;
    });
    return order;
}

}  // namespace detail

// The smallest score that survives pruning ceil(ratio * N) Gaussians, so that
// hard_threshold_keep(scores, t) drops exactly those when no tie straddles
// the cut. ratio_keep below is exact even with ties.
inline double threshold_for_ratio(const std::vector<double>& scores, double ratio) {
    const std::size_t k = detail::prune_count_for_ratio(scores.size(), ratio);
    const std::vector<std::size_t> order = detail::score_order(scores);
    if (k >= scores.size()) {
        return std::nextafter(scores[order.back()], std::numeric_limits<double>::infinity());
    }
    return scores[order[k]];
}

// Keep-mask that prunes exactly ceil(ratio * N) Gaussians: the lowest scores
// go first, equal scores in index order.
inline std::vector<std::uint8_t> ratio_keep(const std::vector<double>& scores, double ratio) {
    const std::size_t k = detail::prune_count_for_ratio(scores.size(), ratio);
    const std::vector<std::size_t> order = detail::score_order(scores);
    std::vector<std::uint8_t> keep(scores.size(), 1);
    for (std::size_t j = 0; j < k; ++j) {
        keep[order[j]] = 0;
    }
    return keep;
}

// Drops the rows where keep is 0 from every per-Gaussian array.
inline GaussianCloud compact_cloud(const GaussianCloud& cloud,
                                   const std::vector<std::uint8_t>& keep) {
    if (keep.size() != cloud.size()) {
        throw std::invalid_argument("compact_cloud: keep mask size mismatch");
    }
    const std::size_t kept =
        static_cast<std::size_t>(std::count(keep.begin(), keep.end(), std::uint8_t{1}));
    if (kept == 0) {
        throw std::runtime_error("empty model after prune");
    }
    GaussianCloud out = GaussianCloud::zeros(kept, cloud.sh_degree);
    const std::size_t basis = sh_basis_count(cloud.sh_degree);
    std::size_t w = 0;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        if (!keep[i]) {
            continue;
        }
        out.positions[w] = cloud.positions[i];
        out.log_scales[w] = cloud.log_scales[i];
        out.rotations[w] = cloud.rotations[i];
        out.opacity_logits[w] = cloud.opacity_logits[i];
        std::copy_n(cloud.sh_coeffs.begin() + static_cast<std::ptrdiff_t>(i * basis * 3), basis * 3,
                    out.sh_coeffs.begin() + static_cast<std::ptrdiff_t>(w * basis * 3));
        out.mask_params[w] = cloud.mask_params[i];
        out.scores[w] = cloud.scores[i];
        ++w;
    }
    return out;
}

struct PruneResult {
    GaussianCloud cloud;
    std::vector<std::uint8_t> keep;
    std::size_t pruned_count = 0;
};

// One-time prune at the end of the mask window: a Gaussian goes when its
// noise-free gate sits below gate_prune (default 0.5, i.e. m * S < 1 in
// score-modulated mode).
inline PruneResult prune_cloud(const GaussianCloud& cloud, const MaskState& state,
                               double gate_prune = 0.5) {
    const std::vector<double> gates =
        gate_values(state, cloud.mask_params, cloud.scores, /*deterministic=*/true);
    PruneResult result;
    result.keep.resize(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        result.keep[i] = gates[i] < gate_prune ? 0 : 1;
        result.pruned_count += result.keep[i] ? 0 : 1;
    }
    result.cloud = compact_cloud(cloud, result.keep);
    return result;
}

struct MaskPenalty {
    double value = 0.0;
    std::vector<double> grad;
};

// R_mask = mean |m_i|; subgradient sign(m_i) / N.
inline MaskPenalty mask_l1(const std::vector<double>& m) {
    if (m.empty()) {
        throw std::invalid_argument("mask_l1: empty mask");
    }
    MaskPenalty out;
    out.grad.resize(m.size());
    const double inv_n = 1.0 / static_cast<double>(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) {
        out.value += std::abs(m[i]) * inv_n;
        out.grad[i] = (m[i] > 0.0 ? 1.0 : m[i] < 0.0 ? -1.0 : 0.0) * inv_n;
    }
    return out;
}

}  // namespace gsprune
