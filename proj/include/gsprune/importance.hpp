#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "core.hpp"
#include "render.hpp"

namespace gsprune {

enum class ScoreMode {
    kRadsplatMax,   // S_i = max over rays of alpha * T
    kMinisplatSum,  // S_i = sum over rays of alpha * T
};

inline const char* score_mode_name(ScoreMode m) {
    return m == ScoreMode::kRadsplatMax ? "radsplat" : "minisplat";
}

inline ScoreMode parse_score_mode(const std::string& s) {
    if (s == "radsplat") return ScoreMode::kRadsplatMax;
    if (s == "minisplat") return ScoreMode::kMinisplatSum;
    throw std::invalid_argument("unknown score mode: " + s);
}

// Running per-Gaussian contribution statistics over a set of views.
struct ScoreAccumulator {
    std::vector<double> max_contrib;
    std::vector<double> sum_contrib;
    int views_seen = 0;

    static ScoreAccumulator zeros(std::size_t n) {
        ScoreAccumulator acc;
        acc.max_contrib.assign(n, 0.0);
        acc.sum_contrib.assign(n, 0.0);
        return acc;
    }
};

inline void accumulate_view(ScoreAccumulator& acc, const GaussianCloud& cloud, const Camera& camera,
                            const RenderConfig& cfg = RenderConfig{}, const Gate& gate = Gate{}) {
    if (acc.max_contrib.size() != cloud.size()) {
        throw std::invalid_argument("score accumulator size does not match cloud");
    }
    const auto [image, stats] = render_with_contributions(cloud, camera, cfg, gate);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        acc.max_contrib[i] = std::max(acc.max_contrib[i], stats.max_contrib[i]);
        acc.sum_contrib[i] += stats.sum_contrib[i];
    }
    ++acc.views_seen;
}

// Max-normalized scores in [0,1]. An all-zero accumulator stays all zero.
inline std::vector<double> finalize_scores(const ScoreAccumulator& acc, ScoreMode mode) {
    if (acc.views_seen == 0) {
        throw std::invalid_argument("finalize_scores: no views accumulated");
    }
    std::vector<double> s = mode == ScoreMode::kRadsplatMax ? acc.max_contrib : acc.sum_contrib;
    double peak = 0.0;
    for (const double v : s) {
        peak = std::max(peak, v);
    }
    if (peak > 0.0) {
        for (double& v : s) {
            v /= peak;
        }
    }
    return s;
}

inline std::vector<double> compute_scores(const GaussianCloud& cloud, const std::vector<Camera>& views,
                                          ScoreMode mode, const RenderConfig& cfg = RenderConfig{},
                                          const Gate& gate = Gate{}) {
    if (views.empty()) {
        throw std::invalid_argument("compute_scores: no views");
    }
    ScoreAccumulator acc = ScoreAccumulator::zeros(cloud.size());
    for (const Camera& cam : views) {
        accumulate_view(acc, cloud, cam, cfg, gate);
    }
    return finalize_scores(acc, mode);
}

// Reference scorer: per-pixel compositing over every Gaussian with no
// contributor culling and no early exit. The alpha_min cutoff is kept: it is
// part of what counts as a contribution, not an acceleration. Written from
// the projection/compositing definitions on purpose; it shares no code with
// the fast path it is used to check.
inline std::vector<double> score_oracle(const GaussianCloud& cloud, const std::vector<Camera>& views,
                                        ScoreMode mode, const RenderConfig& cfg = RenderConfig{},
                                        const Gate& gate = Gate{}) {
    if (views.empty()) {
        throw std::invalid_argument("score_oracle: no views");
    }
    cloud.validate();
    const std::size_t n = cloud.size();
    std::vector<double> max_c(n, 0.0), sum_c(n, 0.0);

    struct Flat {
        std::size_t index;
        double depth;
        double u, v;
        double a, b, c;  // cov2d entries (a=c00, b=c01, c=c11)
        double sigma_eff;
    };

    for (const Camera& cam : views) {
        const Mat3 rot = cam.rotation();
        const Vec3 tr = cam.translation();
        std::vector<Flat> flats;
        flats.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            const Vec3 pc = rot * cloud.positions[i] + tr;
            if (!(pc.z() > cfg.near_clip)) {
                continue;
            }
            const double g = gate.at(i);
            Vec3 scales = cloud.log_scales[i].array().exp();
            if (gate.scales_too) {
                scales *= g;
            }
            // Rotation matrix straight from the quaternion components.
            Vec4 q = cloud.rotations[i];
            q /= q.norm();
            const double qw = q[0], qx = q[1], qy = q[2], qz = q[3];
            Mat3 r;
            r << 1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qw * qz), 2 * (qx * qz + qw * qy),
                2 * (qx * qy + qw * qz), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qw * qx),
                2 * (qx * qz - qw * qy), 2 * (qy * qz + qw * qx), 1 - 2 * (qx * qx + qy * qy);
            const Mat3 sigma3 = r * scales.asDiagonal() * scales.asDiagonal() * r.transpose();

            Mat23 jac;
            jac << cam.fx / pc.z(), 0, -cam.fx * pc.x() / (pc.z() * pc.z()),
                0, cam.fy / pc.z(), -cam.fy * pc.y() / (pc.z() * pc.z());
            const Mat2 cov2d = jac * rot * sigma3 * rot.transpose() * jac.transpose();

            Flat f;
            f.index = i;
            f.depth = pc.z();
            f.u = cam.fx * pc.x() / pc.z() + cam.cx;
            f.v = cam.fy * pc.y() / pc.z() + cam.cy;
            f.a = cov2d(0, 0) + cfg.dilation;
            f.b = cov2d(0, 1);
            f.c = cov2d(1, 1) + cfg.dilation;
            f.sigma_eff = sigmoid(cloud.opacity_logits[i]) * g;
            flats.push_back(f);
        }
        std::sort(flats.begin(), flats.end(), [](const Flat& x, const Flat& y) {
            return x.depth != y.depth ? x.depth < y.depth : x.index < y.index;
        });

        for (int py = 0; py < cam.height; ++py) {
            for (int px = 0; px < cam.width; ++px) {
                const double cx = px + 0.5, cy = py + 0.5;
                double t = 1.0;
                for (const Flat& f : flats) {
                    const double det = f.a * f.c - f.b * f.b;
                    const double dx = cx - f.u, dy = cy - f.v;
                    const double power = 0.5 * (f.c * dx * dx - 2.0 * f.b * dx * dy + f.a * dy * dy) / det;
                    const double alpha = std::min(f.sigma_eff * std::exp(-power), cfg.alpha_max);
                    if (alpha < cfg.alpha_min) {
                        continue;
                    }
                    const double w = alpha * t;
                    max_c[f.index] = std::max(max_c[f.index], w);
                    sum_c[f.index] += w;
                    t *= 1.0 - alpha;
                }
            }
        }
    }

    std::vector<double> s = mode == ScoreMode::kRadsplatMax ? std::move(max_c) : std::move(sum_c);
    double peak = 0.0;
    for (const double v : s) {
        peak = std::max(peak, v);
    }
    if (peak > 0.0) {
        for (double& v : s) {
            v /= peak;
        }
    }
    return s;
}

}  // namespace gsprune
