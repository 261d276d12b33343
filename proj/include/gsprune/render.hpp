#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "core.hpp"
#include "threading.hpp"

namespace gsprune {

struct RenderConfig {
    double dilation = 0.3;          // added to both cov2d diagonal entries
    double alpha_min = 1.0 / 255.0; // contributions below this are skipped
    double alpha_max = 0.99;        // per-splat alpha clamp
    double t_min = 1e-4;            // early exit once transmittance drops below
    double near_clip = 0.01;        // camera-space z must exceed this
    Vec3 background = Vec3::Zero();
    int threads = 1;
};

// Optional per-Gaussian gate multiplied into the effective opacity. When
// `scales_too` is set the gate also multiplies all three scales.
struct Gate {
    const double* values = nullptr;
    std::size_t size = 0;
    bool scales_too = false;

    bool active() const { return values != nullptr; }
    double at(std::size_t i) const { return values ? values[i] : 1.0; }
};

inline Gate make_gate(const std::vector<double>& values, bool scales_too = false) {
    return Gate{values.data(), values.size(), scales_too};
}

// Box radius factor: outside k*sigma the unit-opacity alpha is below 1/256,
// so the box cull can never drop a contribution the alpha_min test keeps.
inline constexpr double kBoxRadiusFactor = 3.3302184446307905;  // sqrt(2*ln(256))

struct ProjectedGaussian {
    int index = -1;       // row in the source cloud
    Vec2 mean2d = Vec2::Zero();
    double depth = 0.0;
    Mat2 cov2d = Mat2::Zero();
    Mat2 inv_cov2d = Mat2::Zero();
    double sigma_eff = 0.0;  // sigmoid(opacity_logit) * gate
    Vec3 rgb = Vec3::Zero();      // clamped color used for compositing
    Vec3 rgb_raw = Vec3::Zero();  // pre-clamp color, kept for backward
    double radius_x = 0.0, radius_y = 0.0;
    int x0 = 0, x1 = -1, y0 = 0, y1 = -1;  // inclusive pixel bounds
};

// Projects one Gaussian. Returns nullopt when the splat is behind the near
// plane or its bounding box misses the image entirely.
inline std::optional<ProjectedGaussian> project_gaussian(const GaussianCloud& cloud, std::size_t i,
                                                         const Camera& camera,
                                                         const RenderConfig& cfg = RenderConfig{},
                                                         const Gate& gate = Gate{}) {
    const Mat3 w_rot = camera.rotation();
    const Vec3 p_cam = w_rot * cloud.positions[i] + camera.translation();
    if (!(p_cam.z() > cfg.near_clip)) {
        return std::nullopt;
    }
    const double g = gate.at(i);

    ProjectedGaussian out;
    out.index = static_cast<int>(i);
    out.depth = p_cam.z();
    out.sigma_eff = sigmoid(cloud.opacity_logits[i]) * g;

    const double x = p_cam.x(), y = p_cam.y(), z = p_cam.z();
    out.mean2d = Vec2(camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy);

    Vec3 log_scale = cloud.log_scales[i];
    if (gate.scales_too) {
        if (!(g > 1e-12)) {
            return std::nullopt;  // zero-size splat, contributes nothing
        }
        log_scale.array() += std::log(g);
    }
    const Mat3 sigma = covariance_3d(log_scale, cloud.rotations[i]);

    Mat23 jac;
    jac << camera.fx / z, 0.0, -camera.fx * x / (z * z),
        0.0, camera.fy / z, -camera.fy * y / (z * z);
    const Mat23 a = jac * w_rot;
    Mat2 cov2d = a * sigma * a.transpose();
    cov2d(0, 0) += cfg.dilation;
    cov2d(1, 1) += cfg.dilation;
    out.cov2d = cov2d;

    const double det = cov2d(0, 0) * cov2d(1, 1) - cov2d(0, 1) * cov2d(1, 0);
    out.inv_cov2d << cov2d(1, 1) / det, -cov2d(0, 1) / det,
        -cov2d(1, 0) / det, cov2d(0, 0) / det;

    out.radius_x = kBoxRadiusFactor * std::sqrt(cov2d(0, 0));
    out.radius_y = kBoxRadiusFactor * std::sqrt(cov2d(1, 1));
    // Pixel centers sit at ix + 0.5; the bounds cover every center within the
    // per-axis radius of the mean.
    out.x0 = std::max(0, static_cast<int>(std::ceil(out.mean2d.x() - out.radius_x - 0.5)));
    out.x1 = std::min(camera.width - 1, static_cast<int>(std::floor(out.mean2d.x() + out.radius_x - 0.5)));
    out.y0 = std::max(0, static_cast<int>(std::ceil(out.mean2d.y() - out.radius_y - 0.5)));
    out.y1 = std::min(camera.height - 1, static_cast<int>(std::floor(out.mean2d.y() + out.radius_y - 0.5)));
    if (out.x0 > out.x1 || out.y0 > out.y1) {
        return std::nullopt;
    }

    const Vec3 view_dir = (cloud.positions[i] - camera.position()).normalized();
    out.rgb_raw = eval_sh(cloud.sh_at(i), cloud.basis_count(), cloud.sh_degree, view_dir);
    out.rgb = out.rgb_raw.cwiseMax(0.0);
    return out;
}

// Everything the backward pass (or score accumulation) needs from a forward
// render: depth-sorted splats, per-pixel contributor lists in CSR form, and
// per-pixel compositing end state.
struct RenderForward {
    Image image;
    std::vector<ProjectedGaussian> splats;  // sorted by (depth, index)
    std::vector<std::uint32_t> px_offsets;  // H*W + 1
    std::vector<std::uint32_t> px_entries;  // indices into splats
    std::vector<double> final_t;            // per pixel
    std::vector<std::uint32_t> n_examined;  // list entries the forward loop consumed
    std::uint64_t total_composited = 0;     // contributions that passed the alpha test
    std::uint64_t order_hash = 0;           // hash of the sorted splat index sequence
};

namespace detail {

inline std::uint64_t hash_step(std::uint64_t h, std::uint64_t v) {
    h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    return h;
}

// Composites one pixel's contributor list front to back. Recorder is called
// as recorder(entry, alpha, t_before) for every contribution that passes the
// alpha test.
template <typename Recorder>
inline void composite_list(const std::vector<ProjectedGaussian>& splats, const std::uint32_t* entries,
                           std::uint32_t count, const Vec2& pixel, const RenderConfig& cfg, Vec3& color_out,
                           double& final_t_out, std::uint32_t& examined_out, std::uint64_t& composited_out,
                           Recorder&& recorder) {
    Vec3 color = Vec3::Zero();
    double t = 1.0;
    std::uint32_t k = 0;
    for (; k < count; ++k) {
        const ProjectedGaussian& s = splats[entries[k]];
        const Vec2 d = pixel - s.mean2d;
        const double power = 0.5 * (d.x() * (s.inv_cov2d(0, 0) * d.x() + s.inv_cov2d(0, 1) * d.y()) +
                                    d.y() * (s.inv_cov2d(1, 0) * d.x() + s.inv_cov2d(1, 1) * d.y()));
        const double alpha = std::min(s.sigma_eff * std::exp(-power), cfg.alpha_max);
        if (alpha < cfg.alpha_min) {
            continue;
        }
        recorder(entries[k], alpha, t);
        color += s.rgb * (alpha * t);
        t *= 1.0 - alpha;
        ++composited_out;
        if (t < cfg.t_min) {
            ++k;
            break;
        }
    }
    color_out = color;
    final_t_out = t;
    examined_out = k;
}

struct NullRecorder {
    void operator()(std::uint32_t, double, double) const {}
};

}  // namespace detail

// Projection, global depth sort (index tie-break), per-pixel CSR binning,
// then front-to-back compositing over the background.
inline RenderForward render_forward(const GaussianCloud& cloud, const Camera& camera,
                                    const RenderConfig& cfg = RenderConfig{}, const Gate& gate = Gate{}) {
    cloud.validate();
    camera.validate();
    if (gate.active() && gate.size != cloud.size()) {
        throw std::invalid_argument("render: gate length does not match cloud size");
    }

    RenderForward out;
    const int w = camera.width, h = camera.height;
    const std::size_t n_px = static_cast<std::size_t>(w) * h;

    out.splats.reserve(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        // A splat whose effective opacity is below alpha_min can never pass
        // the per-pixel alpha test; dropping it early is a pure speedup.
        if (sigmoid(cloud.opacity_logits[i]) * gate.at(i) < cfg.alpha_min) {
            continue;
        }
        if (auto proj = project_gaussian(cloud, i, camera, cfg, gate)) {
            out.splats.push_back(*proj);
        }
    }
    std::sort(out.splats.begin(), out.splats.end(), [](const ProjectedGaussian& a, const ProjectedGaussian& b) {
        return a.depth != b.depth ? a.depth < b.depth : a.index < b.index;
    });

    std::uint64_t hash = 0x243f6a8885a308d3ULL;
    for (const ProjectedGaussian& s : out.splats) {
        hash = detail::hash_step(hash, static_cast<std::uint64_t>(s.index));
    }
    out.order_hash = hash;

    // CSR binning: count, prefix-sum, fill. Filling in depth order keeps
    // every per-pixel list depth-sorted.
    out.px_offsets.assign(n_px + 1, 0);
    for (const ProjectedGaussian& s : out.splats) {
        for (int y = s.y0; y <= s.y1; ++y) {
            const std::size_t row = static_cast<std::size_t>(y) * w;
            for (int x = s.x0; x <= s.x1; ++x) {
                ++out.px_offsets[row + x + 1];
            }
        }
    }
    for (std::size_t p = 0; p < n_px; ++p) {
        out.px_offsets[p + 1] += out.px_offsets[p];
    }
    out.px_entries.assign(out.px_offsets[n_px], 0);
    std::vector<std::uint32_t> cursor(out.px_offsets.begin(), out.px_offsets.end() - 1);
    for (std::uint32_t si = 0; si < out.splats.size(); ++si) {
        const ProjectedGaussian& s = out.splats[si];
        for (int y = s.y0; y <= s.y1; ++y) {
            const std::size_t row = static_cast<std::size_t>(y) * w;
            for (int x = s.x0; x <= s.x1; ++x) {
                out.px_entries[cursor[row + x]++] = si;
            }
        }
    }

    out.image = Image(h, w);
    out.final_t.assign(n_px, 1.0);
    out.n_examined.assign(n_px, 0);

    const int threads = resolve_threads(cfg.threads);
    std::vector<std::uint64_t> composited(static_cast<std::size_t>(std::max(threads, 1)), 0);
    parallel_chunks(n_px, threads, [&](int worker, std::size_t begin, std::size_t end) {
        for (std::size_t p = begin; p < end; ++p) {
            const int y = static_cast<int>(p) / w;
            const int x = static_cast<int>(p) % w;
            const Vec2 pixel(x + 0.5, y + 0.5);
            Vec3 color;
            detail::composite_list(out.splats, out.px_entries.data() + out.px_offsets[p],
                                   out.px_offsets[p + 1] - out.px_offsets[p], pixel, cfg, color, out.final_t[p],
                                   out.n_examined[p], composited[worker], detail::NullRecorder{});
            color += out.final_t[p] * cfg.background;
            out.image.data[p * 3 + 0] = color[0];
            out.image.data[p * 3 + 1] = color[1];
            out.image.data[p * 3 + 2] = color[2];
        }
    });
    for (const std::uint64_t c : composited) {
        out.total_composited += c;
    }
    return out;
}

inline Image render_image(const GaussianCloud& cloud, const Camera& camera,
                          const RenderConfig& cfg = RenderConfig{}, const Gate& gate = Gate{}) {
    return render_forward(cloud, camera, cfg, gate).image;
}

// Per-Gaussian compositing statistics for one view: max and sum of alpha * T
// over all rays, indexed like the cloud.
struct ContributionStats {
    std::vector<double> max_contrib;
    std::vector<double> sum_contrib;
};

inline std::pair<Image, ContributionStats> render_with_contributions(const GaussianCloud& cloud,
                                                                     const Camera& camera,
                                                                     const RenderConfig& cfg = RenderConfig{},
                                                                     const Gate& gate = Gate{}) {
    RenderForward fwd = render_forward(cloud, camera, cfg, gate);

    const int threads = resolve_threads(cfg.threads);
    const int w = camera.width;
    const std::size_t n_px = static_cast<std::size_t>(w) * camera.height;
    const int workers = std::max(1, std::min<int>(threads, static_cast<int>(n_px)));

    // Per-worker stat buffers, merged in worker order for reproducibility.
    std::vector<std::vector<double>> max_w(workers), sum_w(workers);
    for (int i = 0; i < workers; ++i) {
        max_w[i].assign(cloud.size(), 0.0);
        sum_w[i].assign(cloud.size(), 0.0);
    }
    parallel_chunks(n_px, threads, [&](int worker, std::size_t begin, std::size_t end) {
        std::vector<double>& mx = max_w[worker];
        std::vector<double>& sm = sum_w[worker];
        for (std::size_t p = begin; p < end; ++p) {
            const int y = static_cast<int>(p) / w;
            const int x = static_cast<int>(p) % w;
            const Vec2 pixel(x + 0.5, y + 0.5);
            Vec3 color;
            double final_t = 1.0;
            std::uint32_t examined = 0;
            std::uint64_t n_composited = 0;
            detail::composite_list(fwd.splats, fwd.px_entries.data() + fwd.px_offsets[p],
                                   fwd.px_offsets[p + 1] - fwd.px_offsets[p], pixel, cfg, color, final_t,
                                   examined, n_composited,
                                   [&](std::uint32_t entry, double alpha, double t_before) {
                                       const int gi = fwd.splats[entry].index;
                                       const double contrib = alpha * t_before;
                                       if (contrib > mx[gi]) mx[gi] = contrib;
                                       sm[gi] += contrib;
                                   });
        }
    });

    ContributionStats stats;
    stats.max_contrib.assign(cloud.size(), 0.0);
    stats.sum_contrib.assign(cloud.size(), 0.0);
    for (int i = 0; i < workers; ++i) {
        for (std::size_t g = 0; g < cloud.size(); ++g) {
            if (max_w[i][g] > stats.max_contrib[g]) stats.max_contrib[g] = max_w[i][g];
            stats.sum_contrib[g] += sum_w[i][g];
        }
    }
    return {std::move(fwd.image), std::move(stats)};
}

// Gradients wrt every trainable cloud field, plus the gate when one was
// supplied. mean2d holds dL/d(screen position) per Gaussian for this view,
// consumed by densification bookkeeping.
struct GradientBuffer {
    std::vector<Vec3> positions;
    std::vector<Vec3> log_scales;
    std::vector<Vec4> rotations;
    std::vector<double> opacity_logits;
    std::vector<double> sh_coeffs;
    std::vector<double> gate;
    std::vector<Vec2> mean2d;

    static GradientBuffer zeros(const GaussianCloud& cloud) {
        GradientBuffer g;
        g.positions.assign(cloud.size(), Vec3::Zero());
        g.log_scales.assign(cloud.size(), Vec3::Zero());
        g.rotations.assign(cloud.size(), Vec4::Zero());
        g.opacity_logits.assign(cloud.size(), 0.0);
        g.sh_coeffs.assign(cloud.sh_coeffs.size(), 0.0);
        g.gate.assign(cloud.size(), 0.0);
        g.mean2d.assign(cloud.size(), Vec2::Zero());
        return g;
    }
};

namespace detail {

// Per-splat accumulators filled by the pixel loop of the backward pass.
struct SplatGrad {
    Vec2 mean2d = Vec2::Zero();
    Mat2 inv_cov = Mat2::Zero();  // wrt the full inverse covariance
    double sigma_eff = 0.0;
    Vec3 rgb = Vec3::Zero();  // wrt the clamped color

    bool zero() const {
        return sigma_eff == 0.0 && mean2d.x() == 0.0 && mean2d.y() == 0.0 && rgb[0] == 0.0 && rgb[1] == 0.0 &&
               rgb[2] == 0.0 && inv_cov(0, 0) == 0.0 && inv_cov(0, 1) == 0.0 && inv_cov(1, 0) == 0.0 &&
               inv_cov(1, 1) == 0.0;
    }
};

}  // namespace detail

// Analytic gradients for grad_image = dL/d(forward image). Re-traverses each
// pixel's contributor list back to front, starting from the stored final
// transmittance and mirroring the forward skip and exit decisions.
inline GradientBuffer render_backward(const GaussianCloud& cloud, const Camera& camera, const RenderForward& fwd,
                                      const Image& grad_image, const RenderConfig& cfg = RenderConfig{},
                                      const Gate& gate = Gate{}) {
    if (grad_image.height != camera.height || grad_image.width != camera.width) {
        throw std::invalid_argument("render_backward: gradient image size mismatch");
    }
    GradientBuffer grads = GradientBuffer::zeros(cloud);

    const int w = camera.width;
    const std::size_t n_px = static_cast<std::size_t>(w) * camera.height;
    const std::size_t n_splats = fwd.splats.size();
    const int threads = resolve_threads(cfg.threads);
    const int workers = std::max(1, std::min<int>(threads, static_cast<int>(n_px)));

    std::vector<std::vector<detail::SplatGrad>> partial(workers);
    parallel_chunks(n_px, threads, [&](int worker, std::size_t begin, std::size_t end) {
        std::vector<detail::SplatGrad>& acc = partial[worker];
        acc.assign(n_splats, detail::SplatGrad{});
        for (std::size_t p = begin; p < end; ++p) {
            const Vec3 gpix(grad_image.data[p * 3 + 0], grad_image.data[p * 3 + 1], grad_image.data[p * 3 + 2]);
            if (gpix[0] == 0.0 && gpix[1] == 0.0 && gpix[2] == 0.0) {
                continue;
            }
            const int y = static_cast<int>(p) / w;
            const int x = static_cast<int>(p) % w;
            const Vec2 pixel(x + 0.5, y + 0.5);
            const std::uint32_t* entries = fwd.px_entries.data() + fwd.px_offsets[p];

            double t_after = fwd.final_t[p];
            Vec3 accum = t_after * cfg.background;  // suffix color behind the current splat
            for (std::uint32_t k = fwd.n_examined[p]; k-- > 0;) {
                const ProjectedGaussian& s = fwd.splats[entries[k]];
                const Vec2 d = pixel - s.mean2d;
                const double power = 0.5 * (d.x() * (s.inv_cov2d(0, 0) * d.x() + s.inv_cov2d(0, 1) * d.y()) +
                                            d.y() * (s.inv_cov2d(1, 0) * d.x() + s.inv_cov2d(1, 1) * d.y()));
                const double g2d = std::exp(-power);
                const double alpha_raw = s.sigma_eff * g2d;
                const double alpha = std::min(alpha_raw, cfg.alpha_max);
                if (alpha < cfg.alpha_min) {
                    continue;
                }
                const double t_before = t_after / (1.0 - alpha);
                const double weight = alpha * t_before;

                detail::SplatGrad& sg = acc[entries[k]];
                sg.rgb += weight * gpix;
                const double d_alpha = gpix.dot(s.rgb * t_before - accum / (1.0 - alpha));
                if (alpha_raw < cfg.alpha_max) {  // the clamp blocks the alpha path
                    sg.sigma_eff += g2d * d_alpha;
                    const double d_power = -alpha_raw * d_alpha;  // d(alpha)/d(power) = -sigma*G
                    const Vec2 lam_d(s.inv_cov2d(0, 0) * d.x() + s.inv_cov2d(0, 1) * d.y(),
                                     s.inv_cov2d(1, 0) * d.x() + s.inv_cov2d(1, 1) * d.y());
                    sg.mean2d += -d_power * lam_d;  // d(power)/d(mean2d) = -lambda*d
                    sg.inv_cov += (0.5 * d_power) * (d * d.transpose());
                }

                accum += s.rgb * weight;
                t_after = t_before;
            }
        }
    });

    std::vector<detail::SplatGrad> merged(n_splats);
    for (int i = 0; i < workers; ++i) {
        if (partial[i].empty()) continue;
        for (std::size_t sidx = 0; sidx < n_splats; ++sidx) {
            merged[sidx].mean2d += partial[i][sidx].mean2d;
            merged[sidx].inv_cov += partial[i][sidx].inv_cov;
            merged[sidx].sigma_eff += partial[i][sidx].sigma_eff;
            merged[sidx].rgb += partial[i][sidx].rgb;
        }
    }

    // Chain each splat's screen-space gradients back to cloud parameters.
    const Mat3 w_rot = camera.rotation();
    const Vec3 cam_pos = camera.position();
    parallel_chunks(n_splats, threads, [&](int, std::size_t begin, std::size_t end) {
        for (std::size_t sidx = begin; sidx < end; ++sidx) {
            const detail::SplatGrad& sg = merged[sidx];
            if (sg.zero()) {
                continue;
            }
            const ProjectedGaussian& s = fwd.splats[sidx];
            const std::size_t i = static_cast<std::size_t>(s.index);
            const double g = gate.at(i);

            // Color: clamp mask, then SH coefficients and view direction.
            Vec3 grad_rgb_raw = Vec3::Zero();
            for (int c = 0; c < 3; ++c) {
                grad_rgb_raw[c] = s.rgb_raw[c] > 0.0 ? sg.rgb[c] : 0.0;
            }
            Vec3 grad_pos = Vec3::Zero();
            if (grad_rgb_raw[0] != 0.0 || grad_rgb_raw[1] != 0.0 || grad_rgb_raw[2] != 0.0) {
                const Vec3 rel = cloud.positions[i] - cam_pos;
                const double dist = rel.norm();
                const Vec3 dir = rel / dist;
                const Vec3 grad_dir =
                    eval_sh_backward(cloud.sh_at(i), cloud.basis_count(), cloud.sh_degree, dir, grad_rgb_raw,
                                     grads.sh_coeffs.data() + i * cloud.basis_count() * 3);
                grad_pos += (grad_dir - dir * dir.dot(grad_dir)) / dist;
            }

            // Opacity path: sigma_eff = sigmoid(logit) * gate.
            const double sig = sigmoid(cloud.opacity_logits[i]);
            grads.opacity_logits[i] += sg.sigma_eff * g * sig * (1.0 - sig);
            double grad_gate = sg.sigma_eff * sig;

            // Inverse covariance -> covariance -> (position, scales, rotation).
            const Mat2 grad_cov2d = -s.inv_cov2d * sg.inv_cov * s.inv_cov2d;

            const Vec3 p_cam = w_rot * cloud.positions[i] + camera.translation();
            const double xc = p_cam.x(), yc = p_cam.y(), zc = p_cam.z();
            Mat23 jac;
            jac << camera.fx / zc, 0.0, -camera.fx * xc / (zc * zc),
                0.0, camera.fy / zc, -camera.fy * yc / (zc * zc);

            Vec3 log_scale = cloud.log_scales[i];
            if (gate.scales_too) {
                log_scale.array() += std::log(g);
            }
            const Mat3 sigma3d = covariance_3d(log_scale, cloud.rotations[i]);
            const Mat23 a = jac * w_rot;

            const Mat3 grad_sigma = a.transpose() * grad_cov2d * a;
            const Mat23 grad_a = (grad_cov2d + grad_cov2d.transpose()) * a * sigma3d;
            const Mat23 grad_jac = grad_a * w_rot.transpose();

            Vec3 grad_pcam = Vec3::Zero();
            const double z2 = zc * zc;
            grad_pcam.x() += grad_jac(0, 2) * (-camera.fx / z2);
            grad_pcam.y() += grad_jac(1, 2) * (-camera.fy / z2);
            grad_pcam.z() += grad_jac(0, 0) * (-camera.fx / z2) + grad_jac(1, 1) * (-camera.fy / z2) +
                             grad_jac(0, 2) * (2.0 * camera.fx * xc / (z2 * zc)) +
                             grad_jac(1, 2) * (2.0 * camera.fy * yc / (z2 * zc));

            // Screen-space mean.
            grad_pcam.x() += sg.mean2d.x() * camera.fx / zc;
            grad_pcam.z() += sg.mean2d.x() * (-camera.fx * xc / z2);
            grad_pcam.y() += sg.mean2d.y() * camera.fy / zc;
            grad_pcam.z() += sg.mean2d.y() * (-camera.fy * yc / z2);

            grad_pos += w_rot.transpose() * grad_pcam;
            grads.positions[i] += grad_pos;
            grads.mean2d[i] += sg.mean2d;

            Vec3 grad_ls;
            Vec4 grad_rot;
            covariance_3d_backward(log_scale, cloud.rotations[i], grad_sigma, grad_ls, grad_rot);
            grads.log_scales[i] += grad_ls;
            grads.rotations[i] += grad_rot;
            if (gate.scales_too && g > 1e-12) {
                // log_scale' = log_scale + log(gate) on all three axes.
                grad_gate += grad_ls.sum() / g;
            }
            if (gate.active()) {
                grads.gate[i] += grad_gate;
            }
        }
    });

    return grads;
}

}  // namespace gsprune
