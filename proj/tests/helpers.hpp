#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gsprune/core.hpp"
#include "gsprune/render.hpp"
#include "gsprune/rng.hpp"

namespace testutil {

using namespace gsprune;

// Camera at `eye` looking at `target`, z-up world, y-down image.
inline Camera look_at_camera(const Vec3& eye, const Vec3& target, double focal, int width, int height) {
    const Vec3 forward = (target - eye).normalized();
    Vec3 up_world(0.0, 0.0, 1.0);
    if (std::abs(forward.dot(up_world)) > 0.999) {
        up_world = Vec3(0.0, 1.0, 0.0);
    }
    const Vec3 right = forward.cross(up_world).normalized();
    const Vec3 down = forward.cross(right).normalized();

    Camera cam;
    cam.fx = cam.fy = focal;
    cam.cx = width / 2.0;
    cam.cy = height / 2.0;
    cam.width = width;
    cam.height = height;
    Mat3 rot;
    rot.row(0) = right.transpose();
    rot.row(1) = down.transpose();
    rot.row(2) = forward.transpose();
    cam.world_to_camera.setIdentity();
    cam.world_to_camera.topLeftCorner<3, 3>() = rot;
    cam.world_to_camera.topRightCorner<3, 1>() = -rot * eye;
    return cam;
}

// Random cloud with parameters kept away from the alpha_max clamp and the
// color floor so finite differences stay smooth.
inline GaussianCloud random_cloud(std::uint64_t seed, std::size_t n, int degree, double extent = 1.0,
                                  double scale_lo = 0.05, double scale_hi = 0.3) {
    SeqRng rng(seed, rng_stream::kTest);
    GaussianCloud c = GaussianCloud::zeros(n, degree);
    for (std::size_t i = 0; i < n; ++i) {
        c.positions[i] = Vec3(rng.uniform(-extent, extent), rng.uniform(-extent, extent), rng.uniform(-extent, extent));
        c.log_scales[i] = Vec3(std::log(rng.uniform(scale_lo, scale_hi)), std::log(rng.uniform(scale_lo, scale_hi)),
                               std::log(rng.uniform(scale_lo, scale_hi)));
        Vec4 q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
        c.rotations[i] = q.normalized();
        c.opacity_logits[i] = inverse_sigmoid(rng.uniform(0.15, 0.9));
        double* sh = c.sh_at(i);
        for (int ch = 0; ch < 3; ++ch) {
            sh[ch] = (rng.uniform(0.25, 0.85) - 0.5) / sh::kC0;  // dc keeps colors positive
        }
        for (int b = 1; b < c.basis_count(); ++b) {
            for (int ch = 0; ch < 3; ++ch) {
                sh[b * 3 + ch] = rng.uniform(-0.08, 0.08);
            }
        }
    }
    return c;
}

inline Image random_image(std::uint64_t seed, int h, int w, double lo = 0.0, double hi = 1.0) {
    SeqRng rng(seed, rng_stream::kTest);
    Image img(h, w);
    for (double& v : img.data) {
        v = rng.uniform(lo, hi);
    }
    return img;
}

inline double dot_image(const Image& a, const Image& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        s += a.data[i] * b.data[i];
    }
    return s;
}

inline double rel_err(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / denom;
}

// One scalar parameter slot of a cloud, addressed generically so a finite
// difference sweep can walk every field the renderer differentiates.
struct ParamRef {
    std::string field;
    std::size_t gaussian = 0;
    int component = 0;

    double get(const GaussianCloud& c) const {
        if (field == "position") return c.positions[gaussian][component];
        if (field == "log_scale") return c.log_scales[gaussian][component];
        if (field == "rotation") return c.rotations[gaussian][component];
        if (field == "opacity") return c.opacity_logits[gaussian];
        return c.sh_coeffs[gaussian * c.basis_count() * 3 + component];
    }
    void set(GaussianCloud& c, double v) const {
        if (field == "position") {
            c.positions[gaussian][component] = v;
        } else if (field == "log_scale") {
            c.log_scales[gaussian][component] = v;
        } else if (field == "rotation") {
            c.rotations[gaussian][component] = v;
        } else if (field == "opacity") {
            c.opacity_logits[gaussian] = v;
        } else {
            c.sh_coeffs[gaussian * c.basis_count() * 3 + component] = v;
        }
    }
    double pick(const GradientBuffer& g, const GaussianCloud& c) const {
        if (field == "position") return g.positions[gaussian][component];
        if (field == "log_scale") return g.log_scales[gaussian][component];
        if (field == "rotation") return g.rotations[gaussian][component];
        if (field == "opacity") return g.opacity_logits[gaussian];
        return g.sh_coeffs[gaussian * c.basis_count() * 3 + component];
    }
};

inline std::vector<ParamRef> all_params(const GaussianCloud& c) {
    std::vector<ParamRef> out;
    for (std::size_t i = 0; i < c.size(); ++i) {
        for (int k = 0; k < 3; ++k) out.push_back({"position", i, k});
        for (int k = 0; k < 3; ++k) out.push_back({"log_scale", i, k});
        for (int k = 0; k < 4; ++k) out.push_back({"rotation", i, k});
        out.push_back({"opacity", i, 0});
        for (int k = 0; k < c.basis_count() * 3; ++k) out.push_back({"sh", i, k});
    }
    return out;
}

// Scalar objective of a forward render plus its bookkeeping, used to detect
// whether a finite-difference step crossed a compositing discontinuity (the
// alpha_min skip set, the early-exit point, or the depth order).
struct Probe {
    double value = 0.0;
    std::uint64_t order_hash = 0;
    std::uint64_t total_composited = 0;
};

struct FdStats {
    std::size_t checked = 0;
    std::size_t excluded = 0;
    double worst = 0.0;
    std::string worst_name;
};

// Central-difference sweep over every cloud parameter. `objective` must be a
// pure function of the cloud; `analytic` gives the gradient to verify.
inline FdStats fd_sweep(const GaussianCloud& base, const std::function<Probe(const GaussianCloud&)>& objective,
                        const std::function<double(const ParamRef&)>& analytic, double h, double tol,
                        std::function<void(const std::string&, double, double, double)> on_fail = {}) {
    FdStats stats;
    GaussianCloud scratch = base;
    for (const ParamRef& p : all_params(base)) {
        const double v0 = p.get(base);
        p.set(scratch, v0 + h);
        const Probe hi = objective(scratch);
        p.set(scratch, v0 - h);
        const Probe lo = objective(scratch);
        p.set(scratch, v0);

        if (hi.order_hash != lo.order_hash || hi.total_composited != lo.total_composited) {
            ++stats.excluded;  // stepped across a skip/order discontinuity
            continue;
        }
        const double numeric = (hi.value - lo.value) / (2.0 * h);
        const double a = analytic(p);
        const double err = rel_err(a, numeric);
        ++stats.checked;
        if (err > stats.worst) {
            stats.worst = err;
            stats.worst_name = p.field + "[" + std::to_string(p.gaussian) + "][" + std::to_string(p.component) + "]";
        }
        if (err > tol && on_fail) {
            on_fail(stats.worst_name, a, numeric, err);
        }
    }
    return stats;
}

}  // namespace testutil
