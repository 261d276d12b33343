#pragma once

// Bias-corrected Adam over the cloud's parameter groups, with row surgery so
// moments stay aligned through densification and pruning.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gsprune/core.hpp"

namespace gsprune {

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-15;

struct AdamParam {
    std::vector<double> m1, m2;
    std::uint64_t steps = 0;
};

inline void adam_step_flat(double* params, const double* grads, std::size_t n, AdamParam& state,
                           double lr, const char* group) {
    if (state.m1.size() != n) {
        throw std::logic_error(std::string("adam_step: moment shape mismatch in group ") + group);
    }
    ++state.steps;
    const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.steps));
    const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.steps));
    for (std::size_t i = 0; i < n; ++i) {
        const double g = grads[i];
        if (!std::isfinite(g)) {
            throw std::runtime_error(std::string("adam_step: non-finite gradient in group ") +
                                     group);
        }
        state.m1[i] = kAdamBeta1 * state.m1[i] + (1.0 - kAdamBeta1) * g;
        state.m2[i] = kAdamBeta2 * state.m2[i] + (1.0 - kAdamBeta2) * g * g;
        const double mhat = state.m1[i] / c1;
        const double vhat = state.m2[i] / c2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + kAdamEps);
    }
}

inline void adam_step(std::vector<double>& params, const std::vector<double>& grads,
                      AdamParam& state, double lr, const char* group) {
    if (params.size() != grads.size()) {
        throw std::logic_error(std::string("adam_step: gradient shape mismatch in group ") + group);
    }
    adam_step_flat(params.data(), grads.data(), params.size(), state, lr, group);
}

namespace detail {

static_assert(sizeof(Vec3) == 3 * sizeof(double));
static_assert(sizeof(Vec4) == 4 * sizeof(double));

template <class V>
void adam_step_vecs(std::vector<V>& params, const std::vector<V>& grads, AdamParam& state,
                    double lr, const char* group) {
    if (params.size() != grads.size()) {
        throw std::logic_error(std::string("adam_step: gradient shape mismatch in group ") + group);
    }
    const std::size_t n = params.size() * static_cast<std::size_t>(V::RowsAtCompileTime);
    adam_step_flat(params.empty() ? nullptr : params[0].data(),
                   grads.empty() ? nullptr : grads[0].data(), n, state, lr, group);
}

}  // namespace detail

inline void adam_step(std::vector<Vec3>& params, const std::vector<Vec3>& grads, AdamParam& state,
                      double lr, const char* group) {
    detail::adam_step_vecs(params, grads, state, lr, group);
}

inline void adam_step(std::vector<Vec4>& params, const std::vector<Vec4>& grads, AdamParam& state,
                      double lr, const char* group) {
    detail::adam_step_vecs(params, grads, state, lr, group);
}

// Moments for every trainable group of a GaussianCloud.
struct AdamState {
    AdamParam positions, log_scales, rotations, opacities, sh, mask;

    static AdamState init(const GaussianCloud& cloud) {
        AdamState s;
        const std::size_t n = cloud.size();
        const std::size_t basis = sh_basis_count(cloud.sh_degree);
        auto sized = [](AdamParam& p, std::size_t count) {
            p.m1.assign(count, 0.0);
            p.m2.assign(count, 0.0);
        };
        sized(s.positions, n * 3);
        sized(s.log_scales, n * 3);
        sized(s.rotations, n * 4);
        sized(s.opacities, n);
        sized(s.sh, n * basis * 3);
        sized(s.mask, n);
        return s;
    }

    // Appends zeroed moment rows for freshly created Gaussians.
    void append_rows(std::size_t count, std::size_t basis) {
        auto grow = [](AdamParam& p, std::size_t extra) {
            p.m1.resize(p.m1.size() + extra, 0.0);
            p.m2.resize(p.m2.size() + extra, 0.0);
        };
        grow(positions, count * 3);
        grow(log_scales, count * 3);
        grow(rotations, count * 4);
        grow(opacities, count);
        grow(sh, count * basis * 3);
        grow(mask, count);
    }

    // Drops the moment rows of removed Gaussians, preserving order.
    void compact(const std::vector<std::uint8_t>& keep, std::size_t basis) {
        auto filter = [&keep](AdamParam& p, std::size_t width) {
            std::size_t w = 0;
            for (std::size_t i = 0; i < keep.size(); ++i) {
                if (!keep[i]) {
                    continue;
                }
                for (std::size_t c = 0; c < width; ++c) {
                    p.m1[w * width + c] = p.m1[i * width + c];
                    p.m2[w * width + c] = p.m2[i * width + c];
                }
                ++w;
            }
            p.m1.resize(w * width);
            p.m2.resize(w * width);
        };
        filter(positions, 3);
        filter(log_scales, 3);
        filter(rotations, 4);
        filter(opacities, 1);
        filter(sh, basis * 3);
        filter(mask, 1);
    }
};

}  // namespace gsprune
