#pragma once

// Image losses: mean absolute error, differentiable SSIM over an 11x11
// Gaussian window, and their weighted combination with the mask penalty.

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "gsprune/core.hpp"
#include "gsprune/masking.hpp"

namespace gsprune {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 1e-4;  // (0.01)^2 on unit dynamic range
inline constexpr double kSsimC2 = 9e-4;  // (0.03)^2

struct LossGrad {
    double value = 0.0;
    Image grad;
};

inline LossGrad loss_l1(const Image& rendered, const Image& gt) {
    if (rendered.height != gt.height || rendered.width != gt.width) {
        throw std::invalid_argument("loss_l1: image shape mismatch");
    }
    LossGrad out;
    out.grad = Image(rendered.height, rendered.width);
    const double inv_n = 1.0 / static_cast<double>(rendered.data.size());
    for (std::size_t i = 0; i < rendered.data.size(); ++i) {
        const double d = rendered.data[i] - gt.data[i];
        out.value += std::abs(d) * inv_n;
        out.grad.data[i] = (d > 0.0 ? 1.0 : d < 0.0 ? -1.0 : 0.0) * inv_n;
    }
    return out;
}

namespace detail {

inline const std::array<double, kSsimWindow>& ssim_kernel() {
    static const std::array<double, kSsimWindow> k = [] {
        std::array<double, kSsimWindow> v{};
        double sum = 0.0;
        for (int i = 0; i < kSsimWindow; ++i) {
            const double d = i - (kSsimWindow - 1) / 2.0;
            v[i] = std::exp(-0.5 * d * d / (kSsimSigma * kSsimSigma));
            sum += v[i];
        }
        for (double& x : v) {
            x /= sum;
        }
        return v;
    }();
    return k;
}

// Separable valid-mode convolution: (h, w) plane -> (h-10, w-10).
inline std::vector<double> valid_conv(const std::vector<double>& in, int h, int w) {
    const auto& k = ssim_kernel();
    const int wo = w - kSsimWindow + 1;
    const int ho = h - kSsimWindow + 1;
    std::vector<double> rows(static_cast<std::size_t>(h) * wo);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < wo; ++x) {
            double s = 0.0;
            for (int t = 0; t < kSsimWindow; ++t) {
                s += in[static_cast<std::size_t>(y) * w + x + t] * k[t];
            }
            rows[static_cast<std::size_t>(y) * wo + x] = s;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(ho) * wo);
    for (int y = 0; y < ho; ++y) {
        for (int x = 0; x < wo; ++x) {
            double s = 0.0;
            for (int t = 0; t < kSsimWindow; ++t) {
                s += rows[static_cast<std::size_t>(y + t) * wo + x] * k[t];
            }
            out[static_cast<std::size_t>(y) * wo + x] = s;
        }
    }
    return out;
}

// Transpose of valid_conv: scatters an (h-10, w-10) coefficient plane back
// onto the (h, w) input grid. The kernel is symmetric, so this is a full
// convolution with the same weights.
inline std::vector<double> scatter_conv(const std::vector<double>& in, int ho, int wo) {
    const auto& k = ssim_kernel();
    const int w = wo + kSsimWindow - 1;
    const int h = ho + kSsimWindow - 1;
    std::vector<double> rows(static_cast<std::size_t>(ho) * w, 0.0);
    for (int y = 0; y < ho; ++y) {
        for (int x = 0; x < wo; ++x) {
            const double c = in[static_cast<std::size_t>(y) * wo + x];
            for (int t = 0; t < kSsimWindow; ++t) {
                rows[static_cast<std::size_t>(y) * w + x + t] += c * k[t];
            }
        }
    }
    std::vector<double> out(static_cast<std::size_t>(h) * w, 0.0);
    for (int y = 0; y < ho; ++y) {
        for (int x = 0; x < w; ++x) {
            const double c = rows[static_cast<std::size_t>(y) * w + x];
            for (int t = 0; t < kSsimWindow; ++t) {
                out[static_cast<std::size_t>(y + t) * w + x] += c * k[t];
            }
        }
    }
    return out;
}

}  // namespace detail

inline LossGrad loss_ssim(const Image& rendered, const Image& gt) {
    if (rendered.height != gt.height || rendered.width != gt.width) {
        throw std::invalid_argument("loss_ssim: image shape mismatch");
    }
    const int h = rendered.height, w = rendered.width;
    if (h < kSsimWindow || w < kSsimWindow) {
        throw std::invalid_argument("loss_ssim: image smaller than the 11x11 window");
    }
    const int ho = h - kSsimWindow + 1, wo = w - kSsimWindow + 1;
    const std::size_t npix = static_cast<std::size_t>(h) * w;
    const std::size_t nout = static_cast<std::size_t>(ho) * wo;
    const double inv_count = 1.0 / (3.0 * static_cast<double>(nout));

    LossGrad out;
    out.grad = Image(h, w);
    double ssim_sum = 0.0;

    std::vector<double> x(npix), y(npix), xx(npix), yy(npix), xy(npix);
    std::vector<double> cu1(nout), ce11(nout), ce12(nout);
    for (int ch = 0; ch < 3; ++ch) {
        for (std::size_t i = 0; i < npix; ++i) {
            x[i] = rendered.data[i * 3 + ch];
            y[i] = gt.data[i * 3 + ch];
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const std::vector<double> u1 = detail::valid_conv(x, h, w);
        const std::vector<double> u2 = detail::valid_conv(y, h, w);
        const std::vector<double> e11 = detail::valid_conv(xx, h, w);
        const std::vector<double> e22 = detail::valid_conv(yy, h, w);
        const std::vector<double> e12 = detail::valid_conv(xy, h, w);

        for (std::size_t p = 0; p < nout; ++p) {
            const double m1 = u1[p], m2 = u2[p];
            const double v1 = e11[p] - m1 * m1;
            const double v2 = e22[p] - m2 * m2;
            const double v12 = e12[p] - m1 * m2;
            const double a1 = 2.0 * m1 * m2 + kSsimC1;
            const double a2 = 2.0 * v12 + kSsimC2;
            const double b1 = m1 * m1 + m2 * m2 + kSsimC1;
            const double b2 = v1 + v2 + kSsimC2;
            const double d = b1 * b2;
            const double s = a1 * a2 / d;
            ssim_sum += s;
            cu1[p] = 2.0 * m2 * (a2 - a1) / d + 2.0 * m1 * s * (1.0 / b2 - 1.0 / b1);
            ce11[p] = -s / b2;
            ce12[p] = 2.0 * a1 / d;
        }
        const std::vector<double> f1 = detail::scatter_conv(cu1, ho, wo);
        const std::vector<double> f2 = detail::scatter_conv(ce11, ho, wo);
        const std::vector<double> f3 = detail::scatter_conv(ce12, ho, wo);
        for (std::size_t i = 0; i < npix; ++i) {
            out.grad.data[i * 3 + ch] =
                -inv_count * (f1[i] + 2.0 * x[i] * f2[i] + y[i] * f3[i]);
        }
    }
    out.value = 1.0 - ssim_sum * inv_count;
    return out;
}

struct TotalLoss {
    double value = 0.0;
    double l1 = 0.0;
    double ssim = 0.0;     // the 1 - SSIM term (0 when lambda_ssim is 0)
    double mask_l1 = 0.0;  // mean |m| while the mask window is active, else 0
    Image grad_image;
    std::vector<double> grad_mask;
};

inline TotalLoss total_loss(const Image& rendered, const Image& gt, const std::vector<double>& mask,
                            bool mask_active, double lambda_ssim, double lambda_m) {
    TotalLoss out;
    const LossGrad l1 = loss_l1(rendered, gt);
    out.l1 = l1.value;
    out.grad_image = Image(rendered.height, rendered.width);
    if (lambda_ssim != 0.0) {
        const LossGrad ss = loss_ssim(rendered, gt);
        out.ssim = ss.value;
        for (std::size_t i = 0; i < out.grad_image.data.size(); ++i) {
            out.grad_image.data[i] =
                (1.0 - lambda_ssim) * l1.grad.data[i] + lambda_ssim * ss.grad.data[i];
        }
    } else {
        out.grad_image.data = l1.grad.data;
    }
    out.value = (1.0 - lambda_ssim) * out.l1 + lambda_ssim * out.ssim;
    out.grad_mask.assign(mask.size(), 0.0);
    if (mask_active) {
        const MaskPenalty pen = mask_l1(mask);
        out.mask_l1 = pen.value;
        out.value += lambda_m * pen.value;
        for (std::size_t i = 0; i < mask.size(); ++i) {
            out.grad_mask[i] = lambda_m * pen.grad[i];
        }
    }
    return out;
}

}  // namespace gsprune
