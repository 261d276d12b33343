#pragma once

// Evaluation metrics and the CSV report emitted by eval runs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gsprune/core.hpp"
#include "gsprune/loss.hpp"
#include "gsprune/render.hpp"

namespace gsprune {

inline constexpr double kPsnrCap = 100.0;

inline double psnr(const Image& a, const Image& b) {
    if (a.height != b.height || a.width != b.width) {
        throw std::invalid_argument("psnr: image shape mismatch");
    }
    double mse = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.data.size());
    if (mse <= 0.0) {
        return kPsnrCap;
    }
    return std::min(10.0 * std::log10(1.0 / mse), kPsnrCap);
}

// Same kernel and constants as loss_ssim, value only.
inline double ssim_eval(const Image& a, const Image& b) {
    return 1.0 - loss_ssim(a, b).value;
}

struct EvalRow {
    std::size_t view = 0;
    double psnr = 0.0;
    double ssim = 0.0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
    std::size_t n_gaussians = 0;
    double prune_ratio = 0.0;
    double seconds = 0.0;
};

inline EvalReport eval_model(const GaussianCloud& cloud, const std::vector<TrainingView>& views,
                             const RenderConfig& cfg = RenderConfig{}, const Gate& gate = Gate{}) {
    if (views.empty()) {
        throw std::invalid_argument("eval_model: no test views");
    }
    EvalReport report;
    report.n_gaussians = cloud.size();
    for (std::size_t v = 0; v < views.size(); ++v) {
        const Image rendered = render_image(cloud, views[v].camera, cfg, gate);
        EvalRow row;
        row.view = v;
        row.psnr = psnr(rendered, views[v].image);
        row.ssim = ssim_eval(rendered, views[v].image);
        report.mean_psnr += row.psnr;
        report.mean_ssim += row.ssim;
        report.rows.push_back(row);
    }
    report.mean_psnr /= static_cast<double>(views.size());
    report.mean_ssim /= static_cast<double>(views.size());
    return report;
}

namespace detail {

inline std::string csv_num(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace detail

inline std::string format_eval_csv(const EvalReport& report) {
    std::string out = "view,psnr,ssim,n_gaussians,prune_ratio,seconds\n";
    const std::string tail = "," + std::to_string(report.n_gaussians) + "," +
                             detail::csv_num(report.prune_ratio) + "," +
                             detail::csv_num(report.seconds) + "\n";
    for (const EvalRow& row : report.rows) {
        out += std::to_string(row.view) + "," + detail::csv_num(row.psnr) + "," +
               detail::csv_num(row.ssim) + tail;
    }
    out += "mean," + detail::csv_num(report.mean_psnr) + "," + detail::csv_num(report.mean_ssim) +
           tail;
    return out;
}

}  // namespace gsprune
