#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace gsprune {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Mat23 = Eigen::Matrix<double, 2, 3>;

inline double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double inverse_sigmoid(double y) {
    return std::log(y / (1.0 - y));
}

inline int sh_basis_count(int degree) {
    return (degree + 1) * (degree + 1);
}

// Degree implied by a per-Gaussian coefficient block of `basis` rows.
// Throws if `basis` is not a perfect square in [1, 16].
inline int sh_degree_from_basis(int basis) {
    for (int degree = 0; degree <= 3; ++degree) {
        if (sh_basis_count(degree) == basis) {
            return degree;
        }
    }
    throw std::invalid_argument("malformed SH block: basis count " + std::to_string(basis) +
                                " is not (degree+1)^2 for degree in [0,3]");
}

// One scene's worth of Gaussians, struct-of-arrays. sh_coeffs is packed
// [gaussian][basis][rgb] with basis_count() rows per Gaussian.
struct GaussianCloud {
    int sh_degree = 0;
    std::vector<Vec3> positions;
    std::vector<Vec3> log_scales;
    std::vector<Vec4> rotations;  // (w, x, y, z), need not be pre-normalized
    std::vector<double> opacity_logits;
    std::vector<double> sh_coeffs;
    std::vector<double> mask_params;
    std::vector<double> scores;

    std::size_t size() const { return positions.size(); }
    int basis_count() const { return sh_basis_count(sh_degree); }

    const double* sh_at(std::size_t i) const { return sh_coeffs.data() + i * basis_count() * 3; }
    double* sh_at(std::size_t i) { return sh_coeffs.data() + i * basis_count() * 3; }

    static GaussianCloud zeros(std::size_t n, int sh_degree) {
        GaussianCloud c;
        c.sh_degree = sh_degree;
        c.positions.assign(n, Vec3::Zero());
        c.log_scales.assign(n, Vec3::Zero());
        c.rotations.assign(n, Vec4(1.0, 0.0, 0.0, 0.0));
        c.opacity_logits.assign(n, 0.0);
        c.sh_coeffs.assign(n * sh_basis_count(sh_degree) * 3, 0.0);
        c.mask_params.assign(n, 1.0);
        c.scores.assign(n, 0.0);
        return c;
    }

    void validate() const {
        const std::size_t n = size();
        if (log_scales.size() != n || rotations.size() != n || opacity_logits.size() != n ||
            mask_params.size() != n || scores.size() != n) {
            throw std::invalid_argument("gaussian cloud: field lengths disagree");
        }
        if (sh_degree < 0 || sh_degree > 3) {
            throw std::invalid_argument("gaussian cloud: sh_degree out of range");
        }
        if (sh_coeffs.size() != n * static_cast<std::size_t>(basis_count()) * 3) {
            throw std::invalid_argument("malformed SH block: coefficient array size mismatch");
        }
    }
};

// Pinhole camera with a rigid world-to-camera transform. Camera space is
// x right, y down, z forward; a point is visible only if its camera z > 0.
struct Camera {
    double fx = 0.0, fy = 0.0;
    double cx = 0.0, cy = 0.0;
    int width = 0, height = 0;
    Mat4 world_to_camera = Mat4::Identity();

    Mat3 rotation() const { return world_to_camera.topLeftCorner<3, 3>(); }
    Vec3 translation() const { return world_to_camera.topRightCorner<3, 1>(); }
    Vec3 position() const { return -rotation().transpose() * translation(); }

    void validate() const {
        if (width <= 0 || height <= 0) {
            throw std::invalid_argument("camera: non-positive image size");
        }
        if (!(fx > 0.0) || !(fy > 0.0)) {
            throw std::invalid_argument("camera: focal lengths must be positive");
        }
        const Mat3 r = rotation();
        if ((r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6) {
            throw std::invalid_argument("camera: rotation block is not orthonormal");
        }
        const Eigen::RowVector4d bottom = world_to_camera.row(3);
        if ((bottom - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-12) {
            throw std::invalid_argument("camera: bottom row must be (0,0,0,1)");
        }
    }
};

// Row-major H x W x 3 image. Values are only clamped when leaving the
// pipeline (PNG export); everything differentiable runs on raw doubles.
struct Image {
    int height = 0;
    int width = 0;
    std::vector<double> data;

    Image() = default;
    Image(int h, int w, double fill = 0.0) : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, fill) {}

    double& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    double at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
};

// One supervision pair: a posed camera and its ground-truth image.
struct TrainingView {
    Camera camera;
    Image image;
};

// Rotation matrix of a quaternion (w, x, y, z), normalizing first.
// Throws "degenerate rotation" on a (near-)zero quaternion.
inline Mat3 quaternion_to_rotation(const Vec4& q) {
    const double norm = q.norm();
    if (!(norm > 1e-12)) {
        throw std::invalid_argument("degenerate rotation: zero-norm quaternion");
    }
    const double w = q[0] / norm, x = q[1] / norm, y = q[2] / norm, z = q[3] / norm;
    Mat3 r;
    r << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
        2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
        2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
    return r;
}

// Chain an upstream gradient wrt the rotation matrix back to the raw
// (unnormalized) quaternion. Must pair with quaternion_to_rotation.
inline Vec4 quaternion_rotation_backward(const Vec4& q, const Mat3& grad_r) {
    const double norm = q.norm();
    const Vec4 qn = q / norm;
    const double w = qn[0], x = qn[1], y = qn[2], z = qn[3];

    Mat3 dw, dx, dy, dz;
    dw << 0, -2 * z, 2 * y,
        2 * z, 0, -2 * x,
        -2 * y, 2 * x, 0;
    dx << 0, 2 * y, 2 * z,
        2 * y, -4 * x, -2 * w,
        2 * z, 2 * w, -4 * x;
    dy << -4 * y, 2 * x, 2 * w,
        2 * x, 0, 2 * z,
        -2 * w, 2 * z, -4 * y;
    dz << -4 * z, -2 * w, 2 * x,
        2 * w, -4 * z, 2 * y,
        2 * x, 2 * y, 0;

    Vec4 g_qn(grad_r.cwiseProduct(dw).sum(), grad_r.cwiseProduct(dx).sum(),
              grad_r.cwiseProduct(dy).sum(), grad_r.cwiseProduct(dz).sum());
    // Through the normalization q -> q/|q|.
    return (g_qn - qn * qn.dot(g_qn)) / norm;
}

// Sigma = R diag(exp(ls))^2 R^T. Symmetric positive semi-definite by
// construction; spectrum equals exp(ls)^2 up to rotation.
inline Mat3 covariance_3d(const Vec3& log_scale, const Vec4& rotation) {
    const Mat3 r = quaternion_to_rotation(rotation);
    const Vec3 s = log_scale.array().exp();
    Mat3 m = r * s.asDiagonal();
    return m * m.transpose();
}

// Backward of covariance_3d: given dL/dSigma (full 3x3), returns gradients
// wrt log_scale and the raw quaternion.
inline void covariance_3d_backward(const Vec3& log_scale, const Vec4& rotation, const Mat3& grad_sigma,
                                   Vec3& grad_log_scale, Vec4& grad_rotation) {
    const Mat3 r = quaternion_to_rotation(rotation);
    const Vec3 s = log_scale.array().exp();
    const Mat3 m = r * s.asDiagonal();
    // Sigma = M M^T  =>  dL/dM = (G + G^T) M.
    const Mat3 grad_m = (grad_sigma + grad_sigma.transpose()) * m;
    Mat3 grad_r;
    for (int i = 0; i < 3; ++i) {
        grad_r.col(i) = grad_m.col(i) * s[i];
        grad_log_scale[i] = r.col(i).dot(grad_m.col(i)) * s[i];
    }
    grad_rotation = quaternion_rotation_backward(rotation, grad_r);
}

namespace sh {

inline constexpr double kC0 = 0.28209479177387814;
inline constexpr double kC1 = 0.4886025119029199;
inline constexpr double kC2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                                  -1.0925484305920792, 0.5462742152960396};
inline constexpr double kC3[7] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
                                  0.3731763325901154, -0.4570457994644658, 1.445305721320277,
                                  -0.5900435899266435};

// Real SH basis values for a unit direction, first (degree+1)^2 entries.
inline void basis(const Vec3& d, int degree, double* out) {
    const double x = d[0], y = d[1], z = d[2];
    out[0] = kC0;
    if (degree < 1) return;
    out[1] = -kC1 * y;
    out[2] = kC1 * z;
    out[3] = -kC1 * x;
    if (degree < 2) return;
    const double xx = x * x, yy = y * y, zz = z * z;
    out[4] = kC2[0] * x * y;
    out[5] = kC2[1] * y * z;
    out[6] = kC2[2] * (2.0 * zz - xx - yy);
    out[7] = kC2[3] * x * z;
    out[8] = kC2[4] * (xx - yy);
    if (degree < 3) return;
    out[9] = kC3[0] * y * (3.0 * xx - yy);
    out[10] = kC3[1] * x * y * z;
    out[11] = kC3[2] * y * (4.0 * zz - xx - yy);
    out[12] = kC3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    out[13] = kC3[4] * x * (4.0 * zz - xx - yy);
    out[14] = kC3[5] * z * (xx - yy);
    out[15] = kC3[6] * x * (xx - 3.0 * yy);
}

// d(basis_b)/d(direction) for the same ordering, out[b] is a Vec3.
inline void basis_gradient(const Vec3& d, int degree, Vec3* out) {
    const double x = d[0], y = d[1], z = d[2];
    out[0].setZero();
    if (degree < 1) return;
    out[1] = Vec3(0.0, -kC1, 0.0);
    out[2] = Vec3(0.0, 0.0, kC1);
    out[3] = Vec3(-kC1, 0.0, 0.0);
    if (degree < 2) return;
    const double xx = x * x, yy = y * y, zz = z * z;
    out[4] = kC2[0] * Vec3(y, x, 0.0);
    out[5] = kC2[1] * Vec3(0.0, z, y);
    out[6] = kC2[2] * Vec3(-2.0 * x, -2.0 * y, 4.0 * z);
    out[7] = kC2[3] * Vec3(z, 0.0, x);
    out[8] = kC2[4] * Vec3(2.0 * x, -2.0 * y, 0.0);
    if (degree < 3) return;
    out[9] = kC3[0] * Vec3(6.0 * x * y, 3.0 * xx - 3.0 * yy, 0.0);
    out[10] = kC3[1] * Vec3(y * z, x * z, x * y);
    out[11] = kC3[2] * Vec3(-2.0 * x * y, 4.0 * zz - xx - 3.0 * yy, 8.0 * y * z);
    out[12] = kC3[3] * Vec3(-6.0 * x * z, -6.0 * y * z, 6.0 * zz - 3.0 * xx - 3.0 * yy);
    out[13] = kC3[4] * Vec3(4.0 * zz - 3.0 * xx - yy, -2.0 * x * y, 8.0 * x * z);
    out[14] = kC3[5] * Vec3(2.0 * x * z, -2.0 * y * z, xx - yy);
    out[15] = kC3[6] * Vec3(3.0 * xx - 3.0 * yy, -6.0 * x * y, 0.0);
}

}  // namespace sh

// Unclamped SH color: rgb_c = sum_b coeffs[b][c] * Y_b(dir) + 0.5.
// `coeffs` holds basis*3 doubles packed [basis][rgb]; `basis` rows must be a
// perfect square and `degree` must fit inside it.
inline Vec3 eval_sh(const double* coeffs, int basis, int degree, const Vec3& view_dir) {
    const int implied = sh_degree_from_basis(basis);
    if (degree < 0 || degree > implied) {
        throw std::invalid_argument("malformed SH block: requested degree exceeds basis count");
    }
    double y[16];
    sh::basis(view_dir, degree, y);
    Vec3 rgb(0.5, 0.5, 0.5);
    const int used = sh_basis_count(degree);
    for (int b = 0; b < used; ++b) {
        rgb[0] += coeffs[b * 3 + 0] * y[b];
        rgb[1] += coeffs[b * 3 + 1] * y[b];
        rgb[2] += coeffs[b * 3 + 2] * y[b];
    }
    return rgb;
}

// Backward of eval_sh. grad_coeffs (basis*3) is accumulated (+=); the return
// value is dL/d(view_dir) before any normalization chain the caller owns.
inline Vec3 eval_sh_backward(const double* coeffs, int basis, int degree, const Vec3& view_dir,
                             const Vec3& grad_rgb, double* grad_coeffs) {
    const int implied = sh_degree_from_basis(basis);
    if (degree < 0 || degree > implied) {
        throw std::invalid_argument("malformed SH block: requested degree exceeds basis count");
    }
    double y[16];
    Vec3 gy[16];
    sh::basis(view_dir, degree, y);
    sh::basis_gradient(view_dir, degree, gy);
    Vec3 grad_dir = Vec3::Zero();
    const int used = sh_basis_count(degree);
    for (int b = 0; b < used; ++b) {
        double along = 0.0;
        for (int c = 0; c < 3; ++c) {
            grad_coeffs[b * 3 + c] += grad_rgb[c] * y[b];
            along += grad_rgb[c] * coeffs[b * 3 + c];
        }
        grad_dir += along * gy[b];
    }
    return grad_dir;
}

// Activated view of one Gaussian: world covariance, opacity in (0,1), color.
struct ActivatedGaussian {
    Mat3 covariance;
    double opacity;
    Vec3 rgb;  // unclamped
};

inline ActivatedGaussian activate_params(const GaussianCloud& cloud, std::size_t i, const Vec3& view_dir) {
    ActivatedGaussian out;
    out.covariance = covariance_3d(cloud.log_scales[i], cloud.rotations[i]);
    out.opacity = sigmoid(cloud.opacity_logits[i]);
    out.rgb = eval_sh(cloud.sh_at(i), cloud.basis_count(), cloud.sh_degree, view_dir);
    return out;
}

}  // namespace gsprune
