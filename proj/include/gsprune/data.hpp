#pragma once

// Synthetic scenes, camera rigs, and persistence: PLY interop, native
// checkpoints, and on-disk datasets (cameras.csv + PNG/raw image pairs).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <png.h>

#include "gsprune/core.hpp"
#include "gsprune/render.hpp"
#include "gsprune/rng.hpp"
#include "gsprune/train.hpp"

namespace gsprune {

// --- synthetic scenes --------------------------------------------------------

struct SceneSpec {
    std::size_t n = 100;
    double extent = 1.0;  // positions uniform in [-extent, extent]^3
    double scale_min = 0.02;
    double scale_max = 0.12;
    double opacity_min = 0.2;
    double opacity_max = 0.95;
    double color_min = 0.1;
    double color_max = 0.9;
    int sh_degree = 0;
    std::uint64_t seed = 0;

    void validate() const {
        if (n == 0) {
            throw std::invalid_argument("scene: n must be at least 1");
        }
        if (!(extent > 0.0) || !std::isfinite(extent)) {
            throw std::invalid_argument("scene: extent must be positive and finite");
        }
        if (!(scale_min > 0.0) || scale_max < scale_min) {
            throw std::invalid_argument("scene: bad scale range");
        }
        if (!(opacity_min > 0.0) || !(opacity_max < 1.0) || opacity_max < opacity_min) {
            throw std::invalid_argument("scene: opacities must lie inside (0, 1)");
        }
        if (sh_degree < 0 || sh_degree > 3) {
            throw std::invalid_argument("scene: sh_degree must lie in [0, 3]");
        }
    }
};

// Colors are degree-0 only; higher bands stay zero for any sh_degree.
inline GaussianCloud make_synthetic_cloud(const SceneSpec& spec) {
    spec.validate();
    SeqRng rng(spec.seed, rng_stream::kSceneGen);
    GaussianCloud c = GaussianCloud::zeros(spec.n, spec.sh_degree);
    for (std::size_t i = 0; i < spec.n; ++i) {
        for (int k = 0; k < 3; ++k) {
            c.positions[i][k] = rng.uniform(-spec.extent, spec.extent);
        }
        for (int k = 0; k < 3; ++k) {
            c.log_scales[i][k] = rng.uniform(std::log(spec.scale_min), std::log(spec.scale_max));
        }
        Vec4 q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
        if (q.norm() < 1e-12) {
            q = Vec4(1.0, 0.0, 0.0, 0.0);
        }
        c.rotations[i] = q.normalized();
        c.opacity_logits[i] = inverse_sigmoid(rng.uniform(spec.opacity_min, spec.opacity_max));
        double* sh = c.sh_at(i);
        for (int ch = 0; ch < 3; ++ch) {
            sh[ch] = (rng.uniform(spec.color_min, spec.color_max) - 0.5) / sh::kC0;
        }
    }
    return c;
}

// Replicates every Gaussian `copies` times, jittering positions by
// jitter * scale and splitting opacity so the stack composites back to the
// original: sigma' = 1 - (1 - sigma)^(1/copies).
inline GaussianCloud duplicate_with_jitter(const GaussianCloud& cloud, std::size_t copies,
                                           double jitter, std::uint64_t seed = 0) {
    if (copies == 0) {
        throw std::invalid_argument("duplicate_with_jitter: copies must be at least 1");
    }
    const CounterRng rng{seed};
    const std::size_t basis = static_cast<std::size_t>(cloud.basis_count());
    GaussianCloud out = GaussianCloud::zeros(cloud.size() * copies, cloud.sh_degree);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const double sigma = sigmoid(cloud.opacity_logits[i]);
        const double split = 1.0 - std::pow(1.0 - sigma, 1.0 / static_cast<double>(copies));
        const double split_logit =
            copies == 1 ? cloud.opacity_logits[i] : inverse_sigmoid(split);
        const Vec3 scale = cloud.log_scales[i].array().exp();
        for (std::size_t j = 0; j < copies; ++j) {
            const std::size_t row = i * copies + j;
            Vec3 offset;
            for (int c = 0; c < 3; ++c) {
                offset[c] = jitter * scale[c] *
                            rng.normal(rng_stream::kJitter, i, j, static_cast<std::uint64_t>(c));
            }
            out.positions[row] = cloud.positions[i] + offset;
            out.log_scales[row] = cloud.log_scales[i];
            out.rotations[row] = cloud.rotations[i];
            out.opacity_logits[row] = split_logit;
            std::copy_n(cloud.sh_at(i), basis * 3, out.sh_at(row));
        }
    }
    return out;
}

// --- camera rigs -------------------------------------------------------------

// Camera at `eye` looking at `target`; z-up world, y grows downward in image.
inline Camera look_at_camera(const Vec3& eye, const Vec3& target, double focal, int width,
                             int height) {
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

// Evenly spaced look-at cameras on one or two elevation rings.
inline std::vector<Camera> orbit_cameras(const Vec3& center, double radius, std::size_t count,
                                         int width, int height, double fov_deg, int rings = 1) {
    if (count == 0) {
        throw std::invalid_argument("orbit_cameras: count must be at least 1");
    }
    if (rings < 1 || rings > 2) {
        throw std::invalid_argument("orbit_cameras: rings must be 1 or 2");
    }
    if (!(radius > 0.0) || !(fov_deg > 0.0) || fov_deg >= 180.0) {
        throw std::invalid_argument("orbit_cameras: bad radius or fov");
    }
    const double focal = (width / 2.0) / std::tan(fov_deg * M_PI / 360.0);
    const double elevations[2] = {rings == 1 ? 0.3 : 0.15, 0.55};
    std::vector<Camera> cams;
    cams.reserve(count);
    std::size_t assigned = 0;
    for (int r = 0; r < rings; ++r) {
        const std::size_t ring_count =
            count / static_cast<std::size_t>(rings) +
            (static_cast<std::size_t>(r) < count % static_cast<std::size_t>(rings) ? 1 : 0);
        for (std::size_t k = 0; k < ring_count; ++k, ++assigned) {
            const double az = 2.0 * M_PI * static_cast<double>(k) / static_cast<double>(ring_count);
            const double el = elevations[r];
            const Vec3 eye = center + radius * Vec3(std::cos(az) * std::cos(el),
                                                    std::sin(az) * std::cos(el), std::sin(el));
            cams.push_back(look_at_camera(eye, center, focal, width, height));
        }
    }
    return cams;
}

// --- datasets ----------------------------------------------------------------

struct Dataset {
    std::vector<TrainingView> train;
    std::vector<TrainingView> test;
    std::optional<GaussianCloud> gt;
};

// Renders ground truth for every camera; every holdout_every-th camera
// (starting with the first) goes to the test split. holdout_every = 0 keeps
// everything in train.
inline Dataset render_dataset(const GaussianCloud& cloud, const std::vector<Camera>& cameras,
                              std::size_t holdout_every, const RenderConfig& cfg = RenderConfig{}) {
    if (cameras.size() < 2) {
        throw std::invalid_argument("render_dataset: need at least two cameras");
    }
    if (holdout_every == 1) {
        throw std::invalid_argument("render_dataset: holdout_every of 1 leaves no training views");
    }
    Dataset ds;
    ds.gt = cloud;
    for (std::size_t i = 0; i < cameras.size(); ++i) {
        TrainingView view{cameras[i], render_image(cloud, cameras[i], cfg)};
        const bool test = holdout_every > 0 && i % holdout_every == 0;
        (test ? ds.test : ds.train).push_back(std::move(view));
    }
    return ds;
}

// --- image files -------------------------------------------------------------

// 8-bit RGB PNG for inspection; values clamped to [0, 1].
inline void write_png(const std::string& path, const Image& img) {
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) {
        throw std::runtime_error("png: cannot open " + path);
    }
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) {
            png_destroy_write_struct(&png, info ? &info : nullptr);
        }
        std::fclose(fp);
        throw std::runtime_error("png: write failed for " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_byte> row(static_cast<std::size_t>(img.width) * 3);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(img.at(y, x, c), 0.0, 1.0);
                row[static_cast<std::size_t>(x) * 3 + static_cast<std::size_t>(c)] =
                    static_cast<png_byte>(std::lround(v * 255.0));
            }
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

namespace detail {

inline constexpr char kRawMagic[8] = {'G', 'S', 'P', 'R', 'A', 'W', 'F', '1'};
inline constexpr char kCheckpointMagic[8] = {'G', 'S', 'P', 'C', 'K', 'P', 'T', '1'};

struct BinWriter {
    std::ofstream f;
    explicit BinWriter(const std::string& path) : f(path, std::ios::binary) {
        if (!f) {
            throw std::runtime_error("io: cannot open " + path + " for writing");
        }
    }
    void bytes(const void* p, std::size_t n) { f.write(static_cast<const char*>(p), n); }
    void u8(std::uint8_t v) { bytes(&v, 1); }
    void u32(std::uint32_t v) { bytes(&v, 4); }
    void u64(std::uint64_t v) { bytes(&v, 8); }
    void f64(double v) { bytes(&v, 8); }
    void f64s(const std::vector<double>& v) {
        u64(v.size());
        bytes(v.data(), v.size() * 8);
    }
    void u32s(const std::vector<std::uint32_t>& v) {
        u64(v.size());
        bytes(v.data(), v.size() * 4);
    }
    void str(const std::string& s) {
        u64(s.size());
        bytes(s.data(), s.size());
    }
};

struct BinReader {
    std::ifstream f;
    std::string what;
    BinReader(const std::string& path, std::string context) : f(path, std::ios::binary), what(std::move(context)) {
        if (!f) {
            throw std::runtime_error(what + ": cannot open " + path);
        }
    }
    void bytes(void* p, std::size_t n) {
        f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(f.gcount()) != n) {
            throw std::runtime_error(what + ": truncated file");
        }
    }
    std::uint8_t u8() {
        std::uint8_t v;
        bytes(&v, 1);
        return v;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        bytes(&v, 4);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        bytes(&v, 8);
        return v;
    }
    double f64() {
        double v;
        bytes(&v, 8);
        return v;
    }
    // Element counts are validated against the remaining file size upstream
    // via the truncation check; cap them to keep a corrupt header from OOMing.
    std::uint64_t count() {
        const std::uint64_t n = u64();
        if (n > (1ull << 32)) {
            throw std::runtime_error(what + ": implausible element count");
        }
        return n;
    }
    std::vector<double> f64s() {
        std::vector<double> v(count());
        bytes(v.data(), v.size() * 8);
        return v;
    }
    std::vector<std::uint32_t> u32s() {
        std::vector<std::uint32_t> v(count());
        bytes(v.data(), v.size() * 4);
        return v;
    }
    std::string str() {
        std::string s(count(), '\0');
        bytes(s.data(), s.size());
        return s;
    }
};

}  // namespace detail

// Raw float64 image: exact round trip, the authoritative path for metrics.
inline void write_raw(const std::string& path, const Image& img) {
    detail::BinWriter w(path);
    w.bytes(detail::kRawMagic, 8);
    w.u32(static_cast<std::uint32_t>(img.height));
    w.u32(static_cast<std::uint32_t>(img.width));
    w.bytes(img.data.data(), img.data.size() * 8);
}

inline Image read_raw(const std::string& path) {
    detail::BinReader r(path, "raw image");
    char magic[8];
    r.bytes(magic, 8);
    if (!std::equal(magic, magic + 8, detail::kRawMagic)) {
        throw std::runtime_error("raw image: bad magic in " + path);
    }
    const int h = static_cast<int>(r.u32());
    const int w = static_cast<int>(r.u32());
    if (h <= 0 || w <= 0 || h > 1 << 16 || w > 1 << 16) {
        throw std::runtime_error("raw image: implausible size in " + path);
    }
    Image img(h, w);
    r.bytes(img.data.data(), img.data.size() * 8);
    return img;
}

// --- PLY interop -------------------------------------------------------------

namespace detail {

// The de facto 3DGS vertex layout: 62 float32 properties.
inline std::vector<std::string> ply_property_names() {
    std::vector<std::string> names = {"x", "y", "z", "nx", "ny", "nz"};
    for (int i = 0; i < 3; ++i) {
        names.push_back("f_dc_" + std::to_string(i));
    }
    for (int i = 0; i < 45; ++i) {
        names.push_back("f_rest_" + std::to_string(i));
    }
    names.push_back("opacity");
    for (int i = 0; i < 3; ++i) {
        names.push_back("scale_" + std::to_string(i));
    }
    for (int i = 0; i < 4; ++i) {
        names.push_back("rot_" + std::to_string(i));
    }
    return names;
}

}  // namespace detail

// Binary little-endian PLY in the community 3DGS layout. f_rest is stored
// channel-major (all red band coefficients, then green, then blue); degrees
// below 3 zero-pad their missing bands.
inline void save_ply(const GaussianCloud& cloud, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("ply: cannot open " + path + " for writing");
    }
    f << "ply\nformat binary_little_endian 1.0\nelement vertex " << cloud.size() << "\n";
    for (const std::string& name : detail::ply_property_names()) {
        f << "property float " << name << "\n";
    }
    f << "end_header\n";

    const int basis = cloud.basis_count();
    std::vector<float> row(62);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        std::fill(row.begin(), row.end(), 0.0f);
        for (int c = 0; c < 3; ++c) {
            row[static_cast<std::size_t>(c)] = static_cast<float>(cloud.positions[i][c]);
        }
        const double* sh = cloud.sh_at(i);
        for (int c = 0; c < 3; ++c) {
            row[6 + static_cast<std::size_t>(c)] = static_cast<float>(sh[c]);
        }
        for (int b = 1; b < basis; ++b) {
            for (int c = 0; c < 3; ++c) {
                row[9 + static_cast<std::size_t>(c * 15 + b - 1)] =
                    static_cast<float>(sh[b * 3 + c]);
            }
        }
        row[54] = static_cast<float>(cloud.opacity_logits[i]);
        for (int c = 0; c < 3; ++c) {
            row[55 + static_cast<std::size_t>(c)] = static_cast<float>(cloud.log_scales[i][c]);
        }
        for (int c = 0; c < 4; ++c) {
            row[58 + static_cast<std::size_t>(c)] = static_cast<float>(cloud.rotations[i][c]);
        }
        f.write(reinterpret_cast<const char*>(row.data()), 62 * 4);
    }
    if (!f) {
        throw std::runtime_error("ply: write failed for " + path);
    }
}

// Loads the layout written by save_ply. The result is always a degree-3
// cloud (the file format carries all 45 f_rest slots); mask and score
// columns reset to their defaults.
inline GaussianCloud load_ply(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("ply: cannot open " + path);
    }
    std::string line;
    auto next_line = [&]() {
        if (!std::getline(f, line)) {
            throw std::runtime_error("ply: unexpected end of header in " + path);
        }
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
    };
    next_line();
    if (line != "ply") {
        throw std::runtime_error("ply: missing magic in " + path);
    }
    next_line();
    if (line != "format binary_little_endian 1.0") {
        throw std::runtime_error("ply: unsupported format '" + line + "'");
    }
    std::size_t count = 0;
    bool have_count = false;
    std::vector<std::string> props;
    while (true) {
        next_line();
        if (line == "end_header") {
            break;
        }
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "comment") {
            continue;
        }
        if (word == "element") {
            std::string kind;
            ls >> kind >> count;
            if (kind != "vertex" || ls.fail()) {
                throw std::runtime_error("ply: expected a vertex element, got '" + line + "'");
            }
            have_count = true;
        } else if (word == "property") {
            std::string type, name;
            ls >> type >> name;
            if (type != "float" || ls.fail()) {
                throw std::runtime_error("ply: expected float properties, got '" + line + "'");
            }
            props.push_back(name);
        } else {
            throw std::runtime_error("ply: unexpected header line '" + line + "'");
        }
    }
    if (!have_count) {
        throw std::runtime_error("ply: header has no vertex element in " + path);
    }
    if (props != detail::ply_property_names()) {
        throw std::runtime_error("ply: property set does not match the 3DGS vertex layout in " +
                                 path);
    }

    GaussianCloud cloud = GaussianCloud::zeros(count, 3);
    std::vector<float> row(62);
    for (std::size_t i = 0; i < count; ++i) {
        f.read(reinterpret_cast<char*>(row.data()), 62 * 4);
        if (static_cast<std::size_t>(f.gcount()) != 62 * 4) {
            throw std::runtime_error("ply: truncated vertex data in " + path);
        }
        for (int c = 0; c < 3; ++c) {
            cloud.positions[i][c] = row[static_cast<std::size_t>(c)];
        }
        double* sh = cloud.sh_at(i);
        for (int c = 0; c < 3; ++c) {
            sh[c] = row[6 + static_cast<std::size_t>(c)];
        }
        for (int b = 1; b < 16; ++b) {
            for (int c = 0; c < 3; ++c) {
                sh[b * 3 + c] = row[9 + static_cast<std::size_t>(c * 15 + b - 1)];
            }
        }
        cloud.opacity_logits[i] = row[54];
        for (int c = 0; c < 3; ++c) {
            cloud.log_scales[i][c] = row[55 + static_cast<std::size_t>(c)];
        }
        for (int c = 0; c < 4; ++c) {
            cloud.rotations[i][c] = row[58 + static_cast<std::size_t>(c)];
        }
    }
    return cloud;
}

// --- checkpoints -------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void write_cloud(BinWriter& w, const GaussianCloud& cloud) {
    w.u32(static_cast<std::uint32_t>(cloud.sh_degree));
    w.u64(cloud.size());
    auto vecs = [&w](const auto& v, int width) {
        for (const auto& row : v) {
            for (int c = 0; c < width; ++c) {
                w.f64(row[c]);
            }
        }
    };
    vecs(cloud.positions, 3);
    vecs(cloud.log_scales, 3);
    vecs(cloud.rotations, 4);
    w.f64s(cloud.opacity_logits);
    w.f64s(cloud.sh_coeffs);
    w.f64s(cloud.mask_params);
    w.f64s(cloud.scores);
}

inline GaussianCloud read_cloud(BinReader& r) {
    const int degree = static_cast<int>(r.u32());
    if (degree < 0 || degree > 3) {
        throw std::runtime_error(r.what + ": bad SH degree");
    }
    const std::uint64_t n = r.count();
    GaussianCloud cloud = GaussianCloud::zeros(n, degree);
    auto vecs = [&r](auto& v, int width) {
        for (auto& row : v) {
            for (int c = 0; c < width; ++c) {
                row[c] = r.f64();
            }
        }
    };
    vecs(cloud.positions, 3);
    vecs(cloud.log_scales, 3);
    vecs(cloud.rotations, 4);
    cloud.opacity_logits = r.f64s();
    cloud.sh_coeffs = r.f64s();
    cloud.mask_params = r.f64s();
    cloud.scores = r.f64s();
    cloud.validate();
    return cloud;
}

inline void write_adam_group(BinWriter& w, const AdamParam& p) {
    w.u64(p.steps);
    w.f64s(p.m1);
    w.f64s(p.m2);
}

inline AdamParam read_adam_group(BinReader& r) {
    AdamParam p;
    p.steps = r.u64();
    p.m1 = r.f64s();
    p.m2 = r.f64s();
    if (p.m1.size() != p.m2.size()) {
        throw std::runtime_error(r.what + ": adam moment sizes disagree");
    }
    return p;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    detail::BinWriter w(path);
    w.bytes(detail::kCheckpointMagic, 8);
    w.u32(kCheckpointVersion);
    w.str(serialize_config(ck.config));
    w.u64(ck.iteration);
    detail::write_cloud(w, ck.cloud);
    for (const AdamParam* group : {&ck.adam.positions, &ck.adam.log_scales, &ck.adam.rotations,
                                   &ck.adam.opacities, &ck.adam.sh, &ck.adam.mask}) {
        detail::write_adam_group(w, *group);
    }
    w.f64(ck.mask.tau);
    w.u8(static_cast<std::uint8_t>(ck.mask.mode));
    w.u64(ck.mask.rng.seed);
    w.u64(ck.mask.iteration);
    w.u8(ck.mask.active ? 1 : 0);
    w.u64(ck.score_rr);
    w.f64s(ck.grad_accum);
    w.u32s(ck.grad_count);
    w.u64(ck.n_before_prune);
    w.u64(ck.pruned_count);
    w.u64(ck.prune_iteration);
    w.f64(ck.learned_ratio);
    w.f64s(ck.window_end_inputs);
    if (!w.f) {
        throw std::runtime_error("checkpoint: write failed for " + path);
    }
}

inline Checkpoint load_checkpoint(const std::string& path) {
    detail::BinReader r(path, "checkpoint");
    char magic[8];
    r.bytes(magic, 8);
    if (!std::equal(magic, magic + 8, detail::kCheckpointMagic)) {
        throw std::runtime_error("checkpoint: bad magic in " + path);
    }
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version) +
                                 " in " + path);
    }
    Checkpoint ck;
    ck.config = parse_config(r.str());
    ck.iteration = r.u64();
    ck.cloud = detail::read_cloud(r);
    for (AdamParam* group : {&ck.adam.positions, &ck.adam.log_scales, &ck.adam.rotations,
                             &ck.adam.opacities, &ck.adam.sh, &ck.adam.mask}) {
        *group = detail::read_adam_group(r);
    }
    ck.mask.tau = r.f64();
    const std::uint8_t mode = r.u8();
    if (mode > 2) {
        throw std::runtime_error("checkpoint: bad mask mode in " + path);
    }
    ck.mask.mode = static_cast<MaskMode>(mode);
    ck.mask.rng = CounterRng{r.u64()};
    ck.mask.iteration = r.u64();
    ck.mask.active = r.u8() != 0;
    ck.score_rr = r.u64();
    ck.grad_accum = r.f64s();
    ck.grad_count = r.u32s();
    ck.n_before_prune = r.u64();
    ck.pruned_count = r.u64();
    ck.prune_iteration = r.u64();
    ck.learned_ratio = r.f64();
    ck.window_end_inputs = r.f64s();
    return ck;
}

// --- dataset directories -----------------------------------------------------

namespace detail {

inline std::string view_stem(std::size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04zu", index);
    return buf;
}

inline void write_camera_row(std::string& out, const char* split, std::size_t index,
                             const Camera& cam) {
    out += std::string(split) + "," + std::to_string(index) + "," + std::to_string(cam.width) +
           "," + std::to_string(cam.height) + "," + csv_num(cam.fx) + "," + csv_num(cam.fy) + "," +
           csv_num(cam.cx) + "," + csv_num(cam.cy);
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 4; ++c) {
            out += "," + csv_num(cam.world_to_camera(r, c));
        }
    }
    out += "\n";
}

}  // namespace detail

// Layout: cameras.csv, train/####.png + train/####.raw, test/..., gt.ply.
inline void save_dataset(const std::string& dir, const Dataset& ds) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "train");
    fs::create_directories(fs::path(dir) / "test");
    std::string csv =
        "split,index,width,height,fx,fy,cx,cy,"
        "w2c00,w2c01,w2c02,w2c03,w2c10,w2c11,w2c12,w2c13,w2c20,w2c21,w2c22,w2c23\n";
    auto dump_split = [&](const char* split, const std::vector<TrainingView>& views) {
        for (std::size_t i = 0; i < views.size(); ++i) {
            detail::write_camera_row(csv, split, i, views[i].camera);
            const std::string stem = (fs::path(dir) / split / detail::view_stem(i)).string();
            write_png(stem + ".png", views[i].image);
            write_raw(stem + ".raw", views[i].image);
        }
    };
    dump_split("train", ds.train);
    dump_split("test", ds.test);
    std::ofstream f(fs::path(dir) / "cameras.csv");
    if (!f) {
        throw std::runtime_error("dataset: cannot write cameras.csv in " + dir);
    }
    f << csv;
    if (ds.gt) {
        save_ply(*ds.gt, (fs::path(dir) / "gt.ply").string());
    }
}

inline Dataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream f(fs::path(dir) / "cameras.csv");
    if (!f) {
        throw std::runtime_error("dataset: cannot open cameras.csv in " + dir);
    }
    Dataset ds;
    std::string line;
    if (!std::getline(f, line)) {
        throw std::runtime_error("dataset: empty cameras.csv in " + dir);
    }
    std::size_t counts[2] = {0, 0};  // per-split indices seen, for ordering checks
    while (std::getline(f, line)) {
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> fields;
        std::istringstream ls(line);
        std::string field;
        while (std::getline(ls, field, ',')) {
            fields.push_back(field);
        }
        if (fields.size() != 20) {
            throw std::runtime_error("dataset: malformed camera row '" + line + "'");
        }
        const bool is_test = fields[0] == "test";
        if (!is_test && fields[0] != "train") {
            throw std::runtime_error("dataset: unknown split '" + fields[0] + "'");
        }
        const std::size_t index = std::stoull(fields[1]);
        if (index != counts[is_test ? 1 : 0]++) {
            throw std::runtime_error("dataset: camera rows out of order in " + dir);
        }
        Camera cam;
        cam.width = std::stoi(fields[2]);
        cam.height = std::stoi(fields[3]);
        cam.fx = std::stod(fields[4]);
        cam.fy = std::stod(fields[5]);
        cam.cx = std::stod(fields[6]);
        cam.cy = std::stod(fields[7]);
        cam.world_to_camera.setIdentity();
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 4; ++c) {
                cam.world_to_camera(r, c) = std::stod(fields[8 + static_cast<std::size_t>(r * 4 + c)]);
            }
        }
        const std::string stem =
            (fs::path(dir) / fields[0] / detail::view_stem(index)).string();
        TrainingView view{cam, read_raw(stem + ".raw")};
        (is_test ? ds.test : ds.train).push_back(std::move(view));
    }
    const std::string gt_path = (fs::path(dir) / "gt.ply").string();
    if (fs::exists(gt_path)) {
        ds.gt = load_ply(gt_path);
    }
    return ds;
}

}  // namespace gsprune
