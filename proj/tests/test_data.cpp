#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gsprune/data.hpp"
#include "helpers.hpp"

using namespace gsprune;
using namespace testutil;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string read_file(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

void write_file(const fs::path& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("synthetic clouds are seeded and in range") {
    SceneSpec spec;
    spec.n = 200;
    spec.extent = 1.5;
    spec.scale_min = 0.03;
    spec.scale_max = 0.2;
    spec.opacity_min = 0.3;
    spec.opacity_max = 0.9;
    spec.seed = 41;

    const GaussianCloud a = make_synthetic_cloud(spec);
    const GaussianCloud b = make_synthetic_cloud(spec);
    REQUIRE(a.size() == 200);
    CHECK(a.positions == b.positions);
    CHECK(a.opacity_logits == b.opacity_logits);
    CHECK(a.sh_coeffs == b.sh_coeffs);

    spec.seed = 42;
    const GaussianCloud c = make_synthetic_cloud(spec);
    CHECK(a.positions != c.positions);

    for (std::size_t i = 0; i < a.size(); ++i) {
        for (int k = 0; k < 3; ++k) {
            CHECK(std::abs(a.positions[i][k]) <= spec.extent);
            const double s = std::exp(a.log_scales[i][k]);
            CHECK(s >= spec.scale_min * (1.0 - 1e-12));
            CHECK(s <= spec.scale_max * (1.0 + 1e-12));
        }
        CHECK(std::abs(a.rotations[i].norm() - 1.0) < 1e-12);
        const double sigma = sigmoid(a.opacity_logits[i]);
        CHECK(sigma >= spec.opacity_min - 1e-12);
        CHECK(sigma <= spec.opacity_max + 1e-12);
    }

    SECTION("single gaussian and validation errors") {
        spec.n = 1;
        CHECK(make_synthetic_cloud(spec).size() == 1);
        spec.n = 0;
        CHECK_THROWS_AS(make_synthetic_cloud(spec), std::invalid_argument);
        spec.n = 1;
        spec.opacity_max = 1.0;
        CHECK_THROWS_AS(make_synthetic_cloud(spec), std::invalid_argument);
    }
    SECTION("degree above zero pads higher bands with zeros") {
        spec.sh_degree = 2;
        const GaussianCloud d = make_synthetic_cloud(spec);
        for (std::size_t i = 0; i < d.size(); ++i) {
            const double* sh = d.sh_at(i);
            for (int b = 1; b < d.basis_count(); ++b) {
                for (int ch = 0; ch < 3; ++ch) {
                    CHECK(sh[b * 3 + ch] == 0.0);
                }
            }
        }
    }
}

TEST_CASE("duplicate_with_jitter splits opacity to composite back") {
    const GaussianCloud base = random_cloud(600, 12, 1);

    SECTION("copies=1 with zero jitter is the identity") {
        const GaussianCloud out = duplicate_with_jitter(base, 1, 0.0);
        CHECK(out.positions == base.positions);
        CHECK(out.log_scales == base.log_scales);
        CHECK(out.rotations == base.rotations);
        CHECK(out.opacity_logits == base.opacity_logits);
        CHECK(out.sh_coeffs == base.sh_coeffs);
    }
    SECTION("two copies of a 0.75 opacity become 0.5 each") {
        GaussianCloud src = base;
        src.opacity_logits.assign(src.size(), inverse_sigmoid(0.75));
        const GaussianCloud out = duplicate_with_jitter(src, 2, 0.1, 7);
        REQUIRE(out.size() == 2 * src.size());
        for (double logit : out.opacity_logits) {
            CHECK(sigmoid(logit) == Approx(0.5).margin(1e-12));
        }
    }
    SECTION("a stack composites to the original opacity") {
        // 1 - (1 - sigma')^copies returns sigma by construction.
        const GaussianCloud out = duplicate_with_jitter(base, 3, 0.05, 9);
        REQUIRE(out.size() == 3 * base.size());
        for (std::size_t i = 0; i < base.size(); ++i) {
            const double split = sigmoid(out.opacity_logits[i * 3]);
            const double stacked = 1.0 - std::pow(1.0 - split, 3.0);
            CHECK(stacked == Approx(sigmoid(base.opacity_logits[i])).margin(1e-12));
        }
    }
    SECTION("jitter scales with the gaussian's own size") {
        GaussianCloud src = base;
        src.log_scales.assign(src.size(), Vec3::Constant(std::log(0.01)));
        const GaussianCloud out = duplicate_with_jitter(src, 2, 0.5, 11);
        for (std::size_t i = 0; i < src.size(); ++i) {
            for (std::size_t j = 0; j < 2; ++j) {
                const Vec3 offset = out.positions[i * 2 + j] - src.positions[i];
                // Offsets are jitter * scale * standard normals; 6 sigma bound.
                CHECK(offset.norm() < 0.5 * 0.01 * 6.0 * std::sqrt(3.0));
            }
        }
        CHECK_THROWS_AS(duplicate_with_jitter(src, 0, 0.0), std::invalid_argument);
    }
    SECTION("jitter is seeded") {
        const GaussianCloud a = duplicate_with_jitter(base, 2, 0.1, 5);
        const GaussianCloud b = duplicate_with_jitter(base, 2, 0.1, 5);
        const GaussianCloud c = duplicate_with_jitter(base, 2, 0.1, 6);
        CHECK(a.positions == b.positions);
        CHECK(a.positions != c.positions);
    }
}

TEST_CASE("orbit cameras ring the center") {
    const Vec3 center(0.5, -0.25, 1.0);
    const double radius = 3.0;
    const std::vector<Camera> cams = orbit_cameras(center, radius, 4, 64, 48, 60.0);
    REQUIRE(cams.size() == 4);

    SECTION("azimuths land on quarter turns") {
        const double el = 0.3;
        for (std::size_t k = 0; k < 4; ++k) {
            const double az = 2.0 * M_PI * k / 4.0;
            const Vec3 expected =
                center + radius * Vec3(std::cos(az) * std::cos(el), std::sin(az) * std::cos(el),
                                       std::sin(el));
            CHECK((cams[k].position() - expected).norm() < 1e-12);
        }
    }
    SECTION("optical axis passes through the center") {
        for (const Camera& cam : cams) {
            const Vec3 pc = cam.world_to_camera.topLeftCorner<3, 3>() * center +
                            cam.world_to_camera.topRightCorner<3, 1>();
            REQUIRE(pc.z() > 0.0);
            const double u = cam.fx * pc.x() / pc.z() + cam.cx;
            const double v = cam.fy * pc.y() / pc.z() + cam.cy;
            CHECK(std::abs(u - cam.cx) < 1e-9);
            CHECK(std::abs(v - cam.cy) < 1e-9);
        }
    }
    SECTION("radius scales distance; fov sets the focal length") {
        const std::vector<Camera> far = orbit_cameras(center, 2.0 * radius, 4, 64, 48, 60.0);
        for (std::size_t k = 0; k < 4; ++k) {
            CHECK((far[k].position() - center).norm() ==
                  Approx(2.0 * (cams[k].position() - center).norm()).epsilon(1e-12));
        }
        // Horizontal fov 60 degrees at width 64: fx = 32 / tan(30 deg).
        CHECK(cams[0].fx == Approx(32.0 / std::tan(M_PI / 6.0)).epsilon(1e-12));
        CHECK(cams[0].fy == cams[0].fx);
    }
    SECTION("two rings split the count across elevations") {
        const std::vector<Camera> two = orbit_cameras(center, radius, 7, 32, 32, 50.0, 2);
        REQUIRE(two.size() == 7);
        std::vector<double> heights;
        for (const Camera& cam : two) {
            heights.push_back(cam.position().z());
        }
        std::sort(heights.begin(), heights.end());
        // First ring (4 cameras) sits lower than the second (3 cameras).
        CHECK(heights[3] == Approx(center.z() + radius * std::sin(0.15)).margin(1e-12));
        CHECK(heights[4] == Approx(center.z() + radius * std::sin(0.55)).margin(1e-12));
    }
    SECTION("bad arguments throw") {
        CHECK_THROWS_AS(orbit_cameras(center, radius, 0, 32, 32, 60.0), std::invalid_argument);
        CHECK_THROWS_AS(orbit_cameras(center, radius, 4, 32, 32, 60.0, 3), std::invalid_argument);
        CHECK_THROWS_AS(orbit_cameras(center, radius, 4, 32, 32, 191.0), std::invalid_argument);
    }
}

TEST_CASE("render_dataset splits views and renders purely") {
    const GaussianCloud scene = random_cloud(610, 15, 0);
    const std::vector<Camera> cams = orbit_cameras(Vec3::Zero(), 3.0, 16, 16, 16, 55.0);

    const Dataset ds = render_dataset(scene, cams, 8);
    CHECK(ds.train.size() == 14);
    CHECK(ds.test.size() == 2);
    REQUIRE(ds.gt.has_value());

    SECTION("images re-render bit-identically") {
        const Image again = render_image(scene, ds.test[0].camera);
        CHECK(again.data == ds.test[0].image.data);
    }
    SECTION("holdout zero keeps everything in train") {
        const Dataset all = render_dataset(scene, cams, 0);
        CHECK(all.train.size() == 16);
        CHECK(all.test.empty());
    }
    SECTION("empty cloud renders background") {
        const Dataset empty = render_dataset(GaussianCloud::zeros(0, 0), cams, 8);
        for (double v : empty.train[0].image.data) {
            CHECK(v == 0.0);
        }
    }
    SECTION("bad arguments throw") {
        CHECK_THROWS_WITH(render_dataset(scene, {cams[0]}, 8),
                          "render_dataset: need at least two cameras");
        CHECK_THROWS_WITH(render_dataset(scene, cams, 1),
                          "render_dataset: holdout_every of 1 leaves no training views");
    }
}

TEST_CASE("ply round trips at float32 precision") {
    const fs::path dir = fresh_dir("gsprune_test_ply");
    const GaussianCloud cloud = random_cloud(620, 20, 3);
    const std::string path = (dir / "cloud.ply").string();
    save_ply(cloud, path);
    const GaussianCloud back = load_ply(path);

    REQUIRE(back.size() == cloud.size());
    CHECK(back.sh_degree == 3);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        for (int c = 0; c < 3; ++c) {
            CHECK(back.positions[i][c] == static_cast<double>(static_cast<float>(cloud.positions[i][c])));
            CHECK(back.log_scales[i][c] ==
                  static_cast<double>(static_cast<float>(cloud.log_scales[i][c])));
        }
        for (int c = 0; c < 4; ++c) {
            CHECK(back.rotations[i][c] ==
                  static_cast<double>(static_cast<float>(cloud.rotations[i][c])));
        }
        CHECK(back.opacity_logits[i] ==
              static_cast<double>(static_cast<float>(cloud.opacity_logits[i])));
        for (int k = 0; k < cloud.basis_count() * 3; ++k) {
            CHECK(back.sh_at(i)[k] == static_cast<double>(static_cast<float>(cloud.sh_at(i)[k])));
        }
    }

    SECTION("header carries exactly the 62-property 3DGS layout") {
        const std::string bytes = read_file(path);
        const std::size_t header_end = bytes.find("end_header\n");
        REQUIRE(header_end != std::string::npos);
        const std::string header = bytes.substr(0, header_end);
        std::size_t props = 0, pos = 0;
        while ((pos = header.find("property float ", pos)) != std::string::npos) {
            ++props;
            pos += 1;
        }
        CHECK(props == 62);
        CHECK(header.find("property float f_rest_44") != std::string::npos);
        CHECK(header.find("property float rot_3") != std::string::npos);
        // Payload: 62 float32 per vertex after the header.
        CHECK(bytes.size() == header_end + std::string("end_header\n").size() + 20 * 62 * 4);
    }
}

TEST_CASE("ply handles low degrees and rejects malformed files") {
    const fs::path dir = fresh_dir("gsprune_test_ply_err");

    SECTION("degree-1 clouds zero-pad the missing bands") {
        const GaussianCloud cloud = random_cloud(621, 5, 1);
        const std::string path = (dir / "deg1.ply").string();
        save_ply(cloud, path);
        const GaussianCloud back = load_ply(path);
        CHECK(back.sh_degree == 3);
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            for (int b = 0; b < cloud.basis_count(); ++b) {
                for (int c = 0; c < 3; ++c) {
                    CHECK(back.sh_at(i)[b * 3 + c] ==
                          static_cast<double>(static_cast<float>(cloud.sh_at(i)[b * 3 + c])));
                }
            }
            for (int b = cloud.basis_count(); b < 16; ++b) {
                for (int c = 0; c < 3; ++c) {
                    CHECK(back.sh_at(i)[b * 3 + c] == 0.0);
                }
            }
        }
    }
    SECTION("truncation fails without a partial cloud") {
        const GaussianCloud cloud = random_cloud(622, 8, 0);
        const std::string path = (dir / "trunc.ply").string();
        save_ply(cloud, path);
        const std::string bytes = read_file(path);
        write_file(dir / "cut.ply", bytes.substr(0, bytes.size() - 10));
        CHECK_THROWS_WITH(load_ply((dir / "cut.ply").string()),
                          Catch::Matchers::ContainsSubstring("truncated vertex data"));
    }
    SECTION("malformed headers are rejected with context") {
        write_file(dir / "notply.ply", "plyx\nformat binary_little_endian 1.0\n");
        CHECK_THROWS_WITH(load_ply((dir / "notply.ply").string()),
                          Catch::Matchers::ContainsSubstring("missing magic"));
        write_file(dir / "ascii.ply", "ply\nformat ascii 1.0\nend_header\n");
        CHECK_THROWS_WITH(load_ply((dir / "ascii.ply").string()),
                          Catch::Matchers::ContainsSubstring("unsupported format"));
        write_file(dir / "props.ply",
                   "ply\nformat binary_little_endian 1.0\nelement vertex 1\n"
                   "property float x\nend_header\n");
        CHECK_THROWS_WITH(load_ply((dir / "props.ply").string()),
                          Catch::Matchers::ContainsSubstring("property set"));
        write_file(dir / "double.ply",
                   "ply\nformat binary_little_endian 1.0\nelement vertex 1\n"
                   "property double x\nend_header\n");
        CHECK_THROWS_WITH(load_ply((dir / "double.ply").string()),
                          Catch::Matchers::ContainsSubstring("expected float properties"));
        write_file(dir / "noheader.ply", "ply\nformat binary_little_endian 1.0\n");
        CHECK_THROWS_WITH(load_ply((dir / "noheader.ply").string()),
                          Catch::Matchers::ContainsSubstring("unexpected end of header"));
    }
}

TEST_CASE("checkpoints resume bit-exactly") {
    const fs::path dir = fresh_dir("gsprune_test_ckpt");
    const GaussianCloud target = random_cloud(630, 12, 0);
    std::vector<TrainingView> views;
    for (int k = 0; k < 4; ++k) {
        const double az = 0.4 + k * M_PI / 2.0;
        const Camera cam = gsprune::look_at_camera(
            Vec3(3.0 * std::cos(az), 3.0 * std::sin(az), 1.2), Vec3::Zero(), 20.0, 16, 16);
        views.push_back(TrainingView{cam, render_image(target, cam)});
    }
    const GaussianCloud init = random_cloud(631, 10, 0);

    TrainConfig cfg;
    cfg.seed = 13;
    cfg.total_iters = 24;
    cfg.mask_window_begin = 14;
    cfg.mask_window_end = 20;
    cfg.score_update_every = 3;
    cfg.score_subsample = 2;
    cfg.densify_interval = 4;
    cfg.densify_until = 8;
    cfg.opacity_reset_every = 0;
    cfg.lambda_ssim = 0.0;
    cfg.lr.mask = 0.05;

    Trainer reference(init, views, {}, cfg);
    reference.run_until(cfg.total_iters);

    for (std::size_t snap_at : {std::size_t{6}, std::size_t{16}}) {
        Trainer runner(init, views, {}, cfg);
        runner.run_until(snap_at);
        const std::string path = (dir / ("snap" + std::to_string(snap_at) + ".bin")).string();
        save_checkpoint(runner.checkpoint(), path);
        const Checkpoint loaded = load_checkpoint(path);
        CHECK(loaded.iteration == snap_at);

        Trainer resumed(loaded, views, {});
        resumed.run_until(cfg.total_iters);
        REQUIRE(resumed.history().size() == cfg.total_iters - snap_at);
        // Rows from the snapshot onward must match the uninterrupted run.
        const std::vector<HistoryRow> tail(reference.history().begin() + snap_at,
                                           reference.history().end());
        CHECK(format_history_csv(resumed.history()) == format_history_csv(tail));
        REQUIRE(resumed.cloud().size() == reference.cloud().size());
        CHECK(resumed.cloud().positions == reference.cloud().positions);
        CHECK(resumed.cloud().opacity_logits == reference.cloud().opacity_logits);
        CHECK(resumed.learned_ratio() == reference.learned_ratio());
    }

    SECTION("round trip preserves every field exactly") {
        Trainer runner(init, views, {}, cfg);
        runner.run_until(16);
        const Checkpoint ck = runner.checkpoint();
        const std::string path = (dir / "exact.bin").string();
        save_checkpoint(ck, path);
        const Checkpoint back = load_checkpoint(path);
        CHECK(back.cloud.positions == ck.cloud.positions);
        CHECK(back.cloud.sh_coeffs == ck.cloud.sh_coeffs);
        CHECK(back.cloud.mask_params == ck.cloud.mask_params);
        CHECK(back.cloud.scores == ck.cloud.scores);
        CHECK(back.adam.positions.m1 == ck.adam.positions.m1);
        CHECK(back.adam.mask.m2 == ck.adam.mask.m2);
        CHECK(back.adam.opacities.steps == ck.adam.opacities.steps);
        CHECK(back.mask.active == ck.mask.active);
        CHECK(back.mask.rng.seed == ck.mask.rng.seed);
        CHECK(back.score_rr == ck.score_rr);
        CHECK(back.grad_accum == ck.grad_accum);
        CHECK(back.grad_count == ck.grad_count);
        CHECK(serialize_config(back.config) == serialize_config(ck.config));
    }
    SECTION("corrupt files are rejected") {
        Trainer runner(init, views, {}, cfg);
        runner.run_until(4);
        const std::string path = (dir / "corrupt.bin").string();
        save_checkpoint(runner.checkpoint(), path);
        std::string bytes = read_file(path);

        std::string bad_magic = bytes;
        bad_magic[0] = 'X';
        write_file(dir / "badmagic.bin", bad_magic);
        CHECK_THROWS_WITH(load_checkpoint((dir / "badmagic.bin").string()),
                          Catch::Matchers::ContainsSubstring("bad magic"));

        std::string bad_version = bytes;
        bad_version[8] = 99;  // little-endian low byte of the version word
        write_file(dir / "badversion.bin", bad_version);
        CHECK_THROWS_WITH(load_checkpoint((dir / "badversion.bin").string()),
                          Catch::Matchers::ContainsSubstring("unsupported version"));

        write_file(dir / "short.bin", bytes.substr(0, bytes.size() / 2));
        CHECK_THROWS_WITH(load_checkpoint((dir / "short.bin").string()),
                          Catch::Matchers::ContainsSubstring("truncated"));
    }
}

TEST_CASE("raw and png image files") {
    const fs::path dir = fresh_dir("gsprune_test_img");
    const Image img = random_image(640, 9, 7, -0.2, 1.3);

    SECTION("raw floats round trip exactly") {
        const std::string path = (dir / "img.raw").string();
        write_raw(path, img);
        const Image back = read_raw(path);
        CHECK(back.height == 9);
        CHECK(back.width == 7);
        CHECK(back.data == img.data);
        CHECK_THROWS_WITH(read_raw((dir / "missing.raw").string()),
                          Catch::Matchers::ContainsSubstring("cannot open"));
        write_file(dir / "badmagic.raw", "XXXXXXXXXXXXXXXX");
        CHECK_THROWS_WITH(read_raw((dir / "badmagic.raw").string()),
                          Catch::Matchers::ContainsSubstring("bad magic"));
    }
    SECTION("png files carry the signature") {
        const std::string path = (dir / "img.png").string();
        write_png(path, img);
        const std::string bytes = read_file(path);
        REQUIRE(bytes.size() > 8);
        const unsigned char sig[8] = {137, 'P', 'N', 'G', 13, 10, 26, 10};
        for (int i = 0; i < 8; ++i) {
            CHECK(static_cast<unsigned char>(bytes[static_cast<std::size_t>(i)]) == sig[i]);
        }
    }
}

TEST_CASE("dataset directories round trip") {
    const fs::path dir = fresh_dir("gsprune_test_dataset");
    const GaussianCloud scene = random_cloud(650, 10, 0);
    const std::vector<Camera> cams = orbit_cameras(Vec3::Zero(), 3.0, 8, 16, 16, 55.0);
    const Dataset ds = render_dataset(scene, cams, 4);
    REQUIRE(ds.train.size() == 6);
    REQUIRE(ds.test.size() == 2);

    save_dataset(dir.string(), ds);
    CHECK(fs::exists(dir / "cameras.csv"));
    CHECK(fs::exists(dir / "train" / "0000.png"));
    CHECK(fs::exists(dir / "train" / "0005.raw"));
    CHECK(fs::exists(dir / "test" / "0001.raw"));
    CHECK(fs::exists(dir / "gt.ply"));

    const Dataset back = load_dataset(dir.string());
    REQUIRE(back.train.size() == 6);
    REQUIRE(back.test.size() == 2);
    REQUIRE(back.gt.has_value());
    for (std::size_t i = 0; i < ds.train.size(); ++i) {
        CHECK(back.train[i].image.data == ds.train[i].image.data);
        CHECK(back.train[i].camera.fx == ds.train[i].camera.fx);
        CHECK((back.train[i].camera.world_to_camera - ds.train[i].camera.world_to_camera)
                  .cwiseAbs()
                  .maxCoeff() == 0.0);
    }
    CHECK(back.test[0].image.data == ds.test[0].image.data);
    CHECK(back.gt->size() == scene.size());

    SECTION("missing csv is reported") {
        CHECK_THROWS_WITH(load_dataset((dir / "nope").string()),
                          Catch::Matchers::ContainsSubstring("cannot open cameras.csv"));
    }
}
