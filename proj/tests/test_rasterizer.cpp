#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "c3v/errors.hpp"
#include "c3v/image_io.hpp"
#include "c3v/rasterizer.hpp"
#include "support/test_util.hpp"

using namespace c3v;

namespace {

Splat2D make_splat(double mx, double my, double depth, Eigen::Vector3d color,
                   double opacity, double var = 1.0) {
  Splat2D s;
  s.mean_px = {mx, my};
  s.cov2d = var * Eigen::Matrix2d::Identity();
  s.depth = depth;
  s.color = std::move(color);
  s.base_opacity = opacity;
  s.finalize();
  return s;
}

GaussianCloud random_scene(Rng& rng, const Camera& cam, int count) {
  GaussianCloud cloud;
  for (int i = 0; i < count; ++i) {
    const double z = rng.uniform(1.0, 8.0);
    const double px = rng.uniform(-20.0, cam.width + 20.0);
    const double py = rng.uniform(-20.0, cam.height + 20.0);
    Gaussian3D g = test::random_gaussian(rng);
    // Place in front of an identity-extrinsics camera near pixel (px, py).
    g.position = Eigen::Vector3d((px - cam.cx) / cam.fx * z, (py - cam.cy) / cam.fy * z, z);
    g.log_scale = Eigen::Vector3d(rng.uniform(-4.0, -1.0), rng.uniform(-4.0, -1.0),
                                  rng.uniform(-4.0, -1.0));
    cloud.gaussians.push_back(g);
  }
  return cloud;
}

double max_channel_diff(const Framebuffer& a, const Framebuffer& b) {
  double m = 0;
  for (size_t i = 0; i < a.rgb.size(); ++i) m = std::max(m, std::abs(a.rgb[i] - b.rgb[i]));
  return m;
}

}  // namespace

TEST_CASE("on-axis isotropic projection matches the analytic footprint") {
  const double f = 200.0, d = 4.0, sigma_w = 0.05;
  Camera cam = test::simple_camera(256, 256, f);
  Gaussian3D g;
  g.position = {0, 0, d};
  g.log_scale = Eigen::Vector3d::Constant(std::log(sigma_w));

  const auto splat = project_gaussian(cam, g);
  REQUIRE(splat.has_value());
  const double expected = f * sigma_w / d;
  CHECK(splat->cov2d(0, 0) == doctest::Approx(expected * expected + 0.3).epsilon(1e-9));
  CHECK(splat->cov2d(1, 1) == doctest::Approx(expected * expected + 0.3).epsilon(1e-9));
  CHECK(std::abs(splat->cov2d(0, 1)) < 1e-9);

  // Matrix oracle: J W Sigma Wt Jt evaluated with explicit matrices.
  Eigen::Matrix<double, 2, 3> jac;
  jac << f / d, 0, 0, 0, f / d, 0;
  const Eigen::Matrix2d oracle =
      jac * cam.world_to_cam_rotation * covariance_of(g) *
          cam.world_to_cam_rotation.transpose() * jac.transpose() +
      0.3 * Eigen::Matrix2d::Identity();
  CHECK(test::max_abs_diff(splat->cov2d, oracle) < 1e-9);
}

TEST_CASE("gaussians behind the near plane are culled") {
  const Camera cam = test::simple_camera();
  Gaussian3D g;
  g.position = {0, 0, -2.0};
  CHECK_FALSE(project_gaussian(cam, g).has_value());
}

TEST_CASE("splats whose footprint misses the image are culled") {
  const Camera cam = test::simple_camera();
  Gaussian3D g;
  g.position = {100.0, 0, 1.0};  // projects far outside a 256px image
  g.log_scale = Eigen::Vector3d::Constant(std::log(0.01));
  CHECK_FALSE(project_gaussian(cam, g).has_value());
}

TEST_CASE("doubling the depth halves the projected std-dev") {
  RasterizeSettings no_floor;
  no_floor.low_pass_px2 = 0.0;
  const Camera cam = test::simple_camera(256, 256, 150.0);
  Gaussian3D g;
  g.log_scale = Eigen::Vector3d::Constant(std::log(0.02));

  g.position = {0, 0, 2.0};
  const auto near = project_gaussian(cam, g, no_floor);
  g.position = {0, 0, 4.0};
  const auto far = project_gaussian(cam, g, no_floor);
  REQUIRE(near.has_value());
  REQUIRE(far.has_value());
  const double ratio = std::sqrt(near->cov2d(0, 0)) / std::sqrt(far->cov2d(0, 0));
  CHECK(ratio == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("empty scene renders the background") {
  const Camera cam = test::simple_camera(64, 64);
  const Eigen::Vector3d bg(0.25, 0.5, 0.75);
  const Framebuffer fb = rasterize(cam, {}, bg);
  for (int i = 0; i < 64 * 64; ++i) {
    CHECK(fb.rgb[i * 3 + 0] == bg.x());
    CHECK(fb.rgb[i * 3 + 1] == bg.y());
    CHECK(fb.rgb[i * 3 + 2] == bg.z());
    CHECK(fb.alpha[i] == 0.0);
  }
}

TEST_CASE("single saturated splat paints its pixel with its color") {
  // Analytic compositing case: sigma-hat 1 exactly at the pixel center, so
  // the clamp is lifted for this fixture.
  RasterizeSettings settings;
  settings.max_sigma_hat = 1.0;
  const std::vector<Splat2D> splats = {make_splat(8.5, 8.5, 2.0, {1, 0, 0}, 1.0)};
  const Framebuffer tiled = rasterize_splats(16, 16, splats, {0, 0, 0}, settings);
  const Framebuffer reference =
      rasterize_splats_reference(16, 16, splats, {0, 0, 0}, settings);
  for (const Framebuffer* fb : {&tiled, &reference}) {
    const double* px = fb->pixel(8, 8);
    CHECK(px[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(px[1] == 0.0);
    CHECK(px[2] == 0.0);
  }
  CHECK(tiled.rgb == reference.rgb);  // early termination never fires here
}

TEST_CASE("two coincident splats composite front-to-back") {
  // c = c1*s1 + c2*s2*(1 - s1) with s1 = 0.5 (front), s2 = 1 (back).
  RasterizeSettings settings;
  settings.max_sigma_hat = 1.0;
  std::vector<Splat2D> splats = {make_splat(8.5, 8.5, 1.0, {1, 0, 0}, 0.5),
                                 make_splat(8.5, 8.5, 2.0, {0, 1, 0}, 1.0)};
  splats[1].ordinal = 1;
  const Framebuffer tiled = rasterize_splats(16, 16, splats, {0, 0, 0}, settings);
  const Framebuffer reference =
      rasterize_splats_reference(16, 16, splats, {0, 0, 0}, settings);
  for (const Framebuffer* fb : {&tiled, &reference}) {
    const double* px = fb->pixel(8, 8);
    CHECK(px[0] == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(px[1] == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(px[2] == 0.0);
    CHECK(fb->alpha[8 * 16 + 8] == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("tiled rasterizer agrees with the brute-force reference") {
  Rng rng(29);
  for (int scene = 0; scene < 8; ++scene) {
    Camera cam = test::random_camera(rng, 128, 128);
    cam.world_to_cam_rotation = Eigen::Matrix3d::Identity();
    cam.world_to_cam_translation = Eigen::Vector3d::Zero();
    const GaussianCloud cloud = random_scene(rng, cam, 200);
    const SceneItem item{&cloud, RigidTransform::identity()};
    const Eigen::Vector3d bg(0.1, 0.1, 0.2);

    const Framebuffer tiled = rasterize(cam, {&item, 1}, bg);
    const Framebuffer reference = rasterize_reference(cam, {&item, 1}, bg);
    CHECK(max_channel_diff(tiled, reference) <= 1e-4);
  }
}

TEST_CASE("rasterize output is independent of gaussian input order") {
  Rng rng(31);
  const Camera cam = test::simple_camera(96, 96, 120.0);
  GaussianCloud cloud = random_scene(rng, cam, 60);
  // Distinct depths so the depth sort fully determines the composite order.
  for (size_t i = 0; i < cloud.size(); ++i) {
    cloud.gaussians[i].position.z() = 1.0 + 0.05 * static_cast<double>(i);
  }
  const SceneItem item{&cloud, RigidTransform::identity()};
  const Framebuffer before = rasterize(cam, {&item, 1}, {0, 0, 0});

  GaussianCloud shuffled = cloud;
  for (size_t i = shuffled.size(); i > 1; --i) {
    std::swap(shuffled.gaussians[i - 1], shuffled.gaussians[rng.next_index(i)]);
  }
  const SceneItem item2{&shuffled, RigidTransform::identity()};
  const Framebuffer after = rasterize(cam, {&item2, 1}, {0, 0, 0});
  CHECK(before.rgb == after.rgb);
  CHECK(before.alpha == after.alpha);
}

TEST_CASE("rendering is deterministic across runs and thread counts") {
  Rng rng(37);
  const Camera cam = test::simple_camera(128, 128);
  const GaussianCloud cloud = random_scene(rng, cam, 150);
  const SceneItem item{&cloud, RigidTransform::identity()};

  RasterizeSettings one_thread;
  one_thread.thread_count = 1;
  RasterizeSettings four_threads;
  four_threads.thread_count = 4;

  const Framebuffer a = rasterize(cam, {&item, 1}, {0, 0, 0}, one_thread);
  const Framebuffer b = rasterize(cam, {&item, 1}, {0, 0, 0}, four_threads);
  const Framebuffer c = rasterize(cam, {&item, 1}, {0, 0, 0}, four_threads);
  CHECK(a.rgb == b.rgb);
  CHECK(b.rgb == c.rgb);
}

TEST_CASE("accumulated alpha stays within [0, 1]") {
  Rng rng(41);
  const Camera cam = test::simple_camera(64, 64);
  const GaussianCloud cloud = random_scene(rng, cam, 300);
  const SceneItem item{&cloud, RigidTransform::identity()};
  const Framebuffer fb = rasterize(cam, {&item, 1}, {0, 0, 0});
  for (double a : fb.alpha) {
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
  }
}

TEST_CASE("zero-area framebuffer is an invalid configuration") {
  Camera cam = test::simple_camera();
  cam.width = 0;
  CHECK_THROWS_AS(rasterize(cam, {}, {0, 0, 0}), Error);
}

TEST_CASE("depth of a single opaque splat is its camera depth") {
  RasterizeSettings settings;
  settings.max_sigma_hat = 1.0;
  const std::vector<Splat2D> splats = {make_splat(8.5, 8.5, 7.0, {1, 1, 1}, 1.0)};
  const DepthMap dm = render_depth_splats(16, 16, splats, settings);
  CHECK(dm.is_valid(8, 8));
  CHECK(dm.at(8, 8) == doctest::Approx(7.0).epsilon(1e-12));
}

TEST_CASE("empty scene yields an all-invalid depth map") {
  const Camera cam = test::simple_camera(32, 32);
  const DepthMap dm = render_depth(cam, {});
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) CHECK_FALSE(dm.is_valid(x, y));
  }
}

TEST_CASE("depth is the alpha-weighted expectation over splats") {
  // Front (s = 0.5, z = 2) over back (s = 1, z = 4):
  // (2*0.5 + 4*1*(1-0.5)) / (0.5 + 0.5) = 3.
  RasterizeSettings settings;
  settings.max_sigma_hat = 1.0;
  std::vector<Splat2D> splats = {make_splat(4.5, 4.5, 2.0, {1, 1, 1}, 0.5),
                                 make_splat(4.5, 4.5, 4.0, {1, 1, 1}, 1.0)};
  splats[1].ordinal = 1;
  const DepthMap dm = render_depth_splats(8, 8, splats, settings);
  REQUIRE(dm.is_valid(4, 4));
  CHECK(dm.at(4, 4) == doctest::Approx(3.0).epsilon(1e-9));
}

TEST_CASE("pixels with accumulated alpha below one half are invalid") {
  const std::vector<Splat2D> splats = {make_splat(4.5, 4.5, 2.0, {1, 1, 1}, 0.4)};
  const DepthMap dm = render_depth_splats(8, 8, splats);
  CHECK_FALSE(dm.is_valid(4, 4));
}

TEST_CASE("png encoding is deterministic and well-formed") {
  Rng rng(43);
  const Camera cam = test::simple_camera(48, 48);
  const GaussianCloud cloud = random_scene(rng, cam, 40);
  const SceneItem item{&cloud, RigidTransform::identity()};
  const Framebuffer fb = rasterize(cam, {&item, 1}, {0.2, 0.1, 0.4});

  const auto png1 = encode_png_rgb8(fb.width, fb.height, to_srgb8(fb));
  const auto png2 = encode_png_rgb8(fb.width, fb.height, to_srgb8(fb));
  CHECK(png1 == png2);
  REQUIRE(png1.size() > 8);
  const uint8_t signature[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  CHECK(std::equal(signature, signature + 8, png1.begin()));
  const std::string tail(png1.end() - 8, png1.end());
  CHECK(tail.find("IEND") != std::string::npos);
}

TEST_CASE("raw framebuffer dump round-trips at float precision") {
  Rng rng(47);
  Framebuffer fb(13, 7);
  for (auto& v : fb.rgb) v = rng.next_double();
  for (auto& v : fb.alpha) v = rng.next_double();

  const auto path = std::filesystem::temp_directory_path() / "c3v_fb_roundtrip.raw";
  write_framebuffer_raw(path, fb);
  const Framebuffer back = read_framebuffer_raw(path);
  REQUIRE(back.width == fb.width);
  REQUIRE(back.height == fb.height);
  for (size_t i = 0; i < fb.rgb.size(); ++i) {
    CHECK(back.rgb[i] == static_cast<double>(static_cast<float>(fb.rgb[i])));
  }
  for (size_t i = 0; i < fb.alpha.size(); ++i) {
    CHECK(back.alpha[i] == static_cast<double>(static_cast<float>(fb.alpha[i])));
  }
  std::filesystem::remove(path);
}

TEST_CASE("depth pfm round-trips values and validity") {
  DepthMap dm(9, 5);
  dm.set(0, 0, 1.25);
  dm.set(8, 4, 42.0);
  dm.set(3, 2, 0.5);

  const auto path = std::filesystem::temp_directory_path() / "c3v_depth_roundtrip.pfm";
  write_depth_pfm(path, dm);
  const DepthMap back = read_depth_pfm(path);
  REQUIRE(back.width == 9);
  REQUIRE(back.height == 5);
  CHECK(back.at(0, 0) == doctest::Approx(1.25));
  CHECK(back.at(8, 4) == doctest::Approx(42.0));
  CHECK(back.at(3, 2) == doctest::Approx(0.5));
  CHECK(back.is_valid(0, 0));
  CHECK_FALSE(back.is_valid(1, 0));
  CHECK_FALSE(back.is_valid(4, 4));
  std::filesystem::remove(path);
}
