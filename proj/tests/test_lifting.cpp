#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "c3v/errors.hpp"
#include "c3v/lifting.hpp"
#include "support/test_util.hpp"

using namespace c3v;

namespace {

// Dense ground sheet of flat gaussians on the plane y = plane_y. Soft
// opacities keep the alpha-weighted depth symmetric around each pixel ray.
GaussianCloud ground_plane_cloud(double plane_y, double x_min, double x_max,
                                 double z_min, double z_max, double spacing,
                                 double opacity_logit = -1.8) {
  GaussianCloud cloud;
  cloud.label = "ground";
  for (double x = x_min; x <= x_max; x += spacing) {
    for (double z = z_min; z <= z_max; z += spacing) {
      Gaussian3D g;
      g.position = {x, plane_y, z};
      g.log_scale = {std::log(spacing * 0.8), std::log(spacing * 0.05),
                     std::log(spacing * 0.8)};
      g.opacity_logit = opacity_logit;
      g.color = {0.4, 0.5, 0.3};
      cloud.gaussians.push_back(g);
    }
  }
  return cloud;
}

}  // namespace

TEST_CASE("up axis vectors and names round-trip") {
  for (UpAxis axis : {UpAxis::pos_x, UpAxis::neg_x, UpAxis::pos_y, UpAxis::neg_y,
                      UpAxis::pos_z, UpAxis::neg_z}) {
    CHECK(up_axis_from_name(up_axis_name(axis)) == axis);
    CHECK(up_vector(axis).norm() == doctest::Approx(1.0));
  }
  CHECK((up_vector(UpAxis::neg_y) - Eigen::Vector3d(0, -1, 0)).norm() == 0.0);
  CHECK_THROWS_AS(up_axis_from_name("sideways"), Error);
}

TEST_CASE("anchor is the center of the box's lower boundary") {
  const BBox2D bbox{128.0, 64.0};
  const Eigen::Vector2d p(100, 400);
  CHECK((anchor_pixel(p, bbox) - Eigen::Vector2d(132, 400)).norm() == 0.0);

  LiftOptions literal;
  literal.literal_anchor_offset = true;
  CHECK((anchor_pixel(p, bbox, literal) - Eigen::Vector2d(164, 400)).norm() == 0.0);
}

TEST_CASE("lift_point unprojects the anchor and shifts half the height up") {
  Camera cam = test::simple_camera(256, 256, 100.0);
  cam.cx = cam.cy = 128.0;

  DepthMap depth(256, 256);
  depth.set(128, 128, 10.0);

  // bbox width 64 puts the anchor of (96, 128) at pixel (128, 128).
  const BBox2D bbox{128.0, 64.0};
  DepthSource source = DepthSource::external;
  const Eigen::Vector3d lifted = lift_point(cam, {96.0, 128.0}, depth, bbox,
                                            /*h3d=*/2.0, UpAxis::neg_y, {}, &source);
  // The anchor ray passes through the principal point: unprojects to
  // (0, 0, 10); the half-height shift moves the center one unit toward -y.
  CHECK(lifted.x() == doctest::Approx(0.0));
  CHECK(lifted.y() == doctest::Approx(-1.0));
  CHECK(lifted.z() == doctest::Approx(10.0));
  CHECK(source == DepthSource::exact);
}

TEST_CASE("lift_point at the exact principal point matches the worked example") {
  Camera cam = test::simple_camera(256, 256, 100.0);
  cam.cx = cam.cy = 128.0;
  DepthMap depth(256, 256);
  // Anchor lands on the continuous coordinate (128, 128); the containing
  // pixel is (128, 128) whose stored depth stands for the scene there.
  depth.set(128, 128, 10.0);
  const BBox2D bbox{128.0, 0.0};
  const Eigen::Vector3d lifted =
      lift_point(cam, {128.0, 128.0}, depth, bbox, 2.0, UpAxis::neg_y);
  CHECK((lifted - Eigen::Vector3d(0, -1, 10)).norm() < 1e-12);
}

TEST_CASE("project, sample exact depth, lift recovers the world point") {
  Rng rng(53);
  for (int i = 0; i < 100; ++i) {
    const Camera cam = test::random_camera(rng);
    const double px = rng.uniform(1, cam.width - 1);
    const double py = rng.uniform(1, cam.height - 1);
    const double d = rng.uniform(0.5, 30.0);
    const Eigen::Vector3d world = test::point_at_pixel(cam, px, py, d);

    const auto proj = project_point(cam, world);
    DepthMap depth(cam.width, cam.height);
    depth.set(static_cast<int>(std::floor(proj.pixel.x())),
              static_cast<int>(std::floor(proj.pixel.y())), proj.depth);

    const Eigen::Vector3d lifted =
        lift_point(cam, proj.pixel, depth, BBox2D{1.0, 0.0}, 0.0, UpAxis::neg_y);
    CHECK((lifted - world).norm() < 1e-4);
  }
}

TEST_CASE("invalid anchor depth falls back to the 5x5 neighborhood") {
  Camera cam = test::simple_camera(64, 64, 100.0);
  DepthMap depth(64, 64);
  depth.set(34, 32, 5.0);  // two columns right of the anchor pixel

  DepthSource source = DepthSource::exact;
  const Eigen::Vector3d lifted = lift_point(cam, {32.2, 32.7}, depth, BBox2D{4.0, 0.0},
                                            0.0, UpAxis::neg_y, {}, &source);
  CHECK(source == DepthSource::neighborhood);
  CHECK(lifted.z() == doctest::Approx(5.0));
}

TEST_CASE("no valid depth in the whole 5x5 window is a depth-missing error") {
  const Camera cam = test::simple_camera(64, 64);
  DepthMap depth(64, 64);
  depth.set(40, 32, 5.0);  // outside the 5x5 window around (32, 32)
  CHECK_THROWS_AS(
      lift_point(cam, {32.0, 32.0}, depth, BBox2D{4.0, 0.0}, 0.0, UpAxis::neg_y),
      Error);
}

TEST_CASE("external depth maps apply the scale alignment factor") {
  const Camera cam = test::simple_camera(64, 64);
  DepthMap depth(64, 64);
  depth.set(32, 32, 2.0);  // relative units
  LiftOptions opts;
  opts.external_depth = true;
  opts.external_depth_scale = 3.0;
  DepthSource source = DepthSource::exact;
  const Eigen::Vector3d lifted = lift_point(cam, {32.5, 32.5}, depth, BBox2D{1.0, 0.0},
                                            0.0, UpAxis::neg_y, opts, &source);
  CHECK(lifted.z() == doctest::Approx(6.0));
  CHECK(source == DepthSource::external);
}

TEST_CASE("trajectory lifted over a rendered ground plane stays on the plane") {
  const double plane_y = 1.0;
  // Steep view over the ground so the depth image is well conditioned.
  const Camera cam = make_look_at_camera(400, 400, 192, 192, {0, -5.0, -0.45},
                                         {0, plane_y, 0.45}, {0, -1, 0});

  // Anchor pixels at exact pixel centers; bbox width 1 shifts x by 0.5.
  const Eigen::Vector2d anchors[4] = {{76.5, 86.5}, {96.5, 96.5}, {116.5, 106.5},
                                      {126.5, 126.5}};
  Trajectory2D traj;
  traj.bbox = BBox2D{20.0, 1.0};
  for (const auto& a : anchors) traj.points.push_back({a.x() - 0.5, a.y()});

  // Analytic plane-intersection oracle for each anchor ray.
  const Eigen::Vector3d center = cam.center();
  Eigen::Vector3d expected[4];
  double min_x = 1e9, max_x = -1e9, min_z = 1e9, max_z = -1e9;
  for (int i = 0; i < 4; ++i) {
    const Eigen::Vector3d dir_cam((anchors[i].x() - cam.cx) / cam.fx,
                                  (anchors[i].y() - cam.cy) / cam.fy, 1.0);
    const Eigen::Vector3d dir = cam.world_to_cam_rotation.transpose() * dir_cam;
    const double s = (plane_y - center.y()) / dir.y();
    expected[i] = center + s * dir;
    min_x = std::min(min_x, expected[i].x());
    max_x = std::max(max_x, expected[i].x());
    min_z = std::min(min_z, expected[i].z());
    max_z = std::max(max_z, expected[i].z());
  }

  const GaussianCloud ground = ground_plane_cloud(plane_y, min_x - 0.75, max_x + 0.75,
                                                  min_z - 0.75, max_z + 0.75, 0.02);
  const SceneItem item{&ground, RigidTransform::identity()};
  const DepthMap depth = render_depth(cam, {&item, 1});

  const Trajectory3D lifted =
      lift_trajectory(cam, traj, depth, /*h3d=*/0.0, UpAxis::neg_y);
  REQUIRE(lifted.points.size() == 4);
  for (int i = 0; i < 4; ++i) {
    CHECK(std::abs(lifted.points[i].y() - plane_y) < 1e-3);
    CHECK((lifted.points[i] - expected[i]).norm() < 1e-3);
  }
  for (auto s : lifted.depth_sources) CHECK(s == DepthSource::exact);
}

TEST_CASE("two-point trajectory lifts to two points") {
  const Camera cam = test::simple_camera(64, 64);
  DepthMap depth(64, 64);
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) depth.set(x, y, 4.0);
  }
  Trajectory2D traj;
  traj.bbox = BBox2D{4.0, 2.0};
  traj.points = {{10, 20}, {40, 50}};
  const Trajectory3D lifted = lift_trajectory(cam, traj, depth, 1.0, UpAxis::neg_y);
  CHECK(lifted.points.size() == 2);
}

TEST_CASE("a path point over empty sky names its index in the error") {
  const Camera cam = test::simple_camera(64, 64);
  DepthMap depth(64, 64);
  for (int y = 32; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) depth.set(x, y, 4.0);
  }
  Trajectory2D traj;
  traj.bbox = BBox2D{4.0, 0.0};
  traj.points = {{10, 40}, {20, 5}, {30, 48}};  // middle point in the empty half
  try {
    lift_trajectory(cam, traj, depth, 1.0, UpAxis::neg_y);
    FAIL("expected depth-missing");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::depth_missing);
    CHECK(std::string(e.what()).find("point 1") != std::string::npos);
  }
}

TEST_CASE("lifting is equivariant under a consistent camera rotation") {
  Rng rng(59);
  for (int i = 0; i < 50; ++i) {
    const Camera cam = test::random_camera(rng);
    const Eigen::Matrix3d world_rot = test::random_rotation(rng);

    Camera rotated = cam;
    rotated.world_to_cam_rotation = cam.world_to_cam_rotation * world_rot.transpose();

    DepthMap depth(cam.width, cam.height);
    const double d = rng.uniform(1.0, 10.0);
    depth.set(20, 30, d);

    const Eigen::Vector2d p(20.3, 30.6);
    const Eigen::Vector3d a =
        lift_point(cam, p, depth, BBox2D{1.0, 0.0}, 0.0, UpAxis::neg_y);
    const Eigen::Vector3d b =
        lift_point(rotated, p, depth, BBox2D{1.0, 0.0}, 0.0, UpAxis::neg_y);
    CHECK((b - world_rot * a).norm() < 1e-6);
  }
}

TEST_CASE("trajectory2d prepends and appends missing endpoints") {
  EndpointEstimate ends;
  ends.start_px = {10, 10};
  ends.end_px = {90, 90};
  const BBox2D bbox{8, 4};

  PathEstimate path;
  path.points = {{30, 30}, {60, 60}};
  const Trajectory2D built = make_trajectory2d(path, ends, bbox);
  REQUIRE(built.points.size() == 4);
  CHECK((built.points.front() - ends.start_px).norm() == 0.0);
  CHECK((built.points.back() - ends.end_px).norm() == 0.0);

  PathEstimate exact;
  exact.points = {{10, 10}, {50, 50}, {90, 90}};
  CHECK(make_trajectory2d(exact, ends, bbox).points.size() == 3);
}

TEST_CASE("catmull-rom resampling keeps collinear points collinear") {
  Trajectory3D traj;
  traj.points = {{0, 0, 0}, {1, 1, 0}, {2, 2, 0}, {3, 3, 0}};
  for (ResampleMode mode : {ResampleMode::constant_speed, ResampleMode::uniform_parameter}) {
    const ResampledPath out = resample_path(traj, 17, mode);
    REQUIRE(out.positions.size() == 17);
    const Eigen::Vector3d dir = Eigen::Vector3d(1, 1, 0).normalized();
    for (const auto& p : out.positions) {
      const Eigen::Vector3d residual = p - p.dot(dir) * dir;
      CHECK(residual.norm() < 1e-9);
      CHECK(std::abs(p.z()) < 1e-12);
    }
  }
}

TEST_CASE("two-point trajectory resamples to equally spaced samples") {
  Trajectory3D traj;
  traj.points = {{0, 0, 0}, {4, 0, 0}};
  const ResampledPath out = resample_path(traj, 5, ResampleMode::constant_speed);
  REQUIRE(out.positions.size() == 5);
  // Interior samples are exact up to the 256-entry arc-table interpolation.
  for (int i = 0; i < 5; ++i) {
    CHECK((out.positions[i] - Eigen::Vector3d(i, 0, 0)).norm() < 1e-4);
  }
  CHECK((out.positions.front() - traj.points.front()).norm() < 1e-9);
  CHECK((out.positions.back() - traj.points.back()).norm() < 1e-9);
}

TEST_CASE("constant-speed samples are uniform in arc length on a right angle") {
  Trajectory3D traj;
  traj.points = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}};
  const int frames = 9;
  const ResampledPath out = resample_path(traj, frames, ResampleMode::constant_speed);
  REQUIRE(out.positions.size() == frames);

  // Dense-sampling oracle: measure cumulative arc length along the actual
  // curve and read each sample's position on it.
  TimedPath path(traj.points);
  const int dense_n = 200001;
  std::vector<Eigen::Vector3d> dense(dense_n);
  std::vector<double> cum(dense_n, 0.0);
  for (int i = 0; i < dense_n; ++i) {
    dense[i] = path.position_param(static_cast<double>(i) / (dense_n - 1));
    if (i > 0) cum[i] = cum[i - 1] + (dense[i] - dense[i - 1]).norm();
  }
  const double total = cum.back();
  for (int k = 0; k < frames; ++k) {
    int best = 0;
    double best_d = std::numeric_limits<double>::max();
    for (int i = 0; i < dense_n; i += 1) {
      const double d2 = (dense[i] - out.positions[k]).squaredNorm();
      if (d2 < best_d) {
        best_d = d2;
        best = i;
      }
    }
    const double expected = total * k / (frames - 1);
    CHECK(std::abs(cum[best] - expected) <= 0.01 * total);
  }
}

TEST_CASE("resampled endpoints interpolate the trajectory endpoints") {
  Rng rng(61);
  Trajectory3D traj;
  for (int i = 0; i < 6; ++i) {
    traj.points.emplace_back(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3));
  }
  const ResampledPath out = resample_path(traj, 24, ResampleMode::constant_speed);
  CHECK((out.positions.front() - traj.points.front()).norm() < 1e-9);
  CHECK((out.positions.back() - traj.points.back()).norm() < 1e-9);
}

TEST_CASE("resample_path rejects frame counts below two") {
  Trajectory3D traj;
  traj.points = {{0, 0, 0}, {1, 0, 0}};
  CHECK_THROWS_AS(resample_path(traj, 1, ResampleMode::constant_speed), Error);
}

TEST_CASE("single-point path holds its position") {
  TimedPath path({{2, 3, 4}});
  CHECK((path.position(0.5) - Eigen::Vector3d(2, 3, 4)).norm() == 0.0);
  CHECK(path.total_length() == 0.0);
}

TEST_CASE("plan and lift files round-trip through json") {
  PlanFile plan;
  plan.object_id = "alien";
  plan.object_prompt = "an alien";
  plan.motion_prompt = "walking";
  plan.image_width = 512;
  plan.image_height = 512;
  plan.scale.bbox = {128, 64};
  plan.endpoints.start_px = {100, 400};
  plan.endpoints.end_px = {420, 380};
  plan.path = {{100, 400}, {210, 395}, {320, 388}, {420, 380}};
  plan.flags = {"scale: height clamped to image bounds"};
  plan.camera = test::simple_camera(512, 512, 400.0);
  plan.h3d = 1.7;

  const auto dir = std::filesystem::temp_directory_path() / "c3v_lift_test";
  std::filesystem::create_directories(dir);
  plan.save(dir / "plan.json");
  const PlanFile plan2 = PlanFile::load(dir / "plan.json");
  CHECK(plan2.object_id == plan.object_id);
  CHECK(plan2.scale.bbox.height_px == plan.scale.bbox.height_px);
  CHECK(plan2.path.size() == plan.path.size());
  CHECK(plan2.camera.fx == plan.camera.fx);
  CHECK(plan2.flags == plan.flags);

  LiftFile lift;
  lift.object_id = "alien";
  lift.up_axis = UpAxis::neg_y;
  lift.h3d = 1.7;
  lift.points = {{0, -1, 10}, {1, -1, 11}};
  lift.depth_sources = {DepthSource::exact, DepthSource::neighborhood};
  lift.plan_ref = "plan.json";
  lift.base_scale = 1.9;
  lift.reproj_error_px = 0.01;
  lift.save(dir / "lift.json");
  const LiftFile lift2 = LiftFile::load(dir / "lift.json");
  CHECK(lift2.points.size() == 2);
  CHECK(lift2.depth_sources[1] == DepthSource::neighborhood);
  CHECK(lift2.base_scale == doctest::Approx(1.9));
  std::filesystem::remove_all(dir);
}
