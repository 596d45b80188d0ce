#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "c3v/camera.hpp"
#include "c3v/errors.hpp"
#include "c3v/types.hpp"
#include "support/test_util.hpp"

using namespace c3v;
using test::max_abs_diff;

TEST_CASE("covariance of a unit isotropic gaussian is the identity") {
  Gaussian3D g;
  CHECK(max_abs_diff(covariance_of(g), Eigen::Matrix3d::Identity()) < 1e-15);
}

TEST_CASE("covariance of axis-aligned anisotropy is diag(exp(2s))") {
  Gaussian3D g;
  g.log_scale = Eigen::Vector3d(std::log(2.0), 0, 0);
  const Eigen::Matrix3d expected = Eigen::Vector3d(4, 1, 1).asDiagonal();
  CHECK(max_abs_diff(covariance_of(g), expected) < 1e-12);
}

TEST_CASE("covariance under rotation matches the explicit matrix product") {
  // Oracle: build R directly from an axis-angle and evaluate R diag Rt with
  // plain matrix arithmetic, independent of the quaternion path.
  const Eigen::Matrix3d r =
      Eigen::AngleAxisd(M_PI / 2.0, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  const Eigen::Matrix3d oracle =
      r * Eigen::Vector3d(4, 1, 1).asDiagonal() * r.transpose();

  Gaussian3D g;
  g.rotation = Eigen::Quaterniond(Eigen::AngleAxisd(M_PI / 2.0, Eigen::Vector3d::UnitZ()));
  g.log_scale = Eigen::Vector3d(std::log(2.0), 0, 0);

  CHECK(max_abs_diff(covariance_of(g), oracle) < 1e-12);
  // The 90-degree turn moves the elongated axis from x to y.
  CHECK(max_abs_diff(covariance_of(g), Eigen::Vector3d(1, 4, 1).asDiagonal().toDenseMatrix()) <
        1e-12);
}

TEST_CASE("covariance rejects non-finite gaussians") {
  Gaussian3D g;
  g.position.x() = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(covariance_of(g), Error);
}

TEST_CASE("covariance is invariant to quaternion sign flip") {
  Rng rng(7);
  for (int i = 0; i < 100; ++i) {
    Gaussian3D g = test::random_gaussian(rng);
    Gaussian3D flipped = g;
    flipped.rotation.coeffs() = -flipped.rotation.coeffs();
    CHECK(max_abs_diff(covariance_of(g), covariance_of(flipped)) < 1e-12);
  }
}

TEST_CASE("covariance output is symmetric positive-definite") {
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    const Eigen::Matrix3d sigma = covariance_of(test::random_gaussian(rng));
    CHECK(max_abs_diff(sigma, sigma.transpose()) < 1e-12);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(sigma);
    CHECK(eig.eigenvalues().minCoeff() > 0.0);
  }
}

TEST_CASE("identity transform leaves a cloud unchanged bitwise") {
  GaussianCloud cloud;
  cloud.label = "test";
  Gaussian3D a;
  a.position = {0.25, -1.5, 3.0};
  a.log_scale = {-1.0, 0.5, 0.0};
  a.rotation = Eigen::Quaterniond(0.5, 0.5, 0.5, 0.5);  // exactly unit norm
  a.opacity_logit = 0.75;
  a.color = {0.1, 0.2, 0.3};
  Gaussian3D b = a;
  b.rotation = Eigen::Quaterniond(0, 1, 0, 0);
  cloud.gaussians = {a, b};

  const GaussianCloud out = apply_transform(cloud, RigidTransform::identity());
  REQUIRE(out.size() == cloud.size());
  for (size_t i = 0; i < cloud.size(); ++i) {
    CHECK(out.gaussians[i].position == cloud.gaussians[i].position);
    CHECK(out.gaussians[i].log_scale == cloud.gaussians[i].log_scale);
    CHECK(out.gaussians[i].rotation.coeffs() == cloud.gaussians[i].rotation.coeffs());
    CHECK(out.gaussians[i].opacity_logit == cloud.gaussians[i].opacity_logit);
    CHECK(out.gaussians[i].color == cloud.gaussians[i].color);
  }
}

TEST_CASE("pure translation shifts positions and preserves distances") {
  Rng rng(3);
  GaussianCloud cloud;
  for (int i = 0; i < 8; ++i) cloud.gaussians.push_back(test::random_gaussian(rng));

  RigidTransform t;
  t.translation = {1, 2, 3};
  const GaussianCloud out = apply_transform(cloud, t);
  for (size_t i = 0; i < cloud.size(); ++i) {
    CHECK((out.gaussians[i].position - cloud.gaussians[i].position - t.translation)
              .norm() < 1e-12);
    for (size_t j = i + 1; j < cloud.size(); ++j) {
      const double before = (cloud.gaussians[i].position - cloud.gaussians[j].position).norm();
      const double after = (out.gaussians[i].position - out.gaussians[j].position).norm();
      CHECK(std::abs(before - after) < 1e-12);
    }
  }
}

TEST_CASE("uniform scale doubles pairwise distances and quadruples covariance") {
  Rng rng(5);
  GaussianCloud cloud;
  for (int i = 0; i < 8; ++i) cloud.gaussians.push_back(test::random_gaussian(rng));

  RigidTransform t;
  t.uniform_scale = 2.0;
  const GaussianCloud out = apply_transform(cloud, t);
  for (size_t i = 0; i < cloud.size(); ++i) {
    for (size_t j = i + 1; j < cloud.size(); ++j) {
      const double before = (cloud.gaussians[i].position - cloud.gaussians[j].position).norm();
      const double after = (out.gaussians[i].position - out.gaussians[j].position).norm();
      CHECK(after == doctest::Approx(2.0 * before).epsilon(1e-12));
    }
    const Eigen::Matrix3d sigma_before = covariance_of(cloud.gaussians[i]);
    const Eigen::Matrix3d sigma_after = covariance_of(out.gaussians[i]);
    CHECK(max_abs_diff(sigma_after, 4.0 * sigma_before) < 1e-9);
  }
}

TEST_CASE("apply_transform is a group action") {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    GaussianCloud cloud;
    for (int i = 0; i < 4; ++i) cloud.gaussians.push_back(test::random_gaussian(rng));

    RigidTransform t1, t2;
    t1.rotation = test::random_rotation(rng);
    t1.translation = {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    t1.uniform_scale = rng.uniform(0.5, 2.0);
    t2.rotation = test::random_rotation(rng);
    t2.translation = {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    t2.uniform_scale = rng.uniform(0.5, 2.0);

    const GaussianCloud sequential = apply_transform(apply_transform(cloud, t1), t2);
    const GaussianCloud composed = apply_transform(cloud, t2.compose(t1));
    for (size_t i = 0; i < cloud.size(); ++i) {
      CHECK((sequential.gaussians[i].position - composed.gaussians[i].position).norm() <
            1e-9);
      CHECK((sequential.gaussians[i].log_scale - composed.gaussians[i].log_scale).norm() <
            1e-9);
      CHECK(max_abs_diff(covariance_of(sequential.gaussians[i]),
                         covariance_of(composed.gaussians[i])) < 1e-9);
    }
  }
}

TEST_CASE("transform validation rejects bad rotations and scales") {
  RigidTransform t;
  t.rotation(0, 0) = 2.0;
  CHECK_THROWS_AS(t.validate(), Error);

  RigidTransform reflection;
  reflection.rotation = Eigen::Vector3d(1, 1, -1).asDiagonal();
  CHECK_THROWS_AS(reflection.validate(), Error);

  RigidTransform bad_scale;
  bad_scale.uniform_scale = 0.0;
  CHECK_THROWS_AS(bad_scale.validate(), Error);
}

TEST_CASE("project_point maps the optical axis to the principal point") {
  const Camera cam = test::simple_camera(256, 256, 100.0);
  for (double d : {0.5, 1.0, 7.0, 42.0}) {
    const auto proj = project_point(cam, {0, 0, d});
    CHECK(proj.pixel.x() == doctest::Approx(cam.cx));
    CHECK(proj.pixel.y() == doctest::Approx(cam.cy));
    CHECK(proj.depth == doctest::Approx(d));
  }
}

TEST_CASE("project_point matches the pinhole formula") {
  // fx = fy = 100, cx = cy = 128: (1, 0, 10) -> 100 * 1/10 + 128 = 138.
  Camera cam = test::simple_camera(256, 256, 100.0);
  cam.cx = cam.cy = 128.0;
  const auto proj = project_point(cam, {1, 0, 10});
  CHECK(proj.pixel.x() == doctest::Approx(138.0));
  CHECK(proj.pixel.y() == doctest::Approx(128.0));
  CHECK(proj.depth == doctest::Approx(10.0));
}

TEST_CASE("project_point rejects points behind the camera") {
  const Camera cam = test::simple_camera();
  CHECK_THROWS_AS(project_point(cam, {0, 0, -1.0}), Error);
  CHECK_THROWS_AS(project_point(cam, {0, 0, 0.0}), Error);
}

TEST_CASE("project then unproject recovers the world point") {
  Rng rng(17);
  for (int i = 0; i < 200; ++i) {
    const Camera cam = test::random_camera(rng);
    const double px = rng.uniform(0, cam.width);
    const double py = rng.uniform(0, cam.height);
    const double depth = rng.uniform(0.2, 50.0);
    const Eigen::Vector3d world = test::point_at_pixel(cam, px, py, depth);

    const auto proj = project_point(cam, world);
    CHECK((unproject_pixel(cam, proj.pixel, proj.depth) - world).norm() < 1e-6);
    CHECK(proj.pixel.x() == doctest::Approx(px).epsilon(1e-9));
    CHECK(proj.pixel.y() == doctest::Approx(py).epsilon(1e-9));
  }
}

TEST_CASE("camera validation rejects bad intrinsics") {
  Camera cam = test::simple_camera();
  cam.fx = -1;
  CHECK_THROWS_AS(cam.validate(), Error);

  Camera offside = test::simple_camera();
  offside.cx = 1000;
  CHECK_THROWS_AS(offside.validate(), Error);
}

TEST_CASE("position bounds and bounding sphere radius") {
  GaussianCloud cloud;
  Gaussian3D g;
  g.position = {-1, 0, 0};
  cloud.gaussians.push_back(g);
  g.position = {1, 2, 0};
  cloud.gaussians.push_back(g);

  const Bounds3D b = position_bounds(cloud);
  CHECK((b.center() - Eigen::Vector3d(0, 1, 0)).norm() < 1e-12);
  CHECK((b.extent() - Eigen::Vector3d(2, 2, 0)).norm() < 1e-12);
  CHECK(bounding_sphere_radius(cloud) == doctest::Approx(std::sqrt(2.0)));
}
