#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "c3v/camera.hpp"
#include "c3v/types.hpp"
#include "c3v/util.hpp"

namespace c3v::test {

inline Eigen::Quaterniond random_unit_quaternion(Rng& rng) {
  // Shoemake's uniform quaternion sampling.
  const double u1 = rng.next_double();
  const double u2 = rng.next_double() * 2.0 * M_PI;
  const double u3 = rng.next_double() * 2.0 * M_PI;
  const double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
  return Eigen::Quaterniond(a * std::sin(u2), a * std::cos(u2), b * std::sin(u3),
                            b * std::cos(u3))
      .normalized();
}

inline Eigen::Matrix3d random_rotation(Rng& rng) {
  return random_unit_quaternion(rng).toRotationMatrix();
}

inline Gaussian3D random_gaussian(Rng& rng, double spread = 1.0) {
  Gaussian3D g;
  g.position = Eigen::Vector3d(rng.uniform(-spread, spread), rng.uniform(-spread, spread),
                               rng.uniform(-spread, spread));
  g.log_scale = Eigen::Vector3d(rng.uniform(-2.5, -0.5), rng.uniform(-2.5, -0.5),
                                rng.uniform(-2.5, -0.5));
  g.rotation = random_unit_quaternion(rng);
  g.opacity_logit = rng.uniform(-1.0, 3.0);
  g.color = Eigen::Vector3d(rng.next_double(), rng.next_double(), rng.next_double());
  return g;
}

inline Camera simple_camera(int width = 256, int height = 256, double f = 200.0) {
  Camera cam;
  cam.fx = cam.fy = f;
  cam.cx = width / 2.0;
  cam.cy = height / 2.0;
  cam.width = width;
  cam.height = height;
  return cam;
}

inline Camera random_camera(Rng& rng, int width = 256, int height = 256) {
  Camera cam;
  cam.fx = rng.uniform(120.0, 320.0);
  cam.fy = rng.uniform(120.0, 320.0);
  cam.cx = width / 2.0 + rng.uniform(-10.0, 10.0);
  cam.cy = height / 2.0 + rng.uniform(-10.0, 10.0);
  cam.width = width;
  cam.height = height;
  cam.world_to_cam_rotation = random_rotation(rng);
  cam.world_to_cam_translation = Eigen::Vector3d(
      rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));
  return cam;
}

// World point that lands inside the frustum at a chosen pixel and depth.
inline Eigen::Vector3d point_at_pixel(const Camera& cam, double px, double py,
                                      double depth) {
  return unproject_pixel(cam, Eigen::Vector2d(px, py), depth);
}

inline double max_abs_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

}  // namespace c3v::test
