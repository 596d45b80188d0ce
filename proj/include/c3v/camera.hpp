#pragma once

#include <Eigen/Dense>

namespace c3v {

inline constexpr double kDepthEpsilon = 1e-6;

// Pinhole camera. World-to-camera extrinsics; camera space looks down +z,
// pixel origin top-left, +x right, +y down.
struct Camera {
  double fx = 0, fy = 0;
  double cx = 0, cy = 0;
  int width = 0, height = 0;
  Eigen::Matrix3d world_to_cam_rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d world_to_cam_translation = Eigen::Vector3d::Zero();

  Eigen::Matrix3d intrinsics() const {
    Eigen::Matrix3d k = Eigen::Matrix3d::Identity();
    k(0, 0) = fx;
    k(1, 1) = fy;
    k(0, 2) = cx;
    k(1, 2) = cy;
    return k;
  }

  Eigen::Vector3d to_camera(const Eigen::Vector3d& p_world) const {
    return world_to_cam_rotation * p_world + world_to_cam_translation;
  }

  Eigen::Vector3d to_world(const Eigen::Vector3d& p_cam) const {
    return world_to_cam_rotation.transpose() * (p_cam - world_to_cam_translation);
  }

  Eigen::Vector3d center() const {
    return -(world_to_cam_rotation.transpose() * world_to_cam_translation);
  }

  // Throws ErrorKind::config on bad intrinsics or non-orthonormal rotation.
  void validate() const;
};

struct Projection {
  Eigen::Vector2d pixel;
  double depth;  // camera-space z
};

// Throws a behind-camera error when camera-space z <= kDepthEpsilon.
Projection project_point(const Camera& cam, const Eigen::Vector3d& p_world);

// Inverse of project_point at a known camera-space depth.
Eigen::Vector3d unproject_pixel(const Camera& cam, const Eigen::Vector2d& pixel,
                                double depth);

// Camera at `center` looking toward `target`, image-down aligned with
// -scene_up; principal point at the image center.
Camera make_look_at_camera(double fx, double fy, int width, int height,
                           const Eigen::Vector3d& center, const Eigen::Vector3d& target,
                           const Eigen::Vector3d& scene_up);

}  // namespace c3v
