#include "c3v/camera.hpp"

#include <cmath>

#include "c3v/errors.hpp"

namespace c3v {

void Camera::validate() const {
  if (!(fx > 0) || !(fy > 0)) {
    throw Error(ErrorKind::config, "camera focal lengths must be positive");
  }
  if (width <= 0 || height <= 0) {
    throw Error(ErrorKind::config, "camera image size must be positive");
  }
  if (cx < 0 || cx > width || cy < 0 || cy > height) {
    throw Error(ErrorKind::config, "camera principal point outside image");
  }
  const Eigen::Matrix3d err = world_to_cam_rotation * world_to_cam_rotation.transpose() -
                              Eigen::Matrix3d::Identity();
  if (err.cwiseAbs().maxCoeff() > 1e-9 ||
      std::abs(world_to_cam_rotation.determinant() - 1.0) > 1e-9) {
    throw Error(ErrorKind::config, "camera rotation is not orthonormal");
  }
}

Projection project_point(const Camera& cam, const Eigen::Vector3d& p_world) {
  const Eigen::Vector3d p = cam.to_camera(p_world);
  if (p.z() <= kDepthEpsilon) {
    throw Error(ErrorKind::render_failure, "behind-camera: point has z <= epsilon");
  }
  return Projection{
      Eigen::Vector2d(cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy),
      p.z()};
}

Eigen::Vector3d unproject_pixel(const Camera& cam, const Eigen::Vector2d& pixel,
                                double depth) {
  const Eigen::Vector3d p_cam((pixel.x() - cam.cx) / cam.fx * depth,
                              (pixel.y() - cam.cy) / cam.fy * depth, depth);
  return cam.to_world(p_cam);
}

Camera make_look_at_camera(double fx, double fy, int width, int height,
                           const Eigen::Vector3d& center, const Eigen::Vector3d& target,
                           const Eigen::Vector3d& scene_up) {
  Camera cam;
  cam.fx = fx;
  cam.fy = fy;
  cam.cx = width / 2.0;
  cam.cy = height / 2.0;
  cam.width = width;
  cam.height = height;

  const Eigen::Vector3d forward = (target - center).normalized();
  const Eigen::Vector3d down = -scene_up.normalized();
  Eigen::Vector3d right = down.cross(forward);
  if (right.norm() < 1e-9) {
    throw Error(ErrorKind::config, "look-at: view direction parallel to the up axis");
  }
  right.normalize();
  const Eigen::Vector3d image_down = forward.cross(right).normalized();

  Eigen::Matrix3d r;
  r.row(0) = right;
  r.row(1) = image_down;
  r.row(2) = forward;
  cam.world_to_cam_rotation = r;
  cam.world_to_cam_translation = -(r * center);
  cam.validate();
  return cam;
}

}  // namespace c3v
