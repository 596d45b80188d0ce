#include "c3v/types.hpp"

#include <cmath>

#include "c3v/errors.hpp"

namespace c3v {

bool Gaussian3D::is_finite() const {
  return position.allFinite() && log_scale.allFinite() &&
         rotation.coeffs().allFinite() && std::isfinite(opacity_logit) &&
         color.allFinite();
}

Eigen::Matrix3d covariance_of(const Gaussian3D& g) {
  if (!g.is_finite()) {
    throw Error(ErrorKind::config, "invalid-gaussian: non-finite fields");
  }
  const Eigen::Matrix3d r = g.rotation.normalized().toRotationMatrix();
  const Eigen::Vector3d s2 = g.scale().array().square();
  Eigen::Matrix3d sigma = r * s2.asDiagonal() * r.transpose();
  // Symmetrize away the last bits of rounding.
  return 0.5 * (sigma + sigma.transpose());
}

RigidTransform RigidTransform::compose(const RigidTransform& other) const {
  RigidTransform out;
  out.uniform_scale = uniform_scale * other.uniform_scale;
  out.rotation = rotation * other.rotation;
  out.translation = uniform_scale * (rotation * other.translation) + translation;
  return out;
}

void RigidTransform::validate() const {
  const Eigen::Matrix3d err =
      rotation * rotation.transpose() - Eigen::Matrix3d::Identity();
  if (err.cwiseAbs().maxCoeff() > 1e-9) {
    throw Error(ErrorKind::config, "rigid transform rotation is not orthonormal");
  }
  if (std::abs(rotation.determinant() - 1.0) > 1e-9) {
    throw Error(ErrorKind::config, "rigid transform rotation has det != +1");
  }
  if (!(uniform_scale > 0.0) || !std::isfinite(uniform_scale)) {
    throw Error(ErrorKind::config, "rigid transform scale must be positive");
  }
}

Gaussian3D transform_gaussian(const Gaussian3D& g, const RigidTransform& t) {
  Gaussian3D out = g;
  out.position = t.apply(g.position);
  const Eigen::Quaterniond qr(t.rotation);
  out.rotation = (qr * g.rotation).normalized();
  out.log_scale = g.log_scale.array() + std::log(t.uniform_scale);
  return out;
}

GaussianCloud apply_transform(const GaussianCloud& cloud, const RigidTransform& t) {
  t.validate();
  GaussianCloud out;
  out.label = cloud.label;
  out.gaussians.reserve(cloud.size());
  for (const Gaussian3D& g : cloud.gaussians) {
    out.gaussians.push_back(transform_gaussian(g, t));
  }
  return out;
}

Bounds3D position_bounds(const GaussianCloud& cloud) {
  Bounds3D b;
  if (cloud.empty()) return b;
  b.min = b.max = cloud.gaussians.front().position;
  for (const Gaussian3D& g : cloud.gaussians) {
    b.min = b.min.cwiseMin(g.position);
    b.max = b.max.cwiseMax(g.position);
  }
  return b;
}

double bounding_sphere_radius(const GaussianCloud& cloud) {
  if (cloud.empty()) return 0.0;
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (const Gaussian3D& g : cloud.gaussians) centroid += g.position;
  centroid /= static_cast<double>(cloud.size());
  double r2 = 0.0;
  for (const Gaussian3D& g : cloud.gaussians) {
    r2 = std::max(r2, (g.position - centroid).squaredNorm());
  }
  return std::sqrt(r2);
}

}  // namespace c3v
