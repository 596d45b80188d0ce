#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace c3v {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

// One anisotropic 3D Gaussian: position, per-axis log std-dev, orientation,
// opacity logit and DC color. Higher-order SH is out of scope; loaders drop it.
struct Gaussian3D {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Vector3d log_scale = Eigen::Vector3d::Zero();
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();  // unit norm
  double opacity_logit = 0.0;
  Eigen::Vector3d color = Eigen::Vector3d::Zero();  // linear RGB in [0,1]

  double opacity() const { return sigmoid(opacity_logit); }
  Eigen::Vector3d scale() const { return log_scale.array().exp(); }
  bool is_finite() const;
};

struct GaussianCloud {
  std::vector<Gaussian3D> gaussians;
  std::string label;

  bool empty() const { return gaussians.empty(); }
  size_t size() const { return gaussians.size(); }
};

// Similarity transform: p -> uniform_scale * rotation * p + translation.
struct RigidTransform {
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  double uniform_scale = 1.0;

  static RigidTransform identity() { return {}; }

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const {
    return uniform_scale * (rotation * p) + translation;
  }

  // this ∘ other: apply `other` first, then this.
  RigidTransform compose(const RigidTransform& other) const;

  // Throws ErrorKind::config if rotation is not orthonormal with det +1
  // (tolerance 1e-9) or the scale is not positive.
  void validate() const;
};

struct BBox2D {
  double height_px = 0;
  double width_px = 0;
};

struct BBox3D {
  double height_world = 0;
  double width_world = 0;
  double depth_world = 0;
};

// Sigma = R diag(exp(log_scale))^2 R^T. Throws on non-finite input.
Eigen::Matrix3d covariance_of(const Gaussian3D& g);

Gaussian3D transform_gaussian(const Gaussian3D& g, const RigidTransform& t);
GaussianCloud apply_transform(const GaussianCloud& cloud, const RigidTransform& t);

// Axis-aligned bounds of the member positions (covariance extent excluded).
struct Bounds3D {
  Eigen::Vector3d min = Eigen::Vector3d::Zero();
  Eigen::Vector3d max = Eigen::Vector3d::Zero();
  Eigen::Vector3d center() const { return 0.5 * (min + max); }
  Eigen::Vector3d extent() const { return max - min; }
};
Bounds3D position_bounds(const GaussianCloud& cloud);

// Radius of the bounding sphere around the position centroid.
double bounding_sphere_radius(const GaussianCloud& cloud);

}  // namespace c3v
