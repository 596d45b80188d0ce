#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "c3v/camera.hpp"
#include "c3v/types.hpp"

namespace c3v {

// A 3D Gaussian projected to the image plane.
struct Splat2D {
  Eigen::Vector2d mean_px = Eigen::Vector2d::Zero();
  Eigen::Matrix2d cov2d = Eigen::Matrix2d::Identity();  // low-pass regularized
  double depth = 0;                                     // camera-space z
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
  double base_opacity = 0;

  // Cached by finalize(): conic = cov2d^-1, radius = 3*sqrt(lambda_max).
  Eigen::Matrix2d conic = Eigen::Matrix2d::Identity();
  double radius_px = 0;
  uint32_t ordinal = 0;  // stable tie-break key for equal depths

  void finalize();
};

struct RasterizeSettings {
  double low_pass_px2 = 0.3;     // added to cov2d diagonal
  double max_sigma_hat = 0.99;   // opacity clamp per contribution
  double min_transmittance = 1e-4;  // early-termination threshold
  double support_chi2 = 9.0;     // contributions end at the 3-sigma ellipse
  int tile_size = 16;
  int thread_count = 0;          // 0 = hardware concurrency
};

struct Framebuffer {
  int width = 0, height = 0;
  std::vector<double> rgb;    // row-major, 3 channels, linear in [0,1]
  std::vector<double> alpha;  // accumulated opacity per pixel

  Framebuffer() = default;
  Framebuffer(int w, int h)
      : width(w), height(h), rgb(static_cast<size_t>(w) * h * 3, 0.0),
        alpha(static_cast<size_t>(w) * h, 0.0) {}

  double* pixel(int x, int y) { return &rgb[(static_cast<size_t>(y) * width + x) * 3]; }
  const double* pixel(int x, int y) const {
    return &rgb[(static_cast<size_t>(y) * width + x) * 3];
  }
};

struct DepthMap {
  int width = 0, height = 0;
  std::vector<double> values;
  std::vector<uint8_t> valid;

  DepthMap() = default;
  DepthMap(int w, int h)
      : width(w), height(h), values(static_cast<size_t>(w) * h, 0.0),
        valid(static_cast<size_t>(w) * h, 0) {}

  double at(int x, int y) const { return values[static_cast<size_t>(y) * width + x]; }
  bool is_valid(int x, int y) const {
    return valid[static_cast<size_t>(y) * width + x] != 0;
  }
  void set(int x, int y, double v) {
    values[static_cast<size_t>(y) * width + x] = v;
    valid[static_cast<size_t>(y) * width + x] = 1;
  }
};

// One renderable item: a cloud and its placement.
struct SceneItem {
  const GaussianCloud* cloud = nullptr;
  RigidTransform transform = RigidTransform::identity();
};

// EWA projection of one Gaussian; nullopt when culled (behind the near plane
// or the 3-sigma footprint misses the image).
std::optional<Splat2D> project_gaussian(const Camera& cam, const Gaussian3D& g,
                                        const RasterizeSettings& settings = {});

// Opacity contribution of a splat at a sample position. Zero outside the
// 3-sigma support ellipse; clamped to settings.max_sigma_hat.
double sigma_hat(const Splat2D& s, double px, double py,
                 const RasterizeSettings& settings);

// Projects every Gaussian of every item and depth-sorts the surviving splats
// (ties broken by input ordinal).
std::vector<Splat2D> project_scene(const Camera& cam, std::span<const SceneItem> items,
                                   const RasterizeSettings& settings = {});

// Tile-based front-to-back compositing over pre-sorted splats.
Framebuffer rasterize_splats(int width, int height, std::span<const Splat2D> sorted,
                             const Eigen::Vector3d& background,
                             const RasterizeSettings& settings = {});

// Brute-force oracle: per pixel, walk every splat in depth order with no
// tiling and no early termination. Identical contract otherwise.
Framebuffer rasterize_splats_reference(int width, int height,
                                       std::span<const Splat2D> sorted,
                                       const Eigen::Vector3d& background,
                                       const RasterizeSettings& settings = {});

Framebuffer rasterize(const Camera& cam, std::span<const SceneItem> items,
                      const Eigen::Vector3d& background,
                      const RasterizeSettings& settings = {});

Framebuffer rasterize_reference(const Camera& cam, std::span<const SceneItem> items,
                                const Eigen::Vector3d& background,
                                const RasterizeSettings& settings = {});

// Alpha-weighted expected depth; a pixel is valid once accumulated alpha
// reaches 0.5.
DepthMap render_depth_splats(int width, int height, std::span<const Splat2D> sorted,
                             const RasterizeSettings& settings = {});

DepthMap render_depth(const Camera& cam, std::span<const SceneItem> items,
                      const RasterizeSettings& settings = {});

}  // namespace c3v
