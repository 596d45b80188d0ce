#include "c3v/rasterizer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <thread>

#include "c3v/errors.hpp"

namespace c3v {

namespace {

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Chunked parallel loop; worker i handles disjoint chunks, so callers that
// write disjoint data per index need no locking.
void parallel_for(int count, int threads, const std::function<void(int)>& fn) {
  threads = std::min(threads, count);
  if (threads <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&]() {
      for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

void require_nonzero_area(int width, int height) {
  if (width <= 0 || height <= 0) {
    throw Error(ErrorKind::config, "invalid-config: zero-area framebuffer");
  }
}

}  // namespace

void Splat2D::finalize() {
  const double a = cov2d(0, 0), b = cov2d(0, 1), c = cov2d(1, 1);
  const double det = a * c - b * b;
  conic(0, 0) = c / det;
  conic(0, 1) = conic(1, 0) = -b / det;
  conic(1, 1) = a / det;
  const double mid = 0.5 * (a + c);
  const double lambda_max = mid + std::sqrt(std::max(0.0, mid * mid - det));
  radius_px = 3.0 * std::sqrt(lambda_max);
}

std::optional<Splat2D> project_gaussian(const Camera& cam, const Gaussian3D& g,
                                        const RasterizeSettings& settings) {
  const Eigen::Vector3d p = cam.to_camera(g.position);
  if (p.z() <= kDepthEpsilon) return std::nullopt;

  Splat2D s;
  s.depth = p.z();
  s.mean_px = Eigen::Vector2d(cam.fx * p.x() / p.z() + cam.cx,
                              cam.fy * p.y() / p.z() + cam.cy);
  s.color = g.color;
  s.base_opacity = g.opacity();

  const double inv_z = 1.0 / p.z();
  Eigen::Matrix<double, 2, 3> jac;
  jac << cam.fx * inv_z, 0.0, -cam.fx * p.x() * inv_z * inv_z,
      0.0, cam.fy * inv_z, -cam.fy * p.y() * inv_z * inv_z;
  const Eigen::Matrix<double, 2, 3> jw = jac * cam.world_to_cam_rotation;
  s.cov2d = jw * covariance_of(g) * jw.transpose();
  s.cov2d(0, 0) += settings.low_pass_px2;
  s.cov2d(1, 1) += settings.low_pass_px2;
  s.finalize();

  if (s.mean_px.x() + s.radius_px < 0.0 || s.mean_px.x() - s.radius_px > cam.width ||
      s.mean_px.y() + s.radius_px < 0.0 || s.mean_px.y() - s.radius_px > cam.height) {
    return std::nullopt;
  }
  return s;
}

double sigma_hat(const Splat2D& s, double px, double py,
                 const RasterizeSettings& settings) {
  const double dx = px - s.mean_px.x();
  const double dy = py - s.mean_px.y();
  const double q = s.conic(0, 0) * dx * dx + 2.0 * s.conic(0, 1) * dx * dy +
                   s.conic(1, 1) * dy * dy;
  if (q > settings.support_chi2 || q < 0.0) return 0.0;
  return std::min(settings.max_sigma_hat, s.base_opacity * std::exp(-0.5 * q));
}

std::vector<Splat2D> project_scene(const Camera& cam, std::span<const SceneItem> items,
                                   const RasterizeSettings& settings) {
  std::vector<Splat2D> splats;
  uint32_t ordinal = 0;
  for (const SceneItem& item : items) {
    if (item.cloud == nullptr) continue;
    for (const Gaussian3D& g : item.cloud->gaussians) {
      auto s = project_gaussian(cam, transform_gaussian(g, item.transform), settings);
      if (s) {
        s->ordinal = ordinal;
        splats.push_back(*s);
      }
      ++ordinal;
    }
  }
  std::sort(splats.begin(), splats.end(), [](const Splat2D& a, const Splat2D& b) {
    if (a.depth != b.depth) return a.depth < b.depth;
    return a.ordinal < b.ordinal;
  });
  return splats;
}

namespace {

// Per-tile splat index lists; iterating splats in sorted order keeps every
// tile list depth-sorted.
std::vector<std::vector<uint32_t>> bin_splats(int width, int height,
                                              std::span<const Splat2D> sorted,
                                              int tile_size, int tiles_x, int tiles_y) {
  std::vector<std::vector<uint32_t>> bins(static_cast<size_t>(tiles_x) * tiles_y);
  for (uint32_t i = 0; i < sorted.size(); ++i) {
    const Splat2D& s = sorted[i];
    const int x0 = std::max(0, static_cast<int>(std::floor(s.mean_px.x() - s.radius_px)));
    const int x1 = std::min(width - 1, static_cast<int>(std::ceil(s.mean_px.x() + s.radius_px)));
    const int y0 = std::max(0, static_cast<int>(std::floor(s.mean_px.y() - s.radius_px)));
    const int y1 = std::min(height - 1, static_cast<int>(std::ceil(s.mean_px.y() + s.radius_px)));
    if (x0 > x1 || y0 > y1) continue;
    for (int ty = y0 / tile_size; ty <= y1 / tile_size; ++ty) {
      for (int tx = x0 / tile_size; tx <= x1 / tile_size; ++tx) {
        bins[static_cast<size_t>(ty) * tiles_x + tx].push_back(i);
      }
    }
  }
  return bins;
}

}  // namespace

Framebuffer rasterize_splats(int width, int height, std::span<const Splat2D> sorted,
                             const Eigen::Vector3d& background,
                             const RasterizeSettings& settings) {
  require_nonzero_area(width, height);
  Framebuffer fb(width, height);

  const int tile = std::max(1, settings.tile_size);
  const int tiles_x = (width + tile - 1) / tile;
  const int tiles_y = (height + tile - 1) / tile;
  const auto bins = bin_splats(width, height, sorted, tile, tiles_x, tiles_y);

  parallel_for(tiles_x * tiles_y, resolve_threads(settings.thread_count), [&](int t) {
    const int tx = t % tiles_x, ty = t / tiles_x;
    const auto& bin = bins[t];
    const int x_end = std::min(width, (tx + 1) * tile);
    const int y_end = std::min(height, (ty + 1) * tile);
    for (int y = ty * tile; y < y_end; ++y) {
      for (int x = tx * tile; x < x_end; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        double T = 1.0;
        double r = 0, g = 0, b = 0;
        for (uint32_t idx : bin) {
          const Splat2D& s = sorted[idx];
          const double sh = sigma_hat(s, px, py, settings);
          if (sh <= 0.0) continue;
          const double w = T * sh;
          r += w * s.color.x();
          g += w * s.color.y();
          b += w * s.color.z();
          T *= 1.0 - sh;
          if (T < settings.min_transmittance) break;
        }
        double* out = fb.pixel(x, y);
        out[0] = r + T * background.x();
        out[1] = g + T * background.y();
        out[2] = b + T * background.z();
        fb.alpha[static_cast<size_t>(y) * width + x] = 1.0 - T;
      }
    }
  });
  return fb;
}

Framebuffer rasterize_splats_reference(int width, int height,
                                       std::span<const Splat2D> sorted,
                                       const Eigen::Vector3d& background,
                                       const RasterizeSettings& settings) {
  require_nonzero_area(width, height);
  Framebuffer fb(width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      double T = 1.0;
      double r = 0, g = 0, b = 0;
      for (const Splat2D& s : sorted) {
        const double sh = sigma_hat(s, px, py, settings);
        if (sh <= 0.0) continue;
        const double w = T * sh;
        r += w * s.color.x();
        g += w * s.color.y();
        b += w * s.color.z();
        T *= 1.0 - sh;
      }
      double* out = fb.pixel(x, y);
      out[0] = r + T * background.x();
      out[1] = g + T * background.y();
      out[2] = b + T * background.z();
      fb.alpha[static_cast<size_t>(y) * width + x] = 1.0 - T;
    }
  }
  return fb;
}

Framebuffer rasterize(const Camera& cam, std::span<const SceneItem> items,
                      const Eigen::Vector3d& background,
                      const RasterizeSettings& settings) {
  const auto splats = project_scene(cam, items, settings);
  return rasterize_splats(cam.width, cam.height, splats, background, settings);
}

Framebuffer rasterize_reference(const Camera& cam, std::span<const SceneItem> items,
                                const Eigen::Vector3d& background,
                                const RasterizeSettings& settings) {
  const auto splats = project_scene(cam, items, settings);
  return rasterize_splats_reference(cam.width, cam.height, splats, background, settings);
}

DepthMap render_depth_splats(int width, int height, std::span<const Splat2D> sorted,
                             const RasterizeSettings& settings) {
  require_nonzero_area(width, height);
  DepthMap dm(width, height);

  const int tile = std::max(1, settings.tile_size);
  const int tiles_x = (width + tile - 1) / tile;
  const int tiles_y = (height + tile - 1) / tile;
  const auto bins = bin_splats(width, height, sorted, tile, tiles_x, tiles_y);

  parallel_for(tiles_x * tiles_y, resolve_threads(settings.thread_count), [&](int t) {
    const int tx = t % tiles_x, ty = t / tiles_x;
    const auto& bin = bins[t];
    const int x_end = std::min(width, (tx + 1) * tile);
    const int y_end = std::min(height, (ty + 1) * tile);
    for (int y = ty * tile; y < y_end; ++y) {
      for (int x = tx * tile; x < x_end; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        double T = 1.0, num = 0.0, den = 0.0;
        for (uint32_t idx : bin) {
          const Splat2D& s = sorted[idx];
          const double sh = sigma_hat(s, px, py, settings);
          if (sh <= 0.0) continue;
          const double w = T * sh;
          num += w * s.depth;
          den += w;
          T *= 1.0 - sh;
          if (T < settings.min_transmittance) break;
        }
        if (den >= 0.5) dm.set(x, y, num / den);
      }
    }
  });
  return dm;
}

DepthMap render_depth(const Camera& cam, std::span<const SceneItem> items,
                      const RasterizeSettings& settings) {
  const auto splats = project_scene(cam, items, settings);
  return render_depth_splats(cam.width, cam.height, splats, settings);
}

}  // namespace c3v
