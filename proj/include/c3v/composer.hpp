#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "c3v/lifting.hpp"
#include "c3v/rasterizer.hpp"

namespace c3v {

// Sigmoid-clamped placement variables: a scale offset around the estimated
// base scale and one location offset per trajectory point, each confined to
// an open window of half the threshold.
struct PlacementParams {
  double scale_raw = 0.0;                         // optimizable scale variable
  std::vector<Eigen::Vector3d> location_raw;      // optimizable per-point offsets
  double tau_s = 0.0;
  double tau_l = 0.0;
  double base_scale = 0.0;                        // world-unit height target
  std::vector<Eigen::Vector3d> base_locations;    // lifted trajectory points
  bool scale_refined = false;

  static PlacementParams from_lift(const LiftFile& lift, double tau_s, double tau_l);
};

// base_scale + sigmoid(scale_raw)*tau_s - tau_s/2, strictly inside the window.
double effective_scale(const PlacementParams& params);

// base_locations[i] + sigmoid(location_raw[i])*tau_l - tau_l/2, component-wise.
Eigen::Vector3d effective_location(const PlacementParams& params, size_t i);

// World-unit height target from a pixel bbox via similar triangles.
double derive_base_scale(const BBox2D& bbox, double depth_at_start, double fy);

// Rodrigues rotation turning the canonical facing direction (0,0,1) toward
// the heading p_next - p_curr projected on the ground plane. A degenerate
// displacement falls back to `previous` (identity when null).
Eigen::Matrix3d heading_rotation(const Eigen::Vector3d& p_curr,
                                 const Eigen::Vector3d& p_next, UpAxis up,
                                 const Eigen::Matrix3d* previous = nullptr);

struct RotationSchedule {
  std::vector<Eigen::Matrix3d> rotations;  // one per path point
};

// Per-step headings from consecutive effective locations; the terminal step
// reuses the penultimate heading. Throws rotation-degenerate when no step
// yields a heading.
RotationSchedule build_rotation_schedule(const PlacementParams& params, UpAxis up);

// ---------------------------------------------------------------------------

// One guidance evaluation: the residual image plays the noise-prediction
// residual of a diffusion prior, weight w(t) already folded in.
struct GuidanceSample {
  double noise_level = 0;
  double weight = 1.0;
  Framebuffer residual;
};

class ScoreProvider {
 public:
  virtual ~ScoreProvider() = default;
  // Must be deterministic given (render, prompt, noise_level, seed).
  virtual GuidanceSample sample(const Framebuffer& render, const std::string& prompt,
                                double noise_level, uint64_t seed) = 0;
  virtual std::string name() const = 0;
};

class ZeroProvider : public ScoreProvider {
 public:
  GuidanceSample sample(const Framebuffer& render, const std::string&, double t,
                        uint64_t) override;
  std::string name() const override { return "zero"; }
};

// Quadratic image loss: residual = 2*gain*(render - target).
class PullToTargetProvider : public ScoreProvider {
 public:
  explicit PullToTargetProvider(Framebuffer target, double gain = 1.0);
  GuidanceSample sample(const Framebuffer& render, const std::string&, double t,
                        uint64_t) override;
  std::string name() const override { return "pull"; }

 private:
  Framebuffer target_;
  double gain_;
};

// Quadratic loss between the render's channel mean and a target mask.
class SilhouetteProvider : public ScoreProvider {
 public:
  SilhouetteProvider(std::vector<double> target_mask, int width, int height,
                     double gain = 1.0);
  GuidanceSample sample(const Framebuffer& render, const std::string&, double t,
                        uint64_t) override;
  std::string name() const override { return "silhouette"; }

 private:
  std::vector<double> mask_;
  int width_, height_;
  double gain_;
};

// Penalizes rendered intensity below a horizon row.
class GroundContactProvider : public ScoreProvider {
 public:
  GroundContactProvider(int horizon_row, double gain = 1.0);
  GuidanceSample sample(const Framebuffer& render, const std::string&, double t,
                        uint64_t) override;
  std::string name() const override { return "ground"; }

 private:
  int horizon_row_;
  double gain_;
};

// Speaks the director wire protocol with task tag "score"; expects a payload
// {"noise_level", "weight", "width", "height", "residual_b64"} where the
// residual is little-endian float32, planar RGB.
class RemoteProvider : public ScoreProvider {
 public:
  RemoteProvider(std::string endpoint, std::string api_key, int timeout_seconds = 60);
  GuidanceSample sample(const Framebuffer& render, const std::string& prompt,
                        double noise_level, uint64_t seed) override;
  std::string name() const override { return "remote"; }

 private:
  std::string endpoint_;
  std::string api_key_;
  int timeout_seconds_;
};

// ---------------------------------------------------------------------------

// Renders the scene with the object placed by `params` at trajectory point
// `active_point` (current effective scale, no heading rotation).
using PlacementRender = std::function<Framebuffer(const PlacementParams&, int active_point)>;

// Which raw scalars a gradient step touches: the scale variable or the three
// components of one location offset.
struct ScalarSelector {
  bool scale = false;
  int location_index = -1;
  int count() const { return scale ? 1 : 3; }
};

// Central finite-difference chain: one guidance sample from the unperturbed
// render, reused for both perturbed renders of every selected scalar.
// g_k = sum_pixels <residual, (render(x+h) - render(x-h)) / (2h)>.
// An identically-zero residual short-circuits to exact zeros.
std::vector<double> sds_gradient(const PlacementParams& params, const ScalarSelector& sel,
                                 const PlacementRender& render, ScoreProvider& provider,
                                 const std::string& prompt, double fd_step,
                                 double noise_level, uint64_t sample_seed,
                                 Framebuffer* base_render = nullptr,
                                 GuidanceSample* sample_out = nullptr);

struct RefineConfig {
  double step_size = 0.05;
  int max_iterations = 200;
  double early_stop_delta = 1e-5;
  int early_stop_patience = 10;
  double fd_step = 1e-3;          // callers scale by the scene radius
  double divergence_limit = 50.0;
  double noise_t_min = 0.05;
  double noise_t_max = 0.95;
  uint64_t seed = 0;
  bool joint_locations = false;   // optimize all points per sweep instead of sequentially
};

struct RefineTraceEntry {
  int iteration = 0;
  std::string target;             // "scale" or "location[i]"
  double noise_level = 0;
  double gradient_norm = 0;
  double param_change = 0;
  double objective_proxy = 0;     // residual-weighted render change
};

struct RefineTrace {
  std::vector<RefineTraceEntry> entries;
  nlohmann::json to_json() const;
};

// Gradient descent on scale_raw with the object held at the first trajectory
// point. Throws refinement-diverged when |scale_raw| exceeds the limit.
PlacementParams refine_scale(PlacementParams params, const PlacementRender& render,
                             ScoreProvider& provider, const std::string& prompt,
                             const RefineConfig& cfg, RefineTrace* trace = nullptr);

// Sequential per-point sweep over location offsets; requires refine_scale to
// have run first.
PlacementParams refine_locations(PlacementParams params, const PlacementRender& render,
                                 ScoreProvider& provider, const std::string& prompt,
                                 const RefineConfig& cfg, RefineTrace* trace = nullptr);

// ---------------------------------------------------------------------------

struct PlacementFile {
  int schema_version = 1;
  std::string object_id;
  UpAxis up_axis = UpAxis::neg_y;
  PlacementParams params;
  RotationSchedule schedule;
  std::string lift_ref;
  nlohmann::json trace;

  nlohmann::json to_json() const;
  static PlacementFile from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static PlacementFile load(const std::filesystem::path& path);
};

}  // namespace c3v
