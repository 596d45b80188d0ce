#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "c3v/camera.hpp"
#include "c3v/director.hpp"
#include "c3v/rasterizer.hpp"

namespace c3v {

// World direction that points up in the scene. The default camera convention
// has image +y pointing down, so scene-up is -y.
enum class UpAxis { pos_x, neg_x, pos_y, neg_y, pos_z, neg_z };

Eigen::Vector3d up_vector(UpAxis axis);
std::string up_axis_name(UpAxis axis);
UpAxis up_axis_from_name(const std::string& name);

struct Trajectory2D {
  std::vector<Eigen::Vector2d> points;
  BBox2D bbox;
};

// Validated path with the estimated endpoints prepended/appended when the
// director's path does not already land on them.
Trajectory2D make_trajectory2d(const PathEstimate& path, const EndpointEstimate& endpoints,
                               const BBox2D& bbox);

enum class DepthSource { exact, neighborhood, external };
std::string depth_source_name(DepthSource s);

struct Trajectory3D {
  std::vector<Eigen::Vector3d> points;
  UpAxis up_axis = UpAxis::neg_y;
  std::vector<DepthSource> depth_sources;  // one per point
  double object_height = 0;                // H_3D used for the half-height shift
  std::string plan_ref;
};

struct LiftOptions {
  // Restores the literal anchor formula (half-HEIGHT horizontal offset)
  // instead of the coherent half-width reading.
  bool literal_anchor_offset = false;
  // Set when the depth map came from an external estimator; the scale factor
  // aligns relative depth to scene units.
  bool external_depth = false;
  double external_depth_scale = 1.0;
};

// Anchor pixel for a path point: the center of the box's lower boundary.
Eigen::Vector2d anchor_pixel(const Eigen::Vector2d& p_px, const BBox2D& bbox,
                             const LiftOptions& opts = {});

// Unprojects the anchor at the scene depth, then shifts the result half the
// object height toward scene-up so the object's base sits on the ground
// sample. Falls back to a 5x5 neighborhood when the anchor depth is invalid;
// throws depth-missing when none is found.
Eigen::Vector3d lift_point(const Camera& cam, const Eigen::Vector2d& p_px,
                           const DepthMap& depth, const BBox2D& bbox, double h3d,
                           UpAxis up, const LiftOptions& opts = {},
                           DepthSource* source = nullptr);

Trajectory3D lift_trajectory(const Camera& cam, const Trajectory2D& traj,
                             const DepthMap& depth, double h3d, UpAxis up,
                             const LiftOptions& opts = {});

// Catmull-Rom spline through the trajectory points (doubled end knots) with a
// 256-entry arc-length table for constant-speed sampling.
class TimedPath {
 public:
  explicit TimedPath(std::vector<Eigen::Vector3d> points);

  // Arc-length parameterized position, u in [0,1].
  Eigen::Vector3d position(double u) const;
  // Uniform-parameter position, u in [0,1].
  Eigen::Vector3d position_param(double u) const;
  // Index of the original polyline segment a sample falls on.
  int segment_index(double u, bool constant_speed) const;
  double total_length() const { return arc_table_.back(); }
  size_t point_count() const { return points_.size(); }

 private:
  Eigen::Vector3d eval_param(double s) const;  // s in [0, n-1]
  double param_for_length(double target) const;

  std::vector<Eigen::Vector3d> points_;
  std::vector<double> arc_table_;  // cumulative length at 256 parameters
};

enum class ResampleMode { constant_speed, uniform_parameter };

struct ResampledPath {
  std::vector<Eigen::Vector3d> positions;  // frame_count entries
  std::vector<int> segments;               // source polyline segment per frame
};

ResampledPath resample_path(const Trajectory3D& traj, int frame_count,
                            ResampleMode mode = ResampleMode::constant_speed);

// --- stage files -----------------------------------------------------------
// The plan and lift stages communicate through these JSON documents.

struct PlanFile {
  int schema_version = 1;
  std::string object_id;
  std::string object_prompt;
  std::string motion_prompt;
  bool is_static = false;
  int image_width = 0, image_height = 0;
  ScaleEstimate scale;
  EndpointEstimate endpoints;
  std::vector<Eigen::Vector2d> path;  // validated trajectory (single point if static)
  std::vector<std::string> flags;
  std::string audit_ref;
  Camera camera;
  double h3d = 0;

  nlohmann::json to_json() const;
  static PlanFile from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static PlanFile load(const std::filesystem::path& path);
};

struct LiftFile {
  int schema_version = 1;
  std::string object_id;
  UpAxis up_axis = UpAxis::neg_y;
  double h3d = 0;
  std::vector<Eigen::Vector3d> points;
  std::vector<DepthSource> depth_sources;
  std::string plan_ref;
  double base_scale = 0;        // world-unit height target from the 2D bbox
  double reproj_error_px = 0;   // round-trip check recorded at lift time

  nlohmann::json to_json() const;
  static LiftFile from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static LiftFile load(const std::filesystem::path& path);
};

nlohmann::json camera_to_json(const Camera& cam);
Camera camera_from_json(const nlohmann::json& j);

}  // namespace c3v
