#include "c3v/lifting.hpp"

#include <algorithm>
#include <cmath>

#include "c3v/errors.hpp"
#include "c3v/util.hpp"

namespace c3v {

Eigen::Vector3d up_vector(UpAxis axis) {
  switch (axis) {
    case UpAxis::pos_x: return {1, 0, 0};
    case UpAxis::neg_x: return {-1, 0, 0};
    case UpAxis::pos_y: return {0, 1, 0};
    case UpAxis::neg_y: return {0, -1, 0};
    case UpAxis::pos_z: return {0, 0, 1};
    case UpAxis::neg_z: return {0, 0, -1};
  }
  return {0, -1, 0};
}

std::string up_axis_name(UpAxis axis) {
  switch (axis) {
    case UpAxis::pos_x: return "pos_x";
    case UpAxis::neg_x: return "neg_x";
    case UpAxis::pos_y: return "pos_y";
    case UpAxis::neg_y: return "neg_y";
    case UpAxis::pos_z: return "pos_z";
    case UpAxis::neg_z: return "neg_z";
  }
  return "neg_y";
}

UpAxis up_axis_from_name(const std::string& name) {
  if (name == "pos_x") return UpAxis::pos_x;
  if (name == "neg_x") return UpAxis::neg_x;
  if (name == "pos_y") return UpAxis::pos_y;
  if (name == "neg_y") return UpAxis::neg_y;
  if (name == "pos_z") return UpAxis::pos_z;
  if (name == "neg_z") return UpAxis::neg_z;
  throw Error(ErrorKind::config, "unknown up axis: " + name);
}

std::string depth_source_name(DepthSource s) {
  switch (s) {
    case DepthSource::exact: return "exact";
    case DepthSource::neighborhood: return "neighborhood";
    case DepthSource::external: return "external";
  }
  return "exact";
}

Trajectory2D make_trajectory2d(const PathEstimate& path, const EndpointEstimate& endpoints,
                               const BBox2D& bbox) {
  Trajectory2D out;
  out.bbox = bbox;
  out.points = path.points;
  if (out.points.empty()) {
    out.points = {endpoints.start_px, endpoints.end_px};
    return out;
  }
  if ((out.points.front() - endpoints.start_px).norm() > 0.5) {
    out.points.insert(out.points.begin(), endpoints.start_px);
  }
  if ((out.points.back() - endpoints.end_px).norm() > 0.5) {
    out.points.push_back(endpoints.end_px);
  }
  return out;
}

Eigen::Vector2d anchor_pixel(const Eigen::Vector2d& p_px, const BBox2D& bbox,
                             const LiftOptions& opts) {
  const double half = 0.5 * (opts.literal_anchor_offset ? bbox.height_px : bbox.width_px);
  return {p_px.x() + half, p_px.y()};
}

namespace {

// Valid depth at the pixel containing `a`, else the nearest valid sample in a
// 5x5 neighborhood (deterministic scan order: distance, then row, then col).
bool sample_depth(const DepthMap& d, const Eigen::Vector2d& a, double* out,
                  bool* used_neighborhood) {
  const int ix = std::clamp(static_cast<int>(std::floor(a.x())), 0, d.width - 1);
  const int iy = std::clamp(static_cast<int>(std::floor(a.y())), 0, d.height - 1);
  if (d.is_valid(ix, iy)) {
    *out = d.at(ix, iy);
    *used_neighborhood = false;
    return true;
  }
  struct Offset { int dx, dy; };
  static const std::vector<Offset> ring = [] {
    std::vector<Offset> o;
    for (int dy = -2; dy <= 2; ++dy)
      for (int dx = -2; dx <= 2; ++dx)
        if (dx != 0 || dy != 0) o.push_back({dx, dy});
    std::stable_sort(o.begin(), o.end(), [](const Offset& L, const Offset& R) {
      return L.dx * L.dx + L.dy * L.dy < R.dx * R.dx + R.dy * R.dy;
    });
    return o;
  }();
  for (const Offset& o : ring) {
    const int x = ix + o.dx, y = iy + o.dy;
    if (x < 0 || y < 0 || x >= d.width || y >= d.height) continue;
    if (d.is_valid(x, y)) {
      *out = d.at(x, y);
      *used_neighborhood = true;
      return true;
    }
  }
  return false;
}

}  // namespace

Eigen::Vector3d lift_point(const Camera& cam, const Eigen::Vector2d& p_px,
                           const DepthMap& depth, const BBox2D& bbox, double h3d,
                           UpAxis up, const LiftOptions& opts, DepthSource* source) {
  const Eigen::Vector2d anchor = anchor_pixel(p_px, bbox, opts);
  double z = 0;
  bool neighborhood = false;
  if (!sample_depth(depth, anchor, &z, &neighborhood)) {
    throw Error(ErrorKind::depth_missing,
                "depth-missing: no valid depth near anchor (" +
                    std::to_string(anchor.x()) + ", " + std::to_string(anchor.y()) + ")");
  }
  if (opts.external_depth) z *= opts.external_depth_scale;
  if (source) {
    *source = opts.external_depth
                  ? DepthSource::external
                  : (neighborhood ? DepthSource::neighborhood : DepthSource::exact);
  }
  const Eigen::Vector3d base = unproject_pixel(cam, anchor, z);
  return base + 0.5 * h3d * up_vector(up);
}

Trajectory3D lift_trajectory(const Camera& cam, const Trajectory2D& traj,
                             const DepthMap& depth, double h3d, UpAxis up,
                             const LiftOptions& opts) {
  Trajectory3D out;
  out.up_axis = up;
  out.object_height = h3d;
  for (size_t i = 0; i < traj.points.size(); ++i) {
    DepthSource src = DepthSource::exact;
    try {
      out.points.push_back(lift_point(cam, traj.points[i], depth, traj.bbox, h3d, up,
                                      opts, &src));
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::depth_missing) {
        throw Error(ErrorKind::depth_missing,
                    "depth-missing at path point " + std::to_string(i) + ": " + e.what());
      }
      throw;
    }
    out.depth_sources.push_back(src);
  }
  return out;
}

// --- TimedPath ---------------------------------------------------------------

namespace {
constexpr int kArcTableSize = 256;
}

TimedPath::TimedPath(std::vector<Eigen::Vector3d> points) : points_(std::move(points)) {
  if (points_.empty()) {
    throw Error(ErrorKind::config, "timed path needs at least one point");
  }
  arc_table_.resize(kArcTableSize, 0.0);
  if (points_.size() == 1) return;
  Eigen::Vector3d prev = eval_param(0.0);
  const double max_s = static_cast<double>(points_.size() - 1);
  for (int i = 1; i < kArcTableSize; ++i) {
    const double s = max_s * i / (kArcTableSize - 1);
    const Eigen::Vector3d p = eval_param(s);
    arc_table_[i] = arc_table_[i - 1] + (p - prev).norm();
    prev = p;
  }
}

Eigen::Vector3d TimedPath::eval_param(double s) const {
  const int n = static_cast<int>(points_.size());
  if (n == 1) return points_[0];
  s = std::clamp(s, 0.0, static_cast<double>(n - 1));
  int seg = std::min(static_cast<int>(std::floor(s)), n - 2);
  const double t = s - seg;
  const auto& p1 = points_[seg];
  const auto& p2 = points_[seg + 1];
  const auto& p0 = points_[std::max(0, seg - 1)];          // doubled start knot
  const auto& p3 = points_[std::min(n - 1, seg + 2)];      // doubled end knot
  const Eigen::Vector3d m1 = 0.5 * (p2 - p0);
  const Eigen::Vector3d m2 = 0.5 * (p3 - p1);
  const double t2 = t * t, t3 = t2 * t;
  return (2 * t3 - 3 * t2 + 1) * p1 + (t3 - 2 * t2 + t) * m1 +
         (-2 * t3 + 3 * t2) * p2 + (t3 - t2) * m2;
}

double TimedPath::param_for_length(double target) const {
  const double total = arc_table_.back();
  const double max_s = static_cast<double>(points_.size() - 1);
  if (total <= 0.0) return 0.0;
  target = std::clamp(target, 0.0, total);
  const auto it = std::lower_bound(arc_table_.begin(), arc_table_.end(), target);
  const int hi = std::max(1, static_cast<int>(it - arc_table_.begin()));
  const double len0 = arc_table_[hi - 1], len1 = arc_table_[hi];
  const double frac = len1 > len0 ? (target - len0) / (len1 - len0) : 0.0;
  return max_s * (hi - 1 + frac) / (kArcTableSize - 1);
}

Eigen::Vector3d TimedPath::position(double u) const {
  if (points_.size() == 1) return points_[0];
  u = std::clamp(u, 0.0, 1.0);
  if (u == 0.0) return points_.front();
  if (u == 1.0) return points_.back();
  return eval_param(param_for_length(u * total_length()));
}

Eigen::Vector3d TimedPath::position_param(double u) const {
  if (points_.size() == 1) return points_[0];
  u = std::clamp(u, 0.0, 1.0);
  return eval_param(u * (points_.size() - 1));
}

int TimedPath::segment_index(double u, bool constant_speed) const {
  if (points_.size() < 2) return 0;
  u = std::clamp(u, 0.0, 1.0);
  const double s = constant_speed ? param_for_length(u * total_length())
                                  : u * (points_.size() - 1);
  return std::min(static_cast<int>(std::floor(s)), static_cast<int>(points_.size()) - 2);
}

ResampledPath resample_path(const Trajectory3D& traj, int frame_count,
                            ResampleMode mode) {
  if (frame_count < 2) {
    throw Error(ErrorKind::config, "resample_path: frame_count must be >= 2");
  }
  if (traj.points.empty()) {
    throw Error(ErrorKind::config, "resample_path: empty trajectory");
  }
  TimedPath path(traj.points);
  ResampledPath out;
  out.positions.reserve(frame_count);
  out.segments.reserve(frame_count);
  const bool constant = mode == ResampleMode::constant_speed;
  for (int f = 0; f < frame_count; ++f) {
    const double u = static_cast<double>(f) / (frame_count - 1);
    out.positions.push_back(constant ? path.position(u) : path.position_param(u));
    out.segments.push_back(path.segment_index(u, constant));
  }
  // Pin the endpoints exactly.
  out.positions.front() = traj.points.front();
  out.positions.back() = traj.points.back();
  return out;
}

// --- stage files -------------------------------------------------------------

nlohmann::json camera_to_json(const Camera& cam) {
  nlohmann::json r = nlohmann::json::array();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r.push_back(cam.world_to_cam_rotation(i, j));
  return {{"fx", cam.fx}, {"fy", cam.fy}, {"cx", cam.cx}, {"cy", cam.cy},
          {"width", cam.width}, {"height", cam.height}, {"rotation", r},
          {"translation", {cam.world_to_cam_translation.x(),
                           cam.world_to_cam_translation.y(),
                           cam.world_to_cam_translation.z()}}};
}

Camera camera_from_json(const nlohmann::json& j) {
  Camera cam;
  cam.fx = j.at("fx").get<double>();
  cam.fy = j.at("fy").get<double>();
  cam.cx = j.at("cx").get<double>();
  cam.cy = j.at("cy").get<double>();
  cam.width = j.at("width").get<int>();
  cam.height = j.at("height").get<int>();
  const auto& r = j.at("rotation");
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) cam.world_to_cam_rotation(i, k) = r.at(i * 3 + k).get<double>();
  const auto& t = j.at("translation");
  cam.world_to_cam_translation =
      Eigen::Vector3d(t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>());
  cam.validate();
  return cam;
}

namespace {
nlohmann::json points2d_to_json(const std::vector<Eigen::Vector2d>& pts) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : pts) arr.push_back({p.x(), p.y()});
  return arr;
}
std::vector<Eigen::Vector2d> points2d_from_json(const nlohmann::json& arr) {
  std::vector<Eigen::Vector2d> pts;
  for (const auto& p : arr) pts.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
  return pts;
}
}  // namespace

nlohmann::json PlanFile::to_json() const {
  return {{"schema_version", schema_version},
          {"object_id", object_id},
          {"object_prompt", object_prompt},
          {"motion_prompt", motion_prompt},
          {"static", is_static},
          {"image_size", {image_width, image_height}},
          {"scale", {{"h", scale.bbox.height_px}, {"w", scale.bbox.width_px},
                     {"clamped", scale.clamped}}},
          {"endpoints", {{"start", {endpoints.start_px.x(), endpoints.start_px.y()}},
                         {"end", {endpoints.end_px.x(), endpoints.end_px.y()}},
                         {"clamped", endpoints.clamped}}},
          {"path", points2d_to_json(path)},
          {"flags", flags},
          {"audit_ref", audit_ref},
          {"camera", camera_to_json(camera)},
          {"h3d", h3d}};
}

PlanFile PlanFile::from_json(const nlohmann::json& j) {
  PlanFile p;
  p.schema_version = j.at("schema_version").get<int>();
  p.object_id = j.at("object_id").get<std::string>();
  p.object_prompt = j.at("object_prompt").get<std::string>();
  p.motion_prompt = j.at("motion_prompt").get<std::string>();
  p.is_static = j.at("static").get<bool>();
  p.image_width = j.at("image_size").at(0).get<int>();
  p.image_height = j.at("image_size").at(1).get<int>();
  p.scale.bbox.height_px = j.at("scale").at("h").get<double>();
  p.scale.bbox.width_px = j.at("scale").at("w").get<double>();
  p.scale.clamped = j.at("scale").at("clamped").get<bool>();
  const auto& e = j.at("endpoints");
  p.endpoints.start_px = {e.at("start").at(0).get<double>(), e.at("start").at(1).get<double>()};
  p.endpoints.end_px = {e.at("end").at(0).get<double>(), e.at("end").at(1).get<double>()};
  p.endpoints.clamped = e.at("clamped").get<bool>();
  p.path = points2d_from_json(j.at("path"));
  p.flags = j.at("flags").get<std::vector<std::string>>();
  p.audit_ref = j.at("audit_ref").get<std::string>();
  p.camera = camera_from_json(j.at("camera"));
  p.h3d = j.at("h3d").get<double>();
  return p;
}

void PlanFile::save(const std::filesystem::path& path) const {
  write_file_text(path, to_json().dump(2) + "\n");
}

PlanFile PlanFile::load(const std::filesystem::path& path) {
  try {
    return from_json(nlohmann::json::parse(read_file_text(path)));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::config, "plan file " + path.string() + ": " + e.what());
  }
}

nlohmann::json LiftFile::to_json() const {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : points) pts.push_back({p.x(), p.y(), p.z()});
  nlohmann::json sources = nlohmann::json::array();
  for (auto s : depth_sources) sources.push_back(depth_source_name(s));
  return {{"schema_version", schema_version}, {"object_id", object_id},
          {"up_axis", up_axis_name(up_axis)}, {"h3d", h3d}, {"points", pts},
          {"depth_sources", sources}, {"plan_ref", plan_ref},
          {"base_scale", base_scale}, {"reproj_error_px", reproj_error_px}};
}

LiftFile LiftFile::from_json(const nlohmann::json& j) {
  LiftFile f;
  f.schema_version = j.at("schema_version").get<int>();
  f.object_id = j.at("object_id").get<std::string>();
  f.up_axis = up_axis_from_name(j.at("up_axis").get<std::string>());
  f.h3d = j.at("h3d").get<double>();
  for (const auto& p : j.at("points")) {
    f.points.emplace_back(p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>());
  }
  for (const auto& s : j.at("depth_sources")) {
    const std::string name = s.get<std::string>();
    if (name == "exact") f.depth_sources.push_back(DepthSource::exact);
    else if (name == "neighborhood") f.depth_sources.push_back(DepthSource::neighborhood);
    else if (name == "external") f.depth_sources.push_back(DepthSource::external);
    else throw Error(ErrorKind::config, "lift file: unknown depth source " + name);
  }
  f.plan_ref = j.at("plan_ref").get<std::string>();
  f.base_scale = j.at("base_scale").get<double>();
  f.reproj_error_px = j.at("reproj_error_px").get<double>();
  return f;
}

void LiftFile::save(const std::filesystem::path& path) const {
  write_file_text(path, to_json().dump(2) + "\n");
}

LiftFile LiftFile::load(const std::filesystem::path& path) {
  try {
    return from_json(nlohmann::json::parse(read_file_text(path)));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::config, "lift file " + path.string() + ": " + e.what());
  }
}

}  // namespace c3v
