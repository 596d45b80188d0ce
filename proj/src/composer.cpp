#include "c3v/composer.hpp"

#include <cmath>
#include <cstring>

#include <httplib.h>

#include "c3v/errors.hpp"
#include "c3v/image_io.hpp"
#include "c3v/util.hpp"

namespace c3v {

PlacementParams PlacementParams::from_lift(const LiftFile& lift, double tau_s,
                                           double tau_l) {
  PlacementParams p;
  p.base_scale = lift.base_scale;
  p.base_locations = lift.points;
  p.location_raw.assign(lift.points.size(), Eigen::Vector3d::Zero());
  p.tau_s = tau_s;
  p.tau_l = tau_l;
  return p;
}

double effective_scale(const PlacementParams& params) {
  return params.base_scale + sigmoid(params.scale_raw) * params.tau_s - 0.5 * params.tau_s;
}

Eigen::Vector3d effective_location(const PlacementParams& params, size_t i) {
  if (i >= params.base_locations.size()) {
    throw Error(ErrorKind::config, "effective_location: index out of range");
  }
  Eigen::Vector3d offset;
  for (int k = 0; k < 3; ++k) {
    offset[k] = sigmoid(params.location_raw[i][k]) * params.tau_l - 0.5 * params.tau_l;
  }
  return params.base_locations[i] + offset;
}

double derive_base_scale(const BBox2D& bbox, double depth_at_start, double fy) {
  if (!(depth_at_start > 0) || !(fy > 0)) {
    throw Error(ErrorKind::config, "derive_base_scale: depth and fy must be positive");
  }
  return bbox.height_px * depth_at_start / fy;
}

Eigen::Matrix3d heading_rotation(const Eigen::Vector3d& p_curr,
                                 const Eigen::Vector3d& p_next, UpAxis up,
                                 const Eigen::Matrix3d* previous) {
  constexpr double kDirEpsilon = 1e-6;
  const Eigen::Vector3d u_up = up_vector(up);
  Eigen::Vector3d d = p_next - p_curr;
  d -= d.dot(u_up) * u_up;  // planar heading
  if (d.norm() <= kDirEpsilon) {
    return previous ? *previous : Eigen::Matrix3d::Identity();
  }
  const Eigen::Vector3d heading = d.normalized();
  const Eigen::Vector3d facing(0, 0, 1);

  const double c = std::clamp(facing.dot(heading), -1.0, 1.0);
  Eigen::Vector3d axis = facing.cross(heading);
  const double s = axis.norm();  // sin of the unsigned angle

  if (s < 1e-12) {
    if (c > 0) return Eigen::Matrix3d::Identity();
    axis = u_up;  // antiparallel tie-break: rotate about the up axis
  } else {
    axis /= s;
  }

  const double t = 1.0 - c;
  const double x = axis.x(), y = axis.y(), z = axis.z();
  Eigen::Matrix3d r;
  r << t * x * x + c, t * x * y - z * s, t * x * z + y * s,
       t * x * y + z * s, t * y * y + c, t * y * z - x * s,
       t * x * z - y * s, t * y * z + x * s, t * z * z + c;
  return r;
}

RotationSchedule build_rotation_schedule(const PlacementParams& params, UpAxis up) {
  const size_t n = params.base_locations.size();
  if (n < 2) {
    throw Error(ErrorKind::config, "rotation schedule needs at least 2 locations");
  }
  RotationSchedule out;
  out.rotations.reserve(n);
  const Eigen::Vector3d u_up = up_vector(up);
  bool any_heading = false;
  Eigen::Matrix3d prev = Eigen::Matrix3d::Identity();
  for (size_t i = 0; i + 1 < n; ++i) {
    const Eigen::Vector3d a = effective_location(params, i);
    const Eigen::Vector3d b = effective_location(params, i + 1);
    Eigen::Vector3d d = b - a;
    d -= d.dot(u_up) * u_up;
    if (d.norm() > 1e-6) any_heading = true;
    prev = heading_rotation(a, b, up, &prev);
    out.rotations.push_back(prev);
  }
  if (!any_heading) {
    throw Error(ErrorKind::validation, "rotation-degenerate: no step has a heading");
  }
  out.rotations.push_back(out.rotations.back());  // terminal step reuses the last heading
  return out;
}

// --- providers ---------------------------------------------------------------

GuidanceSample ZeroProvider::sample(const Framebuffer& render, const std::string&,
                                    double t, uint64_t) {
  GuidanceSample s;
  s.noise_level = t;
  s.residual = Framebuffer(render.width, render.height);
  return s;
}

PullToTargetProvider::PullToTargetProvider(Framebuffer target, double gain)
    : target_(std::move(target)), gain_(gain) {}

GuidanceSample PullToTargetProvider::sample(const Framebuffer& render,
                                            const std::string&, double t, uint64_t) {
  if (render.width != target_.width || render.height != target_.height) {
    throw Error(ErrorKind::config, "pull provider: render/target size mismatch");
  }
  GuidanceSample s;
  s.noise_level = t;
  s.residual = Framebuffer(render.width, render.height);
  for (size_t i = 0; i < render.rgb.size(); ++i) {
    s.residual.rgb[i] = 2.0 * gain_ * (render.rgb[i] - target_.rgb[i]);
  }
  return s;
}

SilhouetteProvider::SilhouetteProvider(std::vector<double> target_mask, int width,
                                       int height, double gain)
    : mask_(std::move(target_mask)), width_(width), height_(height), gain_(gain) {
  if (mask_.size() != static_cast<size_t>(width_) * height_) {
    throw Error(ErrorKind::config, "silhouette provider: mask size mismatch");
  }
}

GuidanceSample SilhouetteProvider::sample(const Framebuffer& render, const std::string&,
                                          double t, uint64_t) {
  if (render.width != width_ || render.height != height_) {
    throw Error(ErrorKind::config, "silhouette provider: render size mismatch");
  }
  GuidanceSample s;
  s.noise_level = t;
  s.residual = Framebuffer(render.width, render.height);
  const size_t n = mask_.size();
  for (size_t i = 0; i < n; ++i) {
    const double mean =
        (render.rgb[i * 3] + render.rgb[i * 3 + 1] + render.rgb[i * 3 + 2]) / 3.0;
    const double r = 2.0 * gain_ * (mean - mask_[i]) / 3.0;
    s.residual.rgb[i * 3] = r;
    s.residual.rgb[i * 3 + 1] = r;
    s.residual.rgb[i * 3 + 2] = r;
  }
  return s;
}

GroundContactProvider::GroundContactProvider(int horizon_row, double gain)
    : horizon_row_(horizon_row), gain_(gain) {}

GuidanceSample GroundContactProvider::sample(const Framebuffer& render,
                                             const std::string&, double t, uint64_t) {
  GuidanceSample s;
  s.noise_level = t;
  s.residual = Framebuffer(render.width, render.height);
  for (int y = std::max(0, horizon_row_); y < render.height; ++y) {
    for (int x = 0; x < render.width; ++x) {
      const size_t i = (static_cast<size_t>(y) * render.width + x) * 3;
      s.residual.rgb[i] = 2.0 * gain_ * render.rgb[i];
      s.residual.rgb[i + 1] = 2.0 * gain_ * render.rgb[i + 1];
      s.residual.rgb[i + 2] = 2.0 * gain_ * render.rgb[i + 2];
    }
  }
  return s;
}

RemoteProvider::RemoteProvider(std::string endpoint, std::string api_key,
                               int timeout_seconds)
    : endpoint_(std::move(endpoint)), api_key_(std::move(api_key)),
      timeout_seconds_(timeout_seconds) {}

GuidanceSample RemoteProvider::sample(const Framebuffer& render, const std::string& prompt,
                                      double noise_level, uint64_t seed) {
  httplib::Client client(endpoint_);
  client.set_connection_timeout(timeout_seconds_);
  client.set_read_timeout(timeout_seconds_);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  const auto png = encode_png_rgb8(render.width, render.height, to_srgb8(render));
  nlohmann::json body{{"task", "score"},
                      {"prompt", prompt},
                      {"image_b64", base64_encode(png)},
                      {"context", nlohmann::json::object()},
                      {"params", {{"noise_level", noise_level}, {"seed", seed}}}};
  const auto res = client.Post("/director", headers, body.dump(), "application/json");
  if (!res || res->status != 200) {
    throw Error(ErrorKind::director_unreachable, "score provider unreachable: " + endpoint_);
  }
  nlohmann::json payload;
  try {
    payload = nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::director_malformed,
                std::string("score provider: bad payload: ") + e.what());
  }
  GuidanceSample s;
  s.noise_level = payload.value("noise_level", noise_level);
  s.weight = payload.value("weight", 1.0);
  const int w = payload.at("width").get<int>();
  const int h = payload.at("height").get<int>();
  if (w != render.width || h != render.height) {
    throw Error(ErrorKind::director_malformed, "score provider: residual size mismatch");
  }
  const auto bytes = base64_decode(payload.at("residual_b64").get<std::string>());
  const size_t n = static_cast<size_t>(w) * h;
  if (bytes.size() != n * 3 * 4) {
    throw Error(ErrorKind::director_malformed, "score provider: residual byte count");
  }
  s.residual = Framebuffer(w, h);
  for (int c = 0; c < 3; ++c) {
    for (size_t i = 0; i < n; ++i) {
      float f;
      std::memcpy(&f, bytes.data() + 4 * (c * n + i), 4);
      s.residual.rgb[i * 3 + c] = f;
    }
  }
  return s;
}

// --- gradients and refinement -------------------------------------------------

namespace {

bool framebuffer_finite(const Framebuffer& fb) {
  for (double v : fb.rgb) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool residual_is_zero(const Framebuffer& fb) {
  for (double v : fb.rgb) {
    if (v != 0.0) return false;
  }
  return true;
}

double* scalar_slot(PlacementParams& p, const ScalarSelector& sel, int k) {
  if (sel.scale) return &p.scale_raw;
  return &p.location_raw[sel.location_index][k];
}

std::string scalar_name(const ScalarSelector& sel, int k) {
  if (sel.scale) return "scale_raw";
  const char axis[] = {'x', 'y', 'z'};
  return "location[" + std::to_string(sel.location_index) + "]." + axis[k];
}

}  // namespace

std::vector<double> sds_gradient(const PlacementParams& params, const ScalarSelector& sel,
                                 const PlacementRender& render, ScoreProvider& provider,
                                 const std::string& prompt, double fd_step,
                                 double noise_level, uint64_t sample_seed,
                                 Framebuffer* base_render, GuidanceSample* sample_out) {
  if (!(fd_step > 0)) {
    throw Error(ErrorKind::config, "sds_gradient: fd_step must be positive");
  }
  if (!sel.scale &&
      (sel.location_index < 0 ||
       sel.location_index >= static_cast<int>(params.location_raw.size()))) {
    throw Error(ErrorKind::config, "sds_gradient: location index out of range");
  }
  const int active_point = sel.scale ? 0 : sel.location_index;

  const Framebuffer base = render(params, active_point);
  if (!framebuffer_finite(base)) {
    throw Error(ErrorKind::refinement_diverged, "sds_gradient: non-finite base render");
  }
  GuidanceSample sample = provider.sample(base, prompt, noise_level, sample_seed);
  if (sample.residual.width != base.width || sample.residual.height != base.height) {
    throw Error(ErrorKind::config, "sds_gradient: residual size mismatch");
  }
  if (!framebuffer_finite(sample.residual)) {
    throw Error(ErrorKind::refinement_diverged, "sds_gradient: non-finite residual");
  }
  if (base_render) *base_render = base;

  std::vector<double> grad(sel.count(), 0.0);
  if (residual_is_zero(sample.residual)) {
    // <0, dI/dtheta> vanishes for every scalar; skip the perturbed renders.
    if (sample_out) *sample_out = std::move(sample);
    return grad;
  }

  for (int k = 0; k < sel.count(); ++k) {
    PlacementParams plus = params;
    PlacementParams minus = params;
    *scalar_slot(plus, sel, k) += fd_step;
    *scalar_slot(minus, sel, k) -= fd_step;
    const Framebuffer ip = render(plus, active_point);
    const Framebuffer im = render(minus, active_point);
    if (!framebuffer_finite(ip) || !framebuffer_finite(im)) {
      throw Error(ErrorKind::refinement_diverged,
                  "gradient-invalid: non-finite render perturbing " + scalar_name(sel, k));
    }
    double g = 0.0;
    for (size_t i = 0; i < base.rgb.size(); ++i) {
      g += sample.residual.rgb[i] * (ip.rgb[i] - im.rgb[i]);
    }
    grad[k] = g / (2.0 * fd_step);
  }
  if (sample_out) *sample_out = std::move(sample);
  return grad;
}

nlohmann::json RefineTrace::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : entries) {
    arr.push_back({{"iteration", e.iteration}, {"target", e.target},
                   {"noise_level", e.noise_level}, {"gradient_norm", e.gradient_norm},
                   {"param_change", e.param_change},
                   {"objective_proxy", e.objective_proxy}});
  }
  return arr;
}

namespace {

double weighted_change(const GuidanceSample& sample, const Framebuffer& curr,
                       const Framebuffer& prev) {
  if (prev.rgb.size() != curr.rgb.size()) return 0.0;
  double acc = 0.0;
  for (size_t i = 0; i < curr.rgb.size(); ++i) {
    acc += sample.residual.rgb[i] * (curr.rgb[i] - prev.rgb[i]);
  }
  return acc;
}

void check_divergence(double value, const char* target, double limit) {
  if (!std::isfinite(value) || std::abs(value) > limit) {
    throw Error(ErrorKind::refinement_diverged,
                std::string("refinement-diverged: ") + target + " left the trust window");
  }
}

}  // namespace

PlacementParams refine_scale(PlacementParams params, const PlacementRender& render,
                             ScoreProvider& provider, const std::string& prompt,
                             const RefineConfig& cfg, RefineTrace* trace) {
  Rng rng(cfg.seed);
  ScalarSelector sel;
  sel.scale = true;
  Framebuffer prev_render;
  int calm_iterations = 0;
  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    const double t = rng.uniform(cfg.noise_t_min, cfg.noise_t_max);
    const uint64_t sample_seed = rng.next_u64();
    Framebuffer base;
    GuidanceSample sample;
    const auto grad = sds_gradient(params, sel, render, provider, prompt, cfg.fd_step, t,
                                   sample_seed, &base, &sample);
    const double next = params.scale_raw - cfg.step_size * grad[0];
    check_divergence(next, "scale_raw", cfg.divergence_limit);
    const double change = std::abs(next - params.scale_raw);
    params.scale_raw = next;

    if (trace) {
      trace->entries.push_back({iter, "scale", t, std::abs(grad[0]), change,
                                iter == 0 ? 0.0 : weighted_change(sample, base, prev_render)});
    }
    prev_render = std::move(base);

    calm_iterations = change < cfg.early_stop_delta ? calm_iterations + 1 : 0;
    if (calm_iterations >= cfg.early_stop_patience) break;
  }
  params.scale_refined = true;
  return params;
}

PlacementParams refine_locations(PlacementParams params, const PlacementRender& render,
                                 ScoreProvider& provider, const std::string& prompt,
                                 const RefineConfig& cfg, RefineTrace* trace) {
  if (!params.scale_refined) {
    throw Error(ErrorKind::validation,
                "refine_locations: refine_scale must complete first");
  }
  Rng rng(cfg.seed + 1);

  auto optimize_point = [&](int index) {
    ScalarSelector sel;
    sel.location_index = index;
    Framebuffer prev_render;
    int calm_iterations = 0;
    for (int iter = 0; iter < cfg.max_iterations; ++iter) {
      const double t = rng.uniform(cfg.noise_t_min, cfg.noise_t_max);
      const uint64_t sample_seed = rng.next_u64();
      Framebuffer base;
      GuidanceSample sample;
      const auto grad = sds_gradient(params, sel, render, provider, prompt, cfg.fd_step,
                                     t, sample_seed, &base, &sample);
      double change = 0.0;
      double grad_norm = 0.0;
      for (int k = 0; k < 3; ++k) {
        const double next = params.location_raw[index][k] - cfg.step_size * grad[k];
        check_divergence(next, "location_raw", cfg.divergence_limit);
        change = std::max(change, std::abs(next - params.location_raw[index][k]));
        grad_norm += grad[k] * grad[k];
        params.location_raw[index][k] = next;
      }
      if (trace) {
        trace->entries.push_back({iter, "location[" + std::to_string(index) + "]", t,
                                  std::sqrt(grad_norm), change,
                                  iter == 0 ? 0.0
                                            : weighted_change(sample, base, prev_render)});
      }
      prev_render = std::move(base);

      calm_iterations = change < cfg.early_stop_delta ? calm_iterations + 1 : 0;
      if (calm_iterations >= cfg.early_stop_patience) break;
    }
  };

  if (cfg.joint_locations) {
    // One gradient sweep per iteration across all points, then apply.
    Rng joint_rng(cfg.seed + 1);
    int calm_iterations = 0;
    for (int iter = 0; iter < cfg.max_iterations; ++iter) {
      double change = 0.0;
      std::vector<Eigen::Vector3d> updates(params.location_raw.size());
      for (size_t i = 0; i < params.location_raw.size(); ++i) {
        const double t = joint_rng.uniform(cfg.noise_t_min, cfg.noise_t_max);
        const uint64_t sample_seed = joint_rng.next_u64();
        ScalarSelector sel;
        sel.location_index = static_cast<int>(i);
        const auto grad = sds_gradient(params, sel, render, provider, prompt,
                                       cfg.fd_step, t, sample_seed);
        for (int k = 0; k < 3; ++k) updates[i][k] = -cfg.step_size * grad[k];
      }
      for (size_t i = 0; i < params.location_raw.size(); ++i) {
        for (int k = 0; k < 3; ++k) {
          const double next = params.location_raw[i][k] + updates[i][k];
          check_divergence(next, "location_raw", cfg.divergence_limit);
          change = std::max(change, std::abs(updates[i][k]));
          params.location_raw[i][k] = next;
        }
      }
      calm_iterations = change < cfg.early_stop_delta ? calm_iterations + 1 : 0;
      if (calm_iterations >= cfg.early_stop_patience) break;
    }
    return params;
  }

  for (size_t i = 0; i < params.location_raw.size(); ++i) {
    optimize_point(static_cast<int>(i));
  }
  return params;
}

// --- placement file ------------------------------------------------------------

nlohmann::json PlacementFile::to_json() const {
  nlohmann::json base_locs = nlohmann::json::array();
  for (const auto& p : params.base_locations) base_locs.push_back({p.x(), p.y(), p.z()});
  nlohmann::json raw_locs = nlohmann::json::array();
  for (const auto& p : params.location_raw) raw_locs.push_back({p.x(), p.y(), p.z()});
  nlohmann::json eff_locs = nlohmann::json::array();
  for (size_t i = 0; i < params.base_locations.size(); ++i) {
    const auto p = effective_location(params, i);
    eff_locs.push_back({p.x(), p.y(), p.z()});
  }
  nlohmann::json rots = nlohmann::json::array();
  for (const auto& r : schedule.rotations) {
    nlohmann::json m = nlohmann::json::array();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) m.push_back(r(i, j));
    rots.push_back(m);
  }
  return {{"schema_version", schema_version},
          {"object_id", object_id},
          {"up_axis", up_axis_name(up_axis)},
          {"tau_s", params.tau_s},
          {"tau_l", params.tau_l},
          {"base_scale", params.base_scale},
          {"base_locations", base_locs},
          {"scale_raw", params.scale_raw},
          {"location_raw", raw_locs},
          {"scale_refined", params.scale_refined},
          {"effective_scale", effective_scale(params)},
          {"effective_locations", eff_locs},
          {"rotation_schedule", rots},
          {"lift_ref", lift_ref},
          {"trace", trace}};
}

PlacementFile PlacementFile::from_json(const nlohmann::json& j) {
  PlacementFile f;
  f.schema_version = j.at("schema_version").get<int>();
  f.object_id = j.at("object_id").get<std::string>();
  f.up_axis = up_axis_from_name(j.at("up_axis").get<std::string>());
  f.params.tau_s = j.at("tau_s").get<double>();
  f.params.tau_l = j.at("tau_l").get<double>();
  f.params.base_scale = j.at("base_scale").get<double>();
  for (const auto& p : j.at("base_locations")) {
    f.params.base_locations.emplace_back(p.at(0).get<double>(), p.at(1).get<double>(),
                                         p.at(2).get<double>());
  }
  f.params.scale_raw = j.at("scale_raw").get<double>();
  for (const auto& p : j.at("location_raw")) {
    f.params.location_raw.emplace_back(p.at(0).get<double>(), p.at(1).get<double>(),
                                       p.at(2).get<double>());
  }
  f.params.scale_refined = j.at("scale_refined").get<bool>();
  for (const auto& m : j.at("rotation_schedule")) {
    Eigen::Matrix3d r;
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 3; ++k) r(i, k) = m.at(i * 3 + k).get<double>();
    f.schedule.rotations.push_back(r);
  }
  f.lift_ref = j.at("lift_ref").get<std::string>();
  f.trace = j.value("trace", nlohmann::json::array());
  return f;
}

void PlacementFile::save(const std::filesystem::path& path) const {
  write_file_text(path, to_json().dump(2) + "\n");
}

PlacementFile PlacementFile::load(const std::filesystem::path& path) {
  try {
    return from_json(nlohmann::json::parse(read_file_text(path)));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::config, "placement file " + path.string() + ": " + e.what());
  }
}

}  // namespace c3v
