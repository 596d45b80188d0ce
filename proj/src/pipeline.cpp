#include "c3v/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <set>

#include "c3v/errors.hpp"
#include "c3v/image_io.hpp"
#include "c3v/util.hpp"

namespace c3v {

// --- manifest ----------------------------------------------------------------

nlohmann::json SceneManifest::to_json() const {
  nlohmann::json objs = nlohmann::json::array();
  for (const auto& o : objects) {
    objs.push_back({{"id", o.id}, {"asset", o.asset}, {"prompt", o.prompt},
                    {"motion_prompt", o.motion_prompt}, {"h3d", o.h3d},
                    {"static", o.is_static}, {"clip", o.clip},
                    {"plan_ref", o.plan_ref}, {"lift_ref", o.lift_ref},
                    {"placement_ref", o.placement_ref}});
  }
  return {{"schema_version", schema_version},
          {"scene", {{"asset", scene_asset}, {"prompt", scene_prompt}}},
          {"objects", objs},
          {"camera_path", camera_path},
          {"frame_count", frame_count},
          {"output", {{"width", output.width}, {"height", output.height},
                      {"background", {output.background.x(), output.background.y(),
                                      output.background.z()}}}},
          {"seed", seed},
          {"asset_dir", asset_dir},
          {"playback_fps", playback_fps}};
}

SceneManifest SceneManifest::from_json(const nlohmann::json& j) {
  SceneManifest m;
  m.schema_version = j.at("schema_version").get<int>();
  m.scene_asset = j.at("scene").at("asset").get<std::string>();
  m.scene_prompt = j.at("scene").value("prompt", std::string{});
  for (const auto& o : j.at("objects")) {
    ManifestObject obj;
    obj.id = o.at("id").get<std::string>();
    obj.asset = o.at("asset").get<std::string>();
    obj.prompt = o.value("prompt", std::string{});
    obj.motion_prompt = o.value("motion_prompt", std::string{});
    obj.h3d = o.value("h3d", 1.0);
    obj.is_static = o.value("static", false);
    obj.clip = o.value("clip", std::string{});
    obj.plan_ref = o.value("plan_ref", std::string{});
    obj.lift_ref = o.value("lift_ref", std::string{});
    obj.placement_ref = o.value("placement_ref", std::string{});
    m.objects.push_back(std::move(obj));
  }
  m.camera_path = j.value("camera_path", std::string{});
  m.frame_count = j.value("frame_count", 24);
  if (j.contains("output")) {
    const auto& out = j["output"];
    m.output.width = out.value("width", 512);
    m.output.height = out.value("height", 512);
    if (out.contains("background")) {
      const auto& bg = out["background"];
      m.output.background = {bg.at(0).get<double>(), bg.at(1).get<double>(),
                             bg.at(2).get<double>()};
    }
  }
  m.seed = j.value("seed", 0ull);
  m.asset_dir = j.value("asset_dir", std::string{});
  m.playback_fps = j.value("playback_fps", 0.0);

  if (m.scene_asset.empty()) throw Error(ErrorKind::config, "manifest: scene asset missing");
  if (m.frame_count < 1) throw Error(ErrorKind::config, "manifest: frame_count must be >= 1");
  std::set<std::string> ids;
  for (const auto& o : m.objects) {
    if (o.id.empty() || !ids.insert(o.id).second) {
      throw Error(ErrorKind::config, "manifest: object ids must be unique and nonempty");
    }
    if (!(o.h3d > 0)) throw Error(ErrorKind::config, "manifest: h3d must be positive");
  }
  return m;
}

void SceneManifest::save(const std::filesystem::path& path) const {
  write_file_text(path, to_json().dump(2) + "\n");
}

SceneManifest SceneManifest::load(const std::filesystem::path& path) {
  try {
    return from_json(nlohmann::json::parse(read_file_text(path)));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::config, "manifest " + path.string() + ": " + e.what());
  }
}

SceneManifest swap_asset(const SceneManifest& manifest, const std::string& object_id,
                         SwapKind kind, const std::string& new_value, bool replan) {
  SceneManifest out = manifest;
  if (kind == SwapKind::scene_asset) {
    out.scene_asset = new_value;
    for (auto& o : out.objects) {
      o.plan_ref.clear();
      o.lift_ref.clear();
      o.placement_ref.clear();
    }
    return out;
  }
  auto it = std::find_if(out.objects.begin(), out.objects.end(),
                         [&](const ManifestObject& o) { return o.id == object_id; });
  if (it == out.objects.end()) {
    throw Error(ErrorKind::config, "swap_asset: unknown object id " + object_id);
  }
  if (kind == SwapKind::object_asset) {
    it->asset = new_value;
  } else {
    it->motion_prompt = new_value;
    it->clip.clear();  // re-retrieved from the new prompt
  }
  if (replan) {
    it->plan_ref.clear();
    it->lift_ref.clear();
    it->placement_ref.clear();
  }
  return out;
}

// --- clips ---------------------------------------------------------------------

namespace {

Gaussian3D apply_delta(const Gaussian3D& base, const Gaussian3D& delta) {
  Gaussian3D out = base;
  out.position += delta.position;
  out.log_scale += delta.log_scale;
  out.opacity_logit += delta.opacity_logit;
  // Color deltas store 0.5 as "no change" (the PLY DC mapping's zero point).
  out.color = (base.color + delta.color - Eigen::Vector3d::Constant(0.5))
                  .cwiseMax(0.0)
                  .cwiseMin(1.0);
  out.rotation = (delta.rotation * base.rotation).normalized();
  return out;
}

}  // namespace

AnimationClip load_clip(const std::filesystem::path& dir, const GaussianCloud* base) {
  const auto descriptor_path = dir / "clip.json";
  nlohmann::json desc;
  try {
    desc = nlohmann::json::parse(read_file_text(descriptor_path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::config, "clip " + dir.string() + ": " + e.what());
  }

  AnimationClip clip;
  clip.id = dir.filename().string();
  clip.tags = desc.value("tags", std::vector<std::string>{});
  clip.fps = desc.value("fps", 0.0);
  clip.delta_mode = desc.value("mode", std::string("full")) == "delta";

  std::vector<std::filesystem::path> frame_files;
  if (desc.contains("frames")) {
    for (const auto& f : desc["frames"]) frame_files.push_back(dir / f.get<std::string>());
  } else {
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      if (entry.path().extension() == ".ply") frame_files.push_back(entry.path());
    }
    std::sort(frame_files.begin(), frame_files.end());
  }
  if (frame_files.empty()) {
    throw Error(ErrorKind::config, "clip " + dir.string() + " has no frames");
  }

  for (const auto& file : frame_files) {
    GaussianCloud frame = load_gaussian_ply(file);
    if (clip.delta_mode) {
      if (base == nullptr) {
        throw Error(ErrorKind::config, "clip " + dir.string() + ": delta mode needs a base cloud");
      }
      if (frame.size() != base->size()) {
        throw Error(ErrorKind::config,
                    "clip " + dir.string() + ": delta frame count mismatch with base");
      }
      GaussianCloud resolved;
      resolved.label = base->label;
      resolved.gaussians.reserve(base->size());
      for (size_t i = 0; i < base->size(); ++i) {
        resolved.gaussians.push_back(apply_delta(base->gaussians[i], frame.gaussians[i]));
      }
      clip.frames.push_back(std::move(resolved));
    } else {
      clip.frames.push_back(std::move(frame));
    }
  }
  if (clip.delta_mode) {
    for (const auto& f : clip.frames) {
      if (f.size() != clip.frames.front().size()) {
        throw Error(ErrorKind::config, "clip " + dir.string() + ": inconsistent frame sizes");
      }
    }
  }
  return clip;
}

// --- camera path ----------------------------------------------------------------

Camera CameraPath::at(double u) const {
  if (keys.empty()) throw Error(ErrorKind::config, "camera path has no keyframes");
  if (keys.size() == 1 || u <= keys.front().time) return keys.front().camera;
  if (u >= keys.back().time) return keys.back().camera;

  size_t hi = 1;
  while (hi < keys.size() && keys[hi].time < u) ++hi;
  const CameraKeyframe& a = keys[hi - 1];
  const CameraKeyframe& b = keys[hi];
  if (mode == Mode::hold) return a.camera;

  const double t = (u - a.time) / (b.time - a.time);
  const Eigen::Vector3d center = (1.0 - t) * a.camera.center() + t * b.camera.center();
  const Eigen::Quaterniond qa(a.camera.world_to_cam_rotation);
  const Eigen::Quaterniond qb(b.camera.world_to_cam_rotation);
  const Eigen::Matrix3d r = qa.slerp(t, qb).normalized().toRotationMatrix();

  Camera cam = a.camera;  // intrinsics held from the first keyframe
  cam.world_to_cam_rotation = r;
  cam.world_to_cam_translation = -(r * center);
  return cam;
}

nlohmann::json CameraPath::to_json() const {
  nlohmann::json ks = nlohmann::json::array();
  for (const auto& k : keys) {
    ks.push_back({{"time", k.time}, {"camera", camera_to_json(k.camera)}});
  }
  return {{"schema_version", 1},
          {"mode", mode == Mode::hold ? "hold" : "linear_slerp"},
          {"keyframes", ks}};
}

CameraPath CameraPath::from_json(const nlohmann::json& j) {
  CameraPath path;
  const std::string mode = j.value("mode", std::string("linear_slerp"));
  if (mode == "hold") path.mode = Mode::hold;
  else if (mode == "linear_slerp") path.mode = Mode::linear_slerp;
  else throw Error(ErrorKind::config, "camera path: unknown mode " + mode);

  for (const auto& k : j.at("keyframes")) {
    CameraKeyframe key;
    key.time = k.at("time").get<double>();
    key.camera = camera_from_json(k.at("camera"));
    path.keys.push_back(key);
  }
  if (path.keys.empty()) throw Error(ErrorKind::config, "camera path: no keyframes");
  for (size_t i = 0; i < path.keys.size(); ++i) {
    const double t = path.keys[i].time;
    if (t < 0.0 || t > 1.0 || (i > 0 && t <= path.keys[i - 1].time)) {
      throw Error(ErrorKind::config,
                  "camera path: times must be strictly increasing within [0,1]");
    }
  }
  const Camera& first = path.keys.front().camera;
  for (const auto& k : path.keys) {
    const Camera& c = k.camera;
    if (c.fx != first.fx || c.fy != first.fy || c.cx != first.cx || c.cy != first.cy ||
        c.width != first.width || c.height != first.height) {
      throw Error(ErrorKind::config, "camera path: varying intrinsics are rejected");
    }
  }
  return path;
}

CameraPath CameraPath::load(const std::filesystem::path& path) {
  try {
    return from_json(nlohmann::json::parse(read_file_text(path)));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::config, "camera path " + path.string() + ": " + e.what());
  }
}

void CameraPath::save(const std::filesystem::path& path) const {
  write_file_text(path, to_json().dump(2) + "\n");
}

// --- asset library ----------------------------------------------------------------

AssetLibrary::AssetLibrary(const std::filesystem::path& root) : root_(root) {
  if (!std::filesystem::is_directory(root_)) return;
  for (const auto& entry : std::filesystem::directory_iterator(root_)) {
    if (!entry.is_directory()) continue;
    const auto descriptor = entry.path() / "clip.json";
    if (!std::filesystem::exists(descriptor)) continue;
    ClipEntry clip;
    clip.id = entry.path().filename().string();
    clip.dir = entry.path();
    try {
      const auto desc = nlohmann::json::parse(read_file_text(descriptor));
      clip.tags = desc.value("tags", std::vector<std::string>{});
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::config, "clip " + descriptor.string() + ": " + e.what());
    }
    clips_.push_back(std::move(clip));
  }
  std::sort(clips_.begin(), clips_.end(),
            [](const ClipEntry& a, const ClipEntry& b) { return a.id < b.id; });
}

std::filesystem::path AssetLibrary::resolve(const std::string& relative) const {
  return root_ / relative;
}

bool is_static_motion(const std::string& motion_prompt) {
  const auto tokens = tokenize(motion_prompt);
  if (tokens.empty()) return true;
  static const std::set<std::string> still_words = {"stand", "still", "static", "idle"};
  for (const auto& t : tokens) {
    if (!still_words.count(stem(t))) return false;
  }
  return true;
}

AnimationClip retrieve_motion(const std::string& motion_prompt, const AssetLibrary& library,
                              const GaussianCloud* delta_base) {
  std::set<std::string> prompt_stems;
  for (const auto& t : tokenize(motion_prompt)) prompt_stems.insert(stem(t));

  double best_score = 0.0;
  const AssetLibrary::ClipEntry* best = nullptr;
  for (const auto& clip : library.clips()) {
    std::set<std::string> tag_stems;
    for (const auto& tag : clip.tags) {
      for (const auto& t : tokenize(tag)) tag_stems.insert(stem(t));
    }
    if (tag_stems.empty()) continue;
    size_t overlap = 0;
    for (const auto& s : tag_stems) overlap += prompt_stems.count(s);
    const double score = static_cast<double>(overlap) / tag_stems.size();
    if (score > best_score) {  // ties keep the lexicographically first id
      best_score = score;
      best = &clip;
    }
  }
  if (best == nullptr || best_score <= 0.0) {
    throw Error(ErrorKind::config, "motion-not-found: no clip matches '" + motion_prompt + "'");
  }
  return load_clip(best->dir, delta_base);
}

// --- object preparation and frame composition ----------------------------------------

PreparedObject prepare_object(const GaussianCloud& asset, UpAxis up) {
  if (asset.empty()) throw Error(ErrorKind::config, "object cloud is empty");
  PreparedObject out;
  const Bounds3D bounds = position_bounds(asset);
  out.original_center = bounds.center();
  const Eigen::Vector3d extent = bounds.extent();
  const Eigen::Vector3d axis = up_vector(up).cwiseAbs();
  out.natural_height = extent.dot(axis);
  if (!(out.natural_height > 1e-9)) {
    throw Error(ErrorKind::config, "object cloud is flat along the up axis");
  }
  out.base = asset;
  for (auto& g : out.base.gaussians) g.position -= out.original_center;
  return out;
}

void attach_clip(PreparedObject& obj, const AnimationClip& clip) {
  obj.clip_frames.clear();
  for (const auto& frame : clip.frames) {
    GaussianCloud centered = frame;
    for (auto& g : centered.gaussians) g.position -= obj.original_center;
    obj.clip_frames.push_back(std::move(centered));
  }
}

Framebuffer compose_frame(const GaussianCloud& scene,
                          std::span<const ObjectInstance> objects, const Camera& cam,
                          const Eigen::Vector3d& background,
                          const RasterizeSettings& settings) {
  std::vector<SceneItem> items;
  items.reserve(objects.size() + 1);
  items.push_back({&scene, RigidTransform::identity()});
  for (const auto& obj : objects) {
    items.push_back({obj.cloud, obj.placement});
  }
  return rasterize(cam, items, background, settings);
}

size_t clip_frame_index(size_t frame, size_t frame_count, size_t clip_length,
                        double playback_fps, double clip_fps) {
  if (clip_length == 0) return 0;
  size_t idx;
  if (playback_fps > 0 && clip_fps > 0) {
    idx = static_cast<size_t>(std::llround(frame / playback_fps * clip_fps));
  } else {
    idx = frame * clip_length / std::max<size_t>(frame_count, 1);
  }
  return std::min(idx, clip_length - 1);  // hold the last frame on overrun
}

// --- job runner -------------------------------------------------------------------

namespace {

std::filesystem::path resolve_near(const std::filesystem::path& anchor_file,
                                   const std::string& relative) {
  const std::filesystem::path p(relative);
  if (p.is_absolute()) return p;
  return anchor_file.parent_path() / p;
}

std::string prompt_key(const ManifestObject& obj, DirectorTask task) {
  if (task == DirectorTask::scale) return obj.prompt;
  return obj.prompt + " :: " + obj.motion_prompt;
}

}  // namespace

JobRunner::JobRunner(JobConfig cfg)
    : cfg_(std::move(cfg)),
      manifest_(SceneManifest::load(cfg_.manifest_path)),
      library_(manifest_.asset_dir.empty()
                   ? cfg_.manifest_path.parent_path()
                   : resolve_near(cfg_.manifest_path, manifest_.asset_dir)) {
  if (manifest_.camera_path.empty()) {
    throw Error(ErrorKind::config, "manifest: camera_path is required");
  }
  camera_path_ = CameraPath::load(resolve_near(cfg_.manifest_path, manifest_.camera_path));
}

int JobRunner::frame_count() const {
  return cfg_.frame_count > 0 ? cfg_.frame_count : manifest_.frame_count;
}

uint64_t JobRunner::seed() const {
  return cfg_.seed >= 0 ? static_cast<uint64_t>(cfg_.seed) : manifest_.seed;
}

std::filesystem::path JobRunner::plan_path(const ManifestObject& obj) const {
  if (!obj.plan_ref.empty()) return resolve_near(cfg_.manifest_path, obj.plan_ref);
  return cfg_.out_dir / "plan" / (obj.id + ".json");
}

std::filesystem::path JobRunner::lift_path(const ManifestObject& obj) const {
  if (!obj.lift_ref.empty()) return resolve_near(cfg_.manifest_path, obj.lift_ref);
  return cfg_.out_dir / "lift" / (obj.id + ".json");
}

std::filesystem::path JobRunner::placement_path(const ManifestObject& obj) const {
  if (!obj.placement_ref.empty()) return resolve_near(cfg_.manifest_path, obj.placement_ref);
  return cfg_.out_dir / "placement" / (obj.id + ".json");
}

Camera JobRunner::camera_at(double u) const {
  Camera cam = camera_path_.at(u);
  if (cfg_.res_w > 0 && cfg_.res_h > 0 &&
      (cfg_.res_w != cam.width || cfg_.res_h != cam.height)) {
    const double sx = static_cast<double>(cfg_.res_w) / cam.width;
    const double sy = static_cast<double>(cfg_.res_h) / cam.height;
    cam.fx *= sx;
    cam.cx *= sx;
    cam.fy *= sy;
    cam.cy *= sy;
    cam.width = cfg_.res_w;
    cam.height = cfg_.res_h;
  }
  cam.validate();
  return cam;
}

Camera JobRunner::working_camera() const { return camera_at(0.0); }

std::unique_ptr<Director> JobRunner::make_director() const {
  if (cfg_.director_mode == "mock") {
    if (cfg_.fixtures_path.empty()) {
      throw Error(ErrorKind::config, "mock director requires --fixtures");
    }
    return std::make_unique<MockDirector>(cfg_.fixtures_path);
  }
  if (cfg_.director_mode == "live") {
    if (cfg_.director_url.empty()) {
      throw Error(ErrorKind::config,
                  "live director requires C3V_DIRECTOR_URL to be set");
    }
    return std::make_unique<HttpDirector>(cfg_.director_url, cfg_.director_key);
  }
  if (cfg_.director_mode == "replay") {
    if (cfg_.replay_log.empty()) {
      throw Error(ErrorKind::config, "replay director requires --audit-replay");
    }
    return std::make_unique<ReplayDirector>(cfg_.replay_log);
  }
  throw Error(ErrorKind::config, "unknown director mode: " + cfg_.director_mode);
}

std::unique_ptr<ScoreProvider> JobRunner::make_provider(int width, int height) const {
  if (cfg_.provider == "zero") return std::make_unique<ZeroProvider>();
  if (cfg_.provider == "pull") {
    if (cfg_.provider_target.empty()) {
      throw Error(ErrorKind::config, "pull provider requires --provider-target");
    }
    Framebuffer target = read_framebuffer_raw(cfg_.provider_target);
    if (target.width != width || target.height != height) {
      throw Error(ErrorKind::config, "provider target resolution mismatch");
    }
    return std::make_unique<PullToTargetProvider>(std::move(target), cfg_.provider_gain);
  }
  if (cfg_.provider == "silhouette") {
    if (cfg_.provider_target.empty()) {
      throw Error(ErrorKind::config, "silhouette provider requires --provider-target");
    }
    Framebuffer target = read_framebuffer_raw(cfg_.provider_target);
    if (target.width != width || target.height != height) {
      throw Error(ErrorKind::config, "provider target resolution mismatch");
    }
    return std::make_unique<SilhouetteProvider>(target.alpha, width, height,
                                                cfg_.provider_gain);
  }
  if (cfg_.provider == "ground") {
    const int horizon = cfg_.provider_horizon >= 0 ? cfg_.provider_horizon : height / 2;
    return std::make_unique<GroundContactProvider>(horizon, cfg_.provider_gain);
  }
  if (cfg_.provider == "remote") {
    if (cfg_.director_url.empty()) {
      throw Error(ErrorKind::config, "remote provider requires C3V_DIRECTOR_URL");
    }
    return std::make_unique<RemoteProvider>(cfg_.director_url, cfg_.director_key);
  }
  throw Error(ErrorKind::config, "unknown score provider: " + cfg_.provider);
}

const GaussianCloud& JobRunner::scene_cloud() {
  if (!scene_) {
    scene_ = load_gaussian_ply(library_.resolve(manifest_.scene_asset), "scene");
    if (scene_->empty()) throw Error(ErrorKind::config, "scene cloud is empty");
  }
  return *scene_;
}

DepthMap JobRunner::scene_depth(const Camera& cam) {
  if (!cfg_.external_depth.empty()) {
    DepthMap dm = read_depth_pfm(cfg_.external_depth);
    if (dm.width != cam.width || dm.height != cam.height) {
      throw Error(ErrorKind::config, "external depth resolution mismatch");
    }
    return dm;
  }
  const SceneItem item{&scene_cloud(), RigidTransform::identity()};
  return render_depth(cam, std::span<const SceneItem>(&item, 1));
}

void JobRunner::log(const std::string& line) const {
  std::cout << line << "\n";
}

// --- stages ---------------------------------------------------------------------

void JobRunner::plan() {
  const Camera cam = working_camera();
  const GaussianCloud& scene = scene_cloud();
  const SceneItem item{&scene, RigidTransform::identity()};
  const Framebuffer scene_render =
      rasterize(cam, std::span<const SceneItem>(&item, 1), manifest_.output.background);
  const auto scene_png = encode_png_rgb8(cam.width, cam.height, to_srgb8(scene_render));

  auto director = make_director();
  std::unique_ptr<AuditLog> audit;
  std::string audit_ref;
  if (cfg_.director_mode == "live" || cfg_.audit_mock) {
    const auto audit_path = cfg_.out_dir / "audit" / "director_audit.jsonl";
    audit = std::make_unique<AuditLog>(audit_path);
    audit_ref = "audit/director_audit.jsonl";
  }

  for (const auto& obj : manifest_.objects) {
    DirectorSession session(*director, cam.width, cam.height, audit.get());
    PlanFile plan;
    plan.object_id = obj.id;
    plan.object_prompt = obj.prompt;
    plan.motion_prompt = obj.motion_prompt;
    plan.is_static = obj.is_static || is_static_motion(obj.motion_prompt);
    plan.image_width = cam.width;
    plan.image_height = cam.height;
    plan.camera = cam;
    plan.h3d = obj.h3d;
    plan.audit_ref = audit_ref;

    plan.scale = session.estimate_scale(prompt_key(obj, DirectorTask::scale), scene_png);
    plan.endpoints = session.estimate_endpoints(
        prompt_key(obj, DirectorTask::endpoints), prompt_key(obj, DirectorTask::endpoints),
        scene_png, plan.scale, /*moving=*/!plan.is_static);

    if (plan.is_static) {
      plan.path = {plan.endpoints.start_px};  // single location, no path query
    } else {
      const PathEstimate raw = session.estimate_path(
          prompt_key(obj, DirectorTask::path), scene_png, plan.scale, plan.endpoints,
          cfg_.n_path_points);
      std::vector<std::string> flags;
      const PathEstimate validated = validate_trajectory(
          raw, cam.width, cam.height, plan.scale.bbox, plan.endpoints, &flags);
      plan.flags = flags;
      plan.path = make_trajectory2d(validated, plan.endpoints, plan.scale.bbox).points;
    }
    for (const auto& f : session.flags()) plan.flags.push_back(f);

    const auto path = plan_path(obj);
    plan.save(path);
    log("plan: " + obj.id + " -> " + path.string());
  }
}

void JobRunner::lift() {
  for (const auto& obj : manifest_.objects) {
    const auto plan_file = plan_path(obj);
    if (!std::filesystem::exists(plan_file)) {
      throw Error(ErrorKind::config, "plan file missing: " + plan_file.string() +
                                         " (run the plan stage first)");
    }
    const PlanFile plan = PlanFile::load(plan_file);
    const Camera& cam = plan.camera;
    const DepthMap depth = scene_depth(cam);

    LiftOptions opts;
    opts.external_depth = !cfg_.external_depth.empty();
    opts.external_depth_scale = cfg_.external_depth_scale;

    Trajectory2D traj2d;
    traj2d.points = plan.path;
    traj2d.bbox = plan.scale.bbox;

    const Trajectory3D traj3d =
        lift_trajectory(cam, traj2d, depth, plan.h3d, cfg_.up_axis, opts);

    LiftFile lift;
    lift.object_id = obj.id;
    lift.up_axis = cfg_.up_axis;
    lift.h3d = plan.h3d;
    lift.points = traj3d.points;
    lift.depth_sources = traj3d.depth_sources;
    lift.plan_ref = plan_file.filename().string();

    // Similar-triangles height target at the starting point's depth.
    const Eigen::Vector3d start_base =
        traj3d.points.front() - 0.5 * plan.h3d * up_vector(cfg_.up_axis);
    const double start_depth = cam.to_camera(start_base).z();
    lift.base_scale = derive_base_scale(plan.scale.bbox, start_depth, cam.fy);

    double max_err = 0.0;
    for (size_t i = 0; i < traj3d.points.size(); ++i) {
      const Eigen::Vector3d base =
          traj3d.points[i] - 0.5 * plan.h3d * up_vector(cfg_.up_axis);
      const auto proj = project_point(cam, base);
      const Eigen::Vector2d anchor = anchor_pixel(plan.path[i], plan.scale.bbox);
      max_err = std::max(max_err, (proj.pixel - anchor).norm());
    }
    lift.reproj_error_px = max_err;

    const auto out_path = lift_path(obj);
    lift.save(out_path);
    log("lift: " + obj.id + " -> " + out_path.string() +
        " (reprojection error " + std::to_string(max_err) + " px)");
  }
}

void JobRunner::refine() {
  const GaussianCloud& scene = scene_cloud();
  const double scene_radius = bounding_sphere_radius(scene);

  size_t object_index = 0;
  for (const auto& obj : manifest_.objects) {
    const auto lift_file = lift_path(obj);
    if (!std::filesystem::exists(lift_file)) {
      throw Error(ErrorKind::config, "lift file missing: " + lift_file.string() +
                                         " (run the lift stage first)");
    }
    const LiftFile lift = LiftFile::load(lift_file);
    const PlanFile plan = PlanFile::load(plan_path(obj));
    const Camera& cam = plan.camera;

    const GaussianCloud asset = load_gaussian_ply(library_.resolve(obj.asset), obj.id);
    const PreparedObject prepared = prepare_object(asset, cfg_.up_axis);

    const double tau_s = cfg_.tau_s >= 0 ? cfg_.tau_s : 0.4 * lift.base_scale;
    const double tau_l = cfg_.tau_l >= 0 ? cfg_.tau_l : 0.3 * lift.h3d;
    PlacementParams params = PlacementParams::from_lift(lift, tau_s, tau_l);

    RefineConfig rc = cfg_.refine;
    if (!(rc.fd_step > 0)) rc.fd_step = 1e-3 * std::max(scene_radius, 1e-6);
    rc.seed = seed() + object_index;

    auto provider = make_provider(cam.width, cam.height);
    const auto render_fn = [&](const PlacementParams& p, int active) {
      RigidTransform t;
      t.uniform_scale = std::max(effective_scale(p), 1e-9) / prepared.natural_height;
      t.translation = effective_location(p, static_cast<size_t>(active));
      const SceneItem items[2] = {{&scene, RigidTransform::identity()},
                                  {&prepared.base, t}};
      return rasterize(cam, std::span<const SceneItem>(items, 2),
                       manifest_.output.background);
    };

    RefineTrace trace;
    params = refine_scale(params, render_fn, *provider, obj.prompt, rc, &trace);
    params = refine_locations(params, render_fn, *provider, obj.prompt, rc, &trace);

    PlacementFile placement;
    placement.object_id = obj.id;
    placement.up_axis = cfg_.up_axis;
    placement.params = params;
    if (params.base_locations.size() >= 2) {
      placement.schedule = build_rotation_schedule(params, cfg_.up_axis);
    } else {
      placement.schedule.rotations = {Eigen::Matrix3d::Identity()};
    }
    placement.lift_ref = lift_file.filename().string();
    placement.trace = trace.to_json();

    const auto out_path = placement_path(obj);
    placement.save(out_path);
    log("refine: " + obj.id + " -> " + out_path.string() + " (" +
        std::to_string(trace.entries.size()) + " iterations)");
    ++object_index;
  }
}

void JobRunner::render() {
  const GaussianCloud& scene = scene_cloud();
  const int frames = frame_count();

  struct RenderObject {
    PreparedObject prepared;
    PlacementFile placement;
    ResampledPath path;
    double scale_factor = 1.0;
  };
  std::vector<RenderObject> render_objects;

  for (const auto& obj : manifest_.objects) {
    const auto placement_file = placement_path(obj);
    if (!std::filesystem::exists(placement_file)) {
      throw Error(ErrorKind::config, "placement file missing: " + placement_file.string() +
                                         " (run the refine stage first)");
    }
    RenderObject ro;
    ro.placement = PlacementFile::load(placement_file);

    const GaussianCloud asset = load_gaussian_ply(library_.resolve(obj.asset), obj.id);
    ro.prepared = prepare_object(asset, ro.placement.up_axis);
    if (!obj.clip.empty()) {
      attach_clip(ro.prepared, load_clip(library_.resolve(obj.clip), &asset));
    } else if (!obj.is_static && !is_static_motion(obj.motion_prompt)) {
      attach_clip(ro.prepared, retrieve_motion(obj.motion_prompt, library_, &asset));
    }

    const auto& params = ro.placement.params;
    Trajectory3D traj;
    traj.up_axis = ro.placement.up_axis;
    for (size_t i = 0; i < params.base_locations.size(); ++i) {
      traj.points.push_back(effective_location(params, i));
    }
    if (traj.points.size() >= 2 && frames >= 2) {
      ro.path = resample_path(traj, frames, cfg_.resample_mode);
    } else {
      ro.path.positions.assign(std::max(frames, 1), traj.points.front());
      ro.path.segments.assign(std::max(frames, 1), 0);
    }
    ro.scale_factor =
        std::max(effective_scale(params), 1e-9) / ro.prepared.natural_height;
    render_objects.push_back(std::move(ro));
  }

  std::filesystem::create_directories(frames_dir());
  nlohmann::json frame_records = nlohmann::json::array();
  for (int f = 0; f < frames; ++f) {
    const double u = frames == 1 ? 0.0 : static_cast<double>(f) / (frames - 1);
    const Camera cam = camera_at(u);

    std::vector<ObjectInstance> instances;
    for (const auto& ro : render_objects) {
      ObjectInstance inst;
      if (!ro.prepared.clip_frames.empty()) {
        const size_t ci = clip_frame_index(
            static_cast<size_t>(f), static_cast<size_t>(frames),
            ro.prepared.clip_frames.size(), manifest_.playback_fps, 0.0);
        inst.cloud = &ro.prepared.clip_frames[ci];
      } else {
        inst.cloud = &ro.prepared.base;
      }
      const int seg = ro.path.segments[static_cast<size_t>(f)];
      const auto& rots = ro.placement.schedule.rotations;
      inst.placement.rotation = rots[std::min<size_t>(seg, rots.size() - 1)];
      inst.placement.uniform_scale = ro.scale_factor;
      inst.placement.translation = ro.path.positions[static_cast<size_t>(f)];
      instances.push_back(inst);
    }

    const Framebuffer fb =
        compose_frame(scene, instances, cam, manifest_.output.background);
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%05d.png", f);
    const auto frame_path = frames_dir() / name;
    write_framebuffer_png(frame_path, fb);
    frame_records.push_back({{"file", std::string("frames/") + name},
                             {"sha256", sha256_file_hex(frame_path)}});
  }

  // Run manifest: content hashes of every input for reproducibility audits.
  nlohmann::json inputs = nlohmann::json::object();
  inputs["manifest"] = sha256_file_hex(cfg_.manifest_path);
  inputs["scene_asset"] = sha256_file_hex(library_.resolve(manifest_.scene_asset));
  inputs["camera_path"] =
      sha256_file_hex(resolve_near(cfg_.manifest_path, manifest_.camera_path));
  for (const auto& obj : manifest_.objects) {
    inputs["asset:" + obj.id] = sha256_file_hex(library_.resolve(obj.asset));
    inputs["plan:" + obj.id] = sha256_file_hex(plan_path(obj));
    inputs["lift:" + obj.id] = sha256_file_hex(lift_path(obj));
    inputs["placement:" + obj.id] = sha256_file_hex(placement_path(obj));
  }
  if (!cfg_.fixtures_path.empty()) {
    inputs["fixtures"] = sha256_file_hex(cfg_.fixtures_path);
  }
  nlohmann::json run{{"schema_version", 1},
                     {"seed", seed()},
                     {"frame_count", frames},
                     {"resolution", {camera_at(0).width, camera_at(0).height}},
                     {"director_mode", cfg_.director_mode},
                     {"provider", cfg_.provider},
                     {"inputs", inputs},
                     {"frames", frame_records}};
  write_file_text(cfg_.out_dir / "run_manifest.json", run.dump(2) + "\n");
  log("render: " + std::to_string(frames) + " frames -> " + frames_dir().string());
}

void JobRunner::validate() {
  const auto scene_file = library_.resolve(manifest_.scene_asset);
  if (!std::filesystem::exists(scene_file)) {
    throw Error(ErrorKind::config, "scene asset missing: " + scene_file.string());
  }
  for (const auto& obj : manifest_.objects) {
    const auto asset = library_.resolve(obj.asset);
    if (!std::filesystem::exists(asset)) {
      throw Error(ErrorKind::config, "object asset missing: " + asset.string());
    }
    if (!obj.clip.empty() &&
        !std::filesystem::exists(library_.resolve(obj.clip) / "clip.json")) {
      throw Error(ErrorKind::config, "clip missing: " + obj.clip);
    }
  }
  working_camera();  // validates path + intrinsics + resolution override
  log("validate: manifest ok (" + std::to_string(manifest_.objects.size()) +
      " objects, " + std::to_string(frame_count()) + " frames)");
}

// --- stage cache -------------------------------------------------------------------

namespace {

std::string hash_or_missing(const std::filesystem::path& p) {
  return std::filesystem::exists(p) ? sha256_file_hex(p) : "missing";
}

}  // namespace

std::string JobRunner::stage_digest(const std::string& stage) const {
  nlohmann::json j;
  j["stage"] = stage;
  j["manifest"] = hash_or_missing(cfg_.manifest_path);
  j["scene_asset"] = hash_or_missing(library_.resolve(manifest_.scene_asset));
  j["camera_path"] = hash_or_missing(resolve_near(cfg_.manifest_path, manifest_.camera_path));
  j["resolution"] = {cfg_.res_w, cfg_.res_h};
  j["up_axis"] = up_axis_name(cfg_.up_axis);

  if (stage == "plan") {
    j["director_mode"] = cfg_.director_mode;
    j["n_path_points"] = cfg_.n_path_points;
    if (!cfg_.fixtures_path.empty()) j["fixtures"] = hash_or_missing(cfg_.fixtures_path);
    if (!cfg_.replay_log.empty()) j["replay"] = hash_or_missing(cfg_.replay_log);
  } else if (stage == "lift") {
    for (const auto& obj : manifest_.objects) {
      j["plan:" + obj.id] = hash_or_missing(plan_path(obj));
    }
    j["external_depth"] = cfg_.external_depth.string();
    j["external_depth_scale"] = cfg_.external_depth_scale;
  } else if (stage == "refine") {
    for (const auto& obj : manifest_.objects) {
      j["lift:" + obj.id] = hash_or_missing(lift_path(obj));
      j["asset:" + obj.id] = hash_or_missing(library_.resolve(obj.asset));
    }
    j["provider"] = cfg_.provider;
    j["provider_gain"] = cfg_.provider_gain;
    j["provider_horizon"] = cfg_.provider_horizon;
    if (!cfg_.provider_target.empty()) {
      j["provider_target"] = hash_or_missing(cfg_.provider_target);
    }
    j["tau_s"] = cfg_.tau_s;
    j["tau_l"] = cfg_.tau_l;
    j["seed"] = seed();
    j["step_size"] = cfg_.refine.step_size;
    j["max_iterations"] = cfg_.refine.max_iterations;
    j["fd_step"] = cfg_.refine.fd_step;
  } else if (stage == "render") {
    for (const auto& obj : manifest_.objects) {
      j["placement:" + obj.id] = hash_or_missing(placement_path(obj));
      j["asset:" + obj.id] = hash_or_missing(library_.resolve(obj.asset));
    }
    j["frame_count"] = frame_count();
    j["playback_fps"] = manifest_.playback_fps;
    j["resample"] = cfg_.resample_mode == ResampleMode::constant_speed
                        ? "constant_speed"
                        : "uniform_parameter";
  }
  return sha256_hex(j.dump());
}

bool JobRunner::stage_cached(const std::string& stage,
                             const std::vector<std::filesystem::path>& outputs) {
  const auto cache_file = cfg_.out_dir / "stage_cache.json";
  if (!std::filesystem::exists(cache_file)) return false;
  nlohmann::json cache;
  try {
    cache = nlohmann::json::parse(read_file_text(cache_file));
  } catch (const nlohmann::json::exception&) {
    return false;
  }
  if (cache.value(stage, std::string{}) != stage_digest(stage)) return false;
  for (const auto& out : outputs) {
    if (!std::filesystem::exists(out)) return false;
  }
  return true;
}

void JobRunner::store_stage(const std::string& stage) {
  const auto cache_file = cfg_.out_dir / "stage_cache.json";
  nlohmann::json cache = nlohmann::json::object();
  if (std::filesystem::exists(cache_file)) {
    try {
      cache = nlohmann::json::parse(read_file_text(cache_file));
    } catch (const nlohmann::json::exception&) {
      cache = nlohmann::json::object();
    }
  }
  cache[stage] = stage_digest(stage);
  write_file_text(cache_file, cache.dump(2) + "\n");
}

void JobRunner::compose() {
  auto outputs_for = [&](const std::string& stage) {
    std::vector<std::filesystem::path> outs;
    for (const auto& obj : manifest_.objects) {
      if (stage == "plan") outs.push_back(plan_path(obj));
      if (stage == "lift") outs.push_back(lift_path(obj));
      if (stage == "refine") outs.push_back(placement_path(obj));
    }
    if (stage == "render") {
      const int frames = frame_count();
      for (int f = 0; f < frames; ++f) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%05d.png", f);
        outs.push_back(frames_dir() / name);
      }
      outs.push_back(cfg_.out_dir / "run_manifest.json");
    }
    return outs;
  };

  const std::pair<std::string, void (JobRunner::*)()> stages[] = {
      {"plan", &JobRunner::plan},
      {"lift", &JobRunner::lift},
      {"refine", &JobRunner::refine},
      {"render", &JobRunner::render},
  };
  for (const auto& [name, fn] : stages) {
    if (!cfg_.force && stage_cached(name, outputs_for(name))) {
      log(name + ": cached");
      continue;
    }
    (this->*fn)();
    store_stage(name);
  }
}

}  // namespace c3v
