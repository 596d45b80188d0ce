#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "c3v/composer.hpp"
#include "c3v/director.hpp"
#include "c3v/lifting.hpp"
#include "c3v/ply_io.hpp"
#include "c3v/rasterizer.hpp"

namespace c3v {

struct ManifestObject {
  std::string id;
  std::string asset;           // splat PLY, relative to the asset root
  std::string prompt;          // y2
  std::string motion_prompt;   // y3
  double h3d = 1.0;            // world height of the object's box
  bool is_static = false;
  std::string clip;            // explicit clip id; empty = retrieve by motion prompt
  std::string plan_ref;        // pinned stage files; empty = produced under out/
  std::string lift_ref;
  std::string placement_ref;
};

struct OutputSettings {
  int width = 512;
  int height = 512;
  Eigen::Vector3d background = Eigen::Vector3d::Zero();
};

struct SceneManifest {
  int schema_version = 1;
  std::string scene_asset;
  std::string scene_prompt;
  std::vector<ManifestObject> objects;
  std::string camera_path;
  int frame_count = 24;
  OutputSettings output;
  uint64_t seed = 0;
  std::string asset_dir;  // empty = manifest directory
  double playback_fps = 0;  // 0 = stretch clips over the timeline

  nlohmann::json to_json() const;
  static SceneManifest from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static SceneManifest load(const std::filesystem::path& path);
};

enum class SwapKind { scene_asset, object_asset, motion_prompt };

// Concept editing: a scene swap invalidates every object's pinned stage
// files (forcing re-planning); object appearance/motion swaps keep them
// unless replan is requested.
SceneManifest swap_asset(const SceneManifest& manifest, const std::string& object_id,
                         SwapKind kind, const std::string& new_value, bool replan);

// ---------------------------------------------------------------------------

struct AnimationClip {
  std::string id;
  std::vector<GaussianCloud> frames;  // materialized, delta mode resolved
  std::vector<std::string> tags;
  double fps = 0;
  bool delta_mode = false;
};

// Clip directory: per-frame PLYs plus clip.json {tags, fps, mode, frames?}.
// Delta frames add their fields onto the base cloud (quaternions compose).
AnimationClip load_clip(const std::filesystem::path& dir, const GaussianCloud* base);

struct CameraKeyframe {
  double time = 0;  // normalized, strictly increasing in [0,1]
  Camera camera;
};

struct CameraPath {
  enum class Mode { hold, linear_slerp };
  Mode mode = Mode::linear_slerp;
  std::vector<CameraKeyframe> keys;

  // Positions interpolate linearly, orientations by slerp; intrinsics are
  // held from the first keyframe (loading rejects varying intrinsics).
  Camera at(double u) const;

  nlohmann::json to_json() const;
  static CameraPath from_json(const nlohmann::json& j);
  static CameraPath load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

// Directory-backed registry. Clips are subdirectories containing clip.json;
// their tags feed motion retrieval.
class AssetLibrary {
 public:
  explicit AssetLibrary(const std::filesystem::path& root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path resolve(const std::string& relative) const;

  struct ClipEntry {
    std::string id;
    std::filesystem::path dir;
    std::vector<std::string> tags;
  };
  const std::vector<ClipEntry>& clips() const { return clips_; }

 private:
  std::filesystem::path root_;
  std::vector<ClipEntry> clips_;
};

// Best tag-overlap clip for a motion prompt:
// score = |stems(tokens(prompt)) ∩ stems(tags)| / |stems(tags)|,
// ties broken lexicographically; zero score throws motion-not-found.
AnimationClip retrieve_motion(const std::string& motion_prompt, const AssetLibrary& library,
                              const GaussianCloud* delta_base = nullptr);

// Motion prompts that mean "do not move" (empty prompt included).
bool is_static_motion(const std::string& motion_prompt);

// ---------------------------------------------------------------------------

// Object cloud recentered on its position-bounds center, with its height
// along the up axis; placements position this center.
struct PreparedObject {
  GaussianCloud base;
  std::vector<GaussianCloud> clip_frames;
  double natural_height = 1.0;
  Eigen::Vector3d original_center = Eigen::Vector3d::Zero();
};

PreparedObject prepare_object(const GaussianCloud& asset, UpAxis up);
void attach_clip(PreparedObject& obj, const AnimationClip& clip);

struct ObjectInstance {
  const GaussianCloud* cloud = nullptr;
  RigidTransform placement;
};

// Scene and objects rasterized jointly; no semantics beyond the transforms.
Framebuffer compose_frame(const GaussianCloud& scene,
                          std::span<const ObjectInstance> objects, const Camera& cam,
                          const Eigen::Vector3d& background,
                          const RasterizeSettings& settings = {});

// Clip frame driving render frame f (stretch rule; hold-last on overrun).
// With fps hints present, nearest-frame sampling at the playback rate.
size_t clip_frame_index(size_t frame, size_t frame_count, size_t clip_length,
                        double playback_fps = 0, double clip_fps = 0);

// ---------------------------------------------------------------------------

struct JobConfig {
  std::filesystem::path manifest_path;
  std::filesystem::path out_dir = "out";
  std::string director_mode = "mock";  // mock | live | replay
  std::filesystem::path fixtures_path;
  std::filesystem::path replay_log;
  std::string director_url;  // live mode; from C3V_DIRECTOR_URL
  std::string director_key;
  std::string provider = "zero";  // zero | pull | silhouette | ground | remote
  std::filesystem::path provider_target;  // raw framebuffer dump for pull/silhouette
  int provider_horizon = -1;
  double provider_gain = 1.0;
  double tau_s = -1;  // <0: 0.4 * base scale
  double tau_l = -1;  // <0: 0.3 * object height
  int n_path_points = 8;
  int frame_count = -1;   // <0: manifest value
  int res_w = -1, res_h = -1;
  int64_t seed = -1;      // <0: manifest value
  bool audit_mock = false;  // also audit mock/replay sessions
  UpAxis up_axis = UpAxis::neg_y;
  ResampleMode resample_mode = ResampleMode::constant_speed;
  std::filesystem::path external_depth;  // PFM; replaces rendered depth in lift
  double external_depth_scale = 1.0;
  RefineConfig refine;
  bool force = false;  // ignore the stage cache
  int verbosity = 0;
};

// Stage orchestration. Each stage reads only the previous stage's persisted
// files; compose() chains all stages with content-hash caching.
class JobRunner {
 public:
  explicit JobRunner(JobConfig cfg);

  void plan();
  void lift();
  void refine();
  void render();
  void compose();
  void validate();

  // Effective settings after manifest/flag merging.
  const SceneManifest& manifest() const { return manifest_; }
  int frame_count() const;
  uint64_t seed() const;
  std::filesystem::path plan_path(const ManifestObject& obj) const;
  std::filesystem::path lift_path(const ManifestObject& obj) const;
  std::filesystem::path placement_path(const ManifestObject& obj) const;
  std::filesystem::path frames_dir() const { return cfg_.out_dir / "frames"; }

 private:
  Camera working_camera() const;  // camera path at time 0, resolution applied
  Camera camera_at(double u) const;
  std::unique_ptr<Director> make_director() const;
  std::unique_ptr<ScoreProvider> make_provider(int width, int height) const;
  const GaussianCloud& scene_cloud();
  DepthMap scene_depth(const Camera& cam);
  std::string stage_digest(const std::string& stage) const;
  bool stage_cached(const std::string& stage, const std::vector<std::filesystem::path>& outputs);
  void store_stage(const std::string& stage);
  void log(const std::string& line) const;

  JobConfig cfg_;
  SceneManifest manifest_;
  CameraPath camera_path_;
  std::optional<GaussianCloud> scene_;
  AssetLibrary library_;
};

}  // namespace c3v
