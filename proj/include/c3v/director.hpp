#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "c3v/types.hpp"

namespace c3v {

struct PromptDecomposition {
  std::string scene_prompt;                  // y1
  std::vector<std::string> object_prompts;   // y2, one per object
  std::vector<std::string> motion_prompts;   // y3, aligned with object_prompts
  std::vector<std::string> object_ids;
};

struct ScaleEstimate {
  BBox2D bbox;
  bool clamped = false;
};

struct EndpointEstimate {
  Eigen::Vector2d start_px = Eigen::Vector2d::Zero();
  Eigen::Vector2d end_px = Eigen::Vector2d::Zero();
  bool clamped = false;
};

struct PathEstimate {
  std::vector<Eigen::Vector2d> points;
};

enum class DirectorTask { decompose, scale, endpoints, path, score };

std::string task_name(DirectorTask task);

struct DirectorRequest {
  DirectorTask task = DirectorTask::decompose;
  std::string prompt;
  std::vector<uint8_t> image_png;  // rendered scene image, may be empty
  nlohmann::json context;          // previous stage outputs
  nlohmann::json params;           // model parameters
};

struct DirectorResponse {
  std::string raw;          // verbatim transcript
  nlohmann::json payload;   // parsed fenced block
};

// Transport interface: mock, HTTP, or audit-log replay.
class Director {
 public:
  virtual ~Director() = default;
  virtual DirectorResponse query(const DirectorRequest& request) = 0;
  virtual std::string mode_name() const = 0;
};

// Deterministic fixture-backed director. The fixture file maps
// (task, sha256(prompt)) to a payload; path fixtures are stored as a polyline
// and resampled by chord length when the requested count differs.
class MockDirector : public Director {
 public:
  explicit MockDirector(const std::filesystem::path& fixture_file);
  explicit MockDirector(const nlohmann::json& fixtures);

  DirectorResponse query(const DirectorRequest& request) override;
  std::string mode_name() const override { return "mock"; }

 private:
  void load(const nlohmann::json& fixtures);
  // key: task || ":" || prompt sha256
  std::map<std::string, nlohmann::json> table_;
};

// Blocking HTTP client: POST {endpoint}/director. The response body must
// contain one fenced payload block; surrounding free text is ignored.
class HttpDirector : public Director {
 public:
  HttpDirector(std::string endpoint, std::string api_key, int timeout_seconds = 60);
  DirectorResponse query(const DirectorRequest& request) override;
  std::string mode_name() const override { return "live"; }

 private:
  std::string endpoint_;
  std::string api_key_;
  int timeout_seconds_;
};

// Serves recorded responses from an audit log, matched by (task, prompt)
// in recorded order.
class ReplayDirector : public Director {
 public:
  explicit ReplayDirector(const std::filesystem::path& audit_log);
  DirectorResponse query(const DirectorRequest& request) override;
  std::string mode_name() const override { return "replay"; }

 private:
  std::map<std::string, std::vector<std::string>> raw_by_key_;
  std::map<std::string, size_t> cursor_;
};

// Append-only JSONL of request/response pairs; responses are written
// verbatim before any parsing happens.
class AuditLog {
 public:
  explicit AuditLog(const std::filesystem::path& path);
  void record(const DirectorRequest& request, const std::string& raw_response);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// Extracts the payload from a raw director reply: the first fenced block
// (``` ... ```), parsed as JSON. Throws director-malformed when absent.
nlohmann::json parse_fenced_payload(const std::string& raw);

// Protocol driver enforcing the stage order scale -> endpoints -> path and
// the retry/validation rules. Image dimensions bound every pixel payload.
class DirectorSession {
 public:
  DirectorSession(Director& director, int image_width, int image_height,
                  AuditLog* audit = nullptr);

  // Number of re-queries after a malformed response (spec default 2).
  void set_retry_limit(int limit) { retry_limit_ = limit; }

  PromptDecomposition decompose(const std::string& prompt);
  ScaleEstimate estimate_scale(const std::string& prompt,
                               const std::vector<uint8_t>& image_png);
  EndpointEstimate estimate_endpoints(const std::string& start_prompt,
                                      const std::string& end_prompt,
                                      const std::vector<uint8_t>& image_png,
                                      const ScaleEstimate& scale, bool moving);
  PathEstimate estimate_path(const std::string& path_prompt,
                             const std::vector<uint8_t>& image_png,
                             const ScaleEstimate& scale,
                             const EndpointEstimate& endpoints, int point_count);

  const std::vector<std::string>& flags() const { return flags_; }

 private:
  DirectorResponse ask(const DirectorRequest& request);
  Eigen::Vector2d clamp_point(const Eigen::Vector2d& p, const char* what, bool* clamped);

  Director& director_;
  int width_, height_;
  AuditLog* audit_;
  int retry_limit_ = 2;
  std::vector<std::string> flags_;
};

// Clamps points in bounds, drops consecutive duplicates and checks the
// endpoint-proximity rule (first/last within 2*max(bbox) pixels of the
// endpoints). Violations of proximity or a degenerate result throw.
PathEstimate validate_trajectory(const PathEstimate& path, int image_width,
                                 int image_height, const BBox2D& bbox,
                                 const EndpointEstimate& endpoints,
                                 std::vector<std::string>* flags);

// Default query templates, editable per job.
struct DirectorTemplates {
  std::string decompose =
      "Decompose the prompt into sub-prompts that describe the scene, the "
      "objects in the scene, and each object's motion. Answer with a fenced "
      "JSON block: {\"scene\": str, \"objects\": [str], \"motions\": [str]}.";
  std::string scale =
      "Estimate the pixel resolution of a bounding box for this object in the "
      "image. Answer with a fenced JSON block: {\"h\": int, \"w\": int}.";
  std::string endpoints =
      "Given the object's bounding box size, give the starting and ending "
      "pixel locations of its movement. Answer with a fenced JSON block: "
      "{\"start\": [x, y], \"end\": [x, y]}.";
  std::string path =
      "Give N pixel locations indicating the path between the starting and "
      "ending points. Answer with a fenced JSON block: {\"points\": [[x, y], ...]}.";
};

}  // namespace c3v
