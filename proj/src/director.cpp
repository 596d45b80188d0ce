#include "c3v/director.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <sstream>

#include <httplib.h>

#include "c3v/errors.hpp"
#include "c3v/util.hpp"

namespace c3v {

std::string task_name(DirectorTask task) {
  switch (task) {
    case DirectorTask::decompose: return "decompose";
    case DirectorTask::scale: return "scale";
    case DirectorTask::endpoints: return "endpoints";
    case DirectorTask::path: return "path";
    case DirectorTask::score: return "score";
  }
  return "unknown";
}

namespace {

std::string fixture_key(DirectorTask task, const std::string& prompt) {
  return task_name(task) + ":" + sha256_hex(prompt);
}

std::string fence(const nlohmann::json& payload) {
  return "```json\n" + payload.dump() + "\n```";
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Chord-length resampling of a polyline to exactly n points.
std::vector<Eigen::Vector2d> resample_polyline(const std::vector<Eigen::Vector2d>& pts,
                                               int n) {
  std::vector<Eigen::Vector2d> out;
  out.reserve(n);
  std::vector<double> cum{0.0};
  for (size_t i = 1; i < pts.size(); ++i) {
    cum.push_back(cum.back() + (pts[i] - pts[i - 1]).norm());
  }
  const double total = cum.back();
  if (total <= 0.0) {
    out.assign(n, pts.front());
    return out;
  }
  for (int k = 0; k < n; ++k) {
    const double target = total * k / (n - 1);
    size_t seg = 1;
    while (seg < cum.size() - 1 && cum[seg] < target) ++seg;
    const double seg_len = cum[seg] - cum[seg - 1];
    const double t = seg_len > 0 ? (target - cum[seg - 1]) / seg_len : 0.0;
    out.push_back(pts[seg - 1] + t * (pts[seg] - pts[seg - 1]));
  }
  return out;
}

}  // namespace

MockDirector::MockDirector(const std::filesystem::path& fixture_file) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file_text(fixture_file));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::config,
                "fixture file " + fixture_file.string() + ": " + e.what());
  }
  load(doc);
}

MockDirector::MockDirector(const nlohmann::json& fixtures) { load(fixtures); }

void MockDirector::load(const nlohmann::json& fixtures) {
  if (!fixtures.contains("fixtures") || !fixtures["fixtures"].is_array()) {
    throw Error(ErrorKind::config, "fixture file needs a 'fixtures' array");
  }
  for (const auto& entry : fixtures["fixtures"]) {
    const std::string task = entry.at("task").get<std::string>();
    std::string hash;
    if (entry.contains("prompt")) {
      hash = sha256_hex(entry.at("prompt").get<std::string>());
    } else {
      hash = entry.at("prompt_hash").get<std::string>();
    }
    table_[task + ":" + hash] = entry.at("payload");
  }
}

DirectorResponse MockDirector::query(const DirectorRequest& request) {
  const auto it = table_.find(fixture_key(request.task, request.prompt));
  if (it == table_.end()) {
    throw Error(ErrorKind::director_malformed,
                "mock director: no fixture for task '" + task_name(request.task) +
                    "' prompt '" + request.prompt + "'");
  }
  nlohmann::json payload = it->second;
  if (request.task == DirectorTask::path && request.params.contains("n")) {
    const int n = request.params["n"].get<int>();
    std::vector<Eigen::Vector2d> pts;
    for (const auto& p : payload.at("points")) {
      pts.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
    }
    if (n >= 2 && static_cast<size_t>(n) != pts.size()) {
      const auto resampled = resample_polyline(pts, n);
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& p : resampled) arr.push_back({p.x(), p.y()});
      payload["points"] = arr;
    }
  }
  return DirectorResponse{fence(payload), payload};
}

HttpDirector::HttpDirector(std::string endpoint, std::string api_key,
                           int timeout_seconds)
    : endpoint_(std::move(endpoint)), api_key_(std::move(api_key)),
      timeout_seconds_(timeout_seconds) {}

DirectorResponse HttpDirector::query(const DirectorRequest& request) {
  httplib::Client client(endpoint_);
  client.set_connection_timeout(timeout_seconds_);
  client.set_read_timeout(timeout_seconds_);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  nlohmann::json body{{"task", task_name(request.task)},
                      {"prompt", request.prompt},
                      {"image_b64", base64_encode(request.image_png)},
                      {"context", request.context},
                      {"params", request.params}};
  const auto res = client.Post("/director", headers, body.dump(), "application/json");
  if (!res) {
    throw Error(ErrorKind::director_unreachable,
                "director endpoint unreachable: " + endpoint_);
  }
  if (res->status != 200) {
    throw Error(ErrorKind::director_unreachable,
                "director returned HTTP " + std::to_string(res->status));
  }
  DirectorResponse out;
  out.raw = res->body;
  return out;
}

ReplayDirector::ReplayDirector(const std::filesystem::path& audit_log) {
  std::ifstream in(audit_log);
  if (!in) {
    throw Error(ErrorKind::config, "cannot open audit log: " + audit_log.string());
  }
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::config, std::string("audit log: bad record: ") + e.what());
    }
    const std::string key = rec.at("task").get<std::string>() + ":" +
                            sha256_hex(rec.at("prompt").get<std::string>());
    raw_by_key_[key].push_back(rec.at("response_raw").get<std::string>());
  }
}

DirectorResponse ReplayDirector::query(const DirectorRequest& request) {
  const std::string key = fixture_key(request.task, request.prompt);
  auto it = raw_by_key_.find(key);
  size_t& cur = cursor_[key];
  if (it == raw_by_key_.end() || cur >= it->second.size()) {
    throw Error(ErrorKind::director_unreachable,
                "replay: no recorded response for task '" + task_name(request.task) +
                    "'");
  }
  DirectorResponse out;
  out.raw = it->second[cur++];
  return out;
}

AuditLog::AuditLog(const std::filesystem::path& path) : path_(path) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
}

void AuditLog::record(const DirectorRequest& request, const std::string& raw_response) {
  nlohmann::json rec{{"ts", utc_timestamp()},
                     {"task", task_name(request.task)},
                     {"prompt", request.prompt},
                     {"image_sha256",
                      request.image_png.empty() ? "" : sha256_hex(request.image_png)},
                     {"context", request.context},
                     {"params", request.params},
                     {"response_raw", raw_response}};
  std::ofstream out(path_, std::ios::app);
  if (!out) throw Error(ErrorKind::config, "cannot append audit log: " + path_.string());
  out << rec.dump() << "\n";
}

nlohmann::json parse_fenced_payload(const std::string& raw) {
  const size_t open = raw.find("```");
  if (open == std::string::npos) {
    throw Error(ErrorKind::director_malformed, "director reply has no fenced payload");
  }
  size_t body_start = raw.find('\n', open);
  if (body_start == std::string::npos) {
    // Single-line fence: ```{...}```
    body_start = open + 3;
  } else {
    const std::string tag = raw.substr(open + 3, body_start - open - 3);
    if (tag.find('{') != std::string::npos || tag.find('[') != std::string::npos) {
      body_start = open + 3;  // payload began right after the fence
    } else {
      body_start += 1;
    }
  }
  const size_t close = raw.find("```", body_start);
  if (close == std::string::npos) {
    throw Error(ErrorKind::director_malformed, "director payload fence not closed");
  }
  try {
    return nlohmann::json::parse(raw.substr(body_start, close - body_start));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::director_malformed,
                std::string("director payload is not valid JSON: ") + e.what());
  }
}

DirectorSession::DirectorSession(Director& director, int image_width, int image_height,
                                 AuditLog* audit)
    : director_(director), width_(image_width), height_(image_height), audit_(audit) {}

DirectorResponse DirectorSession::ask(const DirectorRequest& request) {
  DirectorResponse resp = director_.query(request);
  if (audit_) audit_->record(request, resp.raw);
  resp.payload = parse_fenced_payload(resp.raw);
  return resp;
}

Eigen::Vector2d DirectorSession::clamp_point(const Eigen::Vector2d& p, const char* what,
                                             bool* clamped) {
  Eigen::Vector2d q(std::clamp(p.x(), 0.0, static_cast<double>(width_)),
                    std::clamp(p.y(), 0.0, static_cast<double>(height_)));
  if (q != p) {
    flags_.push_back(std::string(what) + ": point clamped to image bounds");
    if (clamped) *clamped = true;
  }
  return q;
}

PromptDecomposition DirectorSession::decompose(const std::string& prompt) {
  if (prompt.empty()) {
    throw Error(ErrorKind::config, "decompose: prompt must be nonempty");
  }
  DirectorRequest req;
  req.task = DirectorTask::decompose;
  req.prompt = prompt;

  std::string last_error;
  for (int attempt = 0; attempt <= retry_limit_; ++attempt) {
    try {
      const auto resp = ask(req);
      const auto& p = resp.payload;
      PromptDecomposition out;
      out.scene_prompt = p.at("scene").get<std::string>();
      for (const auto& o : p.at("objects")) out.object_prompts.push_back(o.get<std::string>());
      for (const auto& m : p.at("motions")) out.motion_prompts.push_back(m.get<std::string>());
      if (p.contains("ids")) {
        for (const auto& id : p["ids"]) out.object_ids.push_back(id.get<std::string>());
      } else {
        for (size_t i = 0; i < out.object_prompts.size(); ++i) {
          out.object_ids.push_back("object_" + std::to_string(i));
        }
      }
      if (out.scene_prompt.empty() ||
          out.object_prompts.size() != out.motion_prompts.size() ||
          out.object_ids.size() != out.object_prompts.size()) {
        throw Error(ErrorKind::director_malformed, "decompose: misaligned sub-prompts");
      }
      return out;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::director_malformed) throw;
      last_error = e.what();
    } catch (const nlohmann::json::exception& e) {
      last_error = e.what();
    }
  }
  throw Error(ErrorKind::director_malformed, "decompose failed after retries: " + last_error);
}

ScaleEstimate DirectorSession::estimate_scale(const std::string& prompt,
                                              const std::vector<uint8_t>& image_png) {
  DirectorRequest req;
  req.task = DirectorTask::scale;
  req.prompt = prompt;
  req.image_png = image_png;
  req.context = {{"image_size", {width_, height_}}};

  std::string last_error;
  for (int attempt = 0; attempt <= retry_limit_; ++attempt) {
    try {
      const auto resp = ask(req);
      const auto& p = resp.payload;
      if (!p.contains("h") || !p.contains("w") || !p["h"].is_number() ||
          !p["w"].is_number()) {
        throw Error(ErrorKind::director_malformed, "scale: payload needs numeric h, w");
      }
      double h = p["h"].get<double>();
      double w = p["w"].get<double>();
      if (!(h > 0) || !(w > 0)) {
        throw Error(ErrorKind::director_malformed, "scale: dimensions must be positive");
      }
      ScaleEstimate out;
      if (h > height_) {
        h = height_;
        out.clamped = true;
        flags_.push_back("scale: height clamped to image bounds");
      }
      if (w > width_) {
        w = width_;
        out.clamped = true;
        flags_.push_back("scale: width clamped to image bounds");
      }
      out.bbox = BBox2D{h, w};
      return out;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::director_malformed) throw;
      last_error = e.what();
    } catch (const nlohmann::json::exception& e) {
      last_error = e.what();
    }
  }
  throw Error(ErrorKind::director_malformed, "scale failed after retries: " + last_error);
}

EndpointEstimate DirectorSession::estimate_endpoints(
    const std::string& start_prompt, const std::string& end_prompt,
    const std::vector<uint8_t>& image_png, const ScaleEstimate& scale, bool moving) {
  DirectorRequest req;
  req.task = DirectorTask::endpoints;
  req.prompt = start_prompt;
  req.image_png = image_png;
  req.context = {{"end_prompt", end_prompt},
                 {"bbox", {scale.bbox.width_px, scale.bbox.height_px}},
                 {"image_size", {width_, height_}}};

  auto query_once = [&]() -> EndpointEstimate {
    std::string last_error;
    for (int attempt = 0; attempt <= retry_limit_; ++attempt) {
      try {
        const auto resp = ask(req);
        const auto& p = resp.payload;
        const auto& s = p.at("start");
        const auto& e = p.at("end");
        EndpointEstimate out;
        out.start_px = clamp_point({s.at(0).get<double>(), s.at(1).get<double>()},
                                   "endpoints.start", &out.clamped);
        out.end_px = clamp_point({e.at(0).get<double>(), e.at(1).get<double>()},
                                 "endpoints.end", &out.clamped);
        return out;
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::director_malformed) throw;
        last_error = e.what();
      } catch (const nlohmann::json::exception& e) {
        last_error = e.what();
      }
    }
    throw Error(ErrorKind::director_malformed,
                "endpoints failed after retries: " + last_error);
  };

  EndpointEstimate out = query_once();
  if (moving && (out.start_px - out.end_px).norm() < 1e-9) {
    // Coincident endpoints for a moving object: one re-query, then error.
    flags_.push_back("endpoints: coincident for moving object, re-queried");
    out = query_once();
    if ((out.start_px - out.end_px).norm() < 1e-9) {
      throw Error(ErrorKind::director_malformed,
                  "endpoints: start equals end for a moving object");
    }
  }
  return out;
}

PathEstimate DirectorSession::estimate_path(const std::string& path_prompt,
                                            const std::vector<uint8_t>& image_png,
                                            const ScaleEstimate& scale,
                                            const EndpointEstimate& endpoints,
                                            int point_count) {
  if (point_count < 2) {
    throw Error(ErrorKind::config, "estimate_path: point count must be >= 2");
  }
  DirectorRequest req;
  req.task = DirectorTask::path;
  req.prompt = path_prompt;
  req.image_png = image_png;
  req.context = {{"bbox", {scale.bbox.width_px, scale.bbox.height_px}},
                 {"start", {endpoints.start_px.x(), endpoints.start_px.y()}},
                 {"end", {endpoints.end_px.x(), endpoints.end_px.y()}},
                 {"image_size", {width_, height_}}};
  req.params = {{"n", point_count}};

  std::string last_error;
  for (int attempt = 0; attempt <= retry_limit_; ++attempt) {
    try {
      const auto resp = ask(req);
      const auto& pts = resp.payload.at("points");
      if (!pts.is_array() || pts.size() != static_cast<size_t>(point_count)) {
        throw Error(ErrorKind::director_malformed,
                    "path: expected " + std::to_string(point_count) + " points, got " +
                        std::to_string(pts.size()));
      }
      PathEstimate out;
      for (const auto& p : pts) {
        out.points.push_back(clamp_point({p.at(0).get<double>(), p.at(1).get<double>()},
                                         "path", nullptr));
      }
      return out;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::director_malformed) throw;
      last_error = e.what();
    } catch (const nlohmann::json::exception& e) {
      last_error = e.what();
    }
  }
  throw Error(ErrorKind::director_malformed, "path failed after retries: " + last_error);
}

PathEstimate validate_trajectory(const PathEstimate& path, int image_width,
                                 int image_height, const BBox2D& bbox,
                                 const EndpointEstimate& endpoints,
                                 std::vector<std::string>* flags) {
  auto note = [&](const std::string& msg) {
    if (flags) flags->push_back(msg);
  };

  PathEstimate out;
  for (size_t i = 0; i < path.points.size(); ++i) {
    Eigen::Vector2d p = path.points[i];
    Eigen::Vector2d q(std::clamp(p.x(), 0.0, static_cast<double>(image_width)),
                      std::clamp(p.y(), 0.0, static_cast<double>(image_height)));
    if (q != p) note("validate: point " + std::to_string(i) + " clamped in-bounds");
    if (!out.points.empty() && (out.points.back() - q).norm() < 1e-9) {
      note("validate: consecutive duplicate at index " + std::to_string(i) + " removed");
      continue;
    }
    out.points.push_back(q);
  }

  if (out.points.size() < 2) {
    throw Error(ErrorKind::validation,
                "trajectory-degenerate: fewer than 2 distinct points");
  }

  const double reach = 2.0 * std::max(bbox.height_px, bbox.width_px);
  if ((out.points.front() - endpoints.start_px).norm() > reach) {
    throw Error(ErrorKind::validation,
                "trajectory start is too far from the estimated starting point");
  }
  if ((out.points.back() - endpoints.end_px).norm() > reach) {
    throw Error(ErrorKind::validation,
                "trajectory end is too far from the estimated ending point");
  }
  return out;
}

}  // namespace c3v
