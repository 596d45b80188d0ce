#include "c3v/ply_io.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "c3v/errors.hpp"
#include "c3v/util.hpp"

namespace c3v {

namespace {

struct PlyHeader {
  size_t vertex_count = 0;
  std::vector<std::string> properties;  // in file order, all float32
  size_t data_offset = 0;
};

PlyHeader parse_header(const std::vector<uint8_t>& bytes, const std::string& path) {
  PlyHeader h;
  size_t pos = 0;
  auto next_line = [&]() -> std::string {
    std::string line;
    while (pos < bytes.size() && bytes[pos] != '\n') line.push_back(bytes[pos++]);
    if (pos < bytes.size()) ++pos;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  };

  if (next_line() != "ply") {
    throw Error(ErrorKind::config, path + ": not a PLY file");
  }
  bool in_vertex_element = false;
  bool format_seen = false;
  while (pos < bytes.size()) {
    const std::string line = next_line();
    std::istringstream ss(line);
    std::string word;
    ss >> word;
    if (word == "comment") continue;
    if (word == "format") {
      std::string fmt;
      ss >> fmt;
      if (fmt != "binary_little_endian") {
        throw Error(ErrorKind::config, path + ": only binary_little_endian supported");
      }
      format_seen = true;
    } else if (word == "element") {
      std::string name;
      size_t count = 0;
      ss >> name >> count;
      if (name == "vertex") {
        h.vertex_count = count;
        in_vertex_element = true;
      } else {
        // Only vertex data is meaningful; other elements would shift offsets.
        throw Error(ErrorKind::config, path + ": unsupported element '" + name + "'");
      }
    } else if (word == "property") {
      std::string type, name;
      ss >> type >> name;
      if (!in_vertex_element) {
        throw Error(ErrorKind::config, path + ": property outside vertex element");
      }
      if (type != "float" && type != "float32") {
        throw Error(ErrorKind::config,
                    path + ": non-float property '" + name + "' unsupported");
      }
      h.properties.push_back(name);
    } else if (word == "end_header") {
      h.data_offset = pos;
      if (!format_seen) throw Error(ErrorKind::config, path + ": missing format line");
      return h;
    } else if (word.empty()) {
      continue;
    } else {
      throw Error(ErrorKind::config, path + ": unexpected header line '" + line + "'");
    }
  }
  throw Error(ErrorKind::config, path + ": header not terminated");
}

}  // namespace

GaussianCloud load_gaussian_ply(const std::filesystem::path& path,
                                const std::string& label) {
  const auto bytes = read_file_bytes(path);
  const PlyHeader header = parse_header(bytes, path.string());

  std::map<std::string, size_t> index;
  for (size_t i = 0; i < header.properties.size(); ++i) {
    if (!index.emplace(header.properties[i], i).second) {
      throw Error(ErrorKind::config, path.string() + ": duplicate property");
    }
  }
  const char* required[] = {"x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2",
                            "opacity", "scale_0", "scale_1", "scale_2",
                            "rot_0", "rot_1", "rot_2", "rot_3"};
  size_t off[14];
  for (size_t i = 0; i < 14; ++i) {
    auto it = index.find(required[i]);
    if (it == index.end()) {
      throw Error(ErrorKind::config,
                  path.string() + ": missing property '" + std::string(required[i]) + "'");
    }
    off[i] = it->second;
  }

  const size_t stride = header.properties.size() * 4;
  if (bytes.size() - header.data_offset < header.vertex_count * stride) {
    throw Error(ErrorKind::config, path.string() + ": truncated vertex data");
  }

  GaussianCloud cloud;
  cloud.label = label.empty() ? path.stem().string() : label;
  cloud.gaussians.reserve(header.vertex_count);
  const uint8_t* base = bytes.data() + header.data_offset;
  for (size_t v = 0; v < header.vertex_count; ++v) {
    const uint8_t* rec = base + v * stride;
    auto f = [&](size_t i) {
      float value;
      std::memcpy(&value, rec + off[i] * 4, 4);
      return static_cast<double>(value);
    };
    Gaussian3D g;
    g.position = Eigen::Vector3d(f(0), f(1), f(2));
    g.color = Eigen::Vector3d(0.5 + kShC0 * f(3), 0.5 + kShC0 * f(4), 0.5 + kShC0 * f(5))
                  .cwiseMax(0.0)
                  .cwiseMin(1.0);
    g.opacity_logit = f(6);
    g.log_scale = Eigen::Vector3d(f(7), f(8), f(9));
    Eigen::Quaterniond q(f(10), f(11), f(12), f(13));  // w, x, y, z
    const double norm = q.norm();
    if (!(norm > 1e-12) || !std::isfinite(norm)) {
      throw Error(ErrorKind::config, path.string() + ": degenerate quaternion");
    }
    g.rotation = q.normalized();
    if (!g.is_finite()) {
      throw Error(ErrorKind::config, path.string() + ": non-finite gaussian");
    }
    cloud.gaussians.push_back(g);
  }
  return cloud;
}

void save_gaussian_ply(const std::filesystem::path& path, const GaussianCloud& cloud) {
  std::ostringstream header;
  header << "ply\nformat binary_little_endian 1.0\n"
         << "element vertex " << cloud.size() << "\n";
  for (const char* name : {"x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
                           "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2",
                           "rot_3"}) {
    header << "property float " << name << "\n";
  }
  header << "end_header\n";

  std::string head = header.str();
  std::vector<uint8_t> out(head.begin(), head.end());
  auto put = [&](double v) {
    const float f = static_cast<float>(v);
    uint8_t buf[4];
    std::memcpy(buf, &f, 4);
    out.insert(out.end(), buf, buf + 4);
  };
  for (const Gaussian3D& g : cloud.gaussians) {
    put(g.position.x());
    put(g.position.y());
    put(g.position.z());
    put((g.color.x() - 0.5) / kShC0);
    put((g.color.y() - 0.5) / kShC0);
    put((g.color.z() - 0.5) / kShC0);
    put(g.opacity_logit);
    put(g.log_scale.x());
    put(g.log_scale.y());
    put(g.log_scale.z());
    put(g.rotation.w());
    put(g.rotation.x());
    put(g.rotation.y());
    put(g.rotation.z());
  }
  write_file_bytes(path, out.data(), out.size());
}

}  // namespace c3v
