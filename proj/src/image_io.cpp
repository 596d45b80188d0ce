#include "c3v/image_io.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "c3v/errors.hpp"
#include "c3v/util.hpp"

namespace c3v {

namespace {

void put_u32_be(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

void append_chunk(std::vector<uint8_t>& out, const char type[4],
                  const std::vector<uint8_t>& data) {
  put_u32_be(out, static_cast<uint32_t>(data.size()));
  const size_t type_at = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  uint32_t crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, out.data() + type_at, static_cast<uInt>(4 + data.size()));
  put_u32_be(out, crc);
}

uint8_t srgb_encode(double linear) {
  const double c = std::clamp(linear, 0.0, 1.0);
  const double s = c <= 0.0031308 ? 12.92 * c : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
  return static_cast<uint8_t>(std::lround(255.0 * s));
}

}  // namespace

std::vector<uint8_t> to_srgb8(const Framebuffer& fb) {
  std::vector<uint8_t> out(fb.rgb.size());
  for (size_t i = 0; i < fb.rgb.size(); ++i) out[i] = srgb_encode(fb.rgb[i]);
  return out;
}

std::vector<uint8_t> encode_png_rgb8(int width, int height,
                                     const std::vector<uint8_t>& rgb) {
  if (width <= 0 || height <= 0 ||
      rgb.size() != static_cast<size_t>(width) * height * 3) {
    throw Error(ErrorKind::render_failure, "png encode: bad buffer dimensions");
  }

  // Sub-filtered scanlines.
  const size_t stride = static_cast<size_t>(width) * 3;
  std::vector<uint8_t> filtered;
  filtered.reserve((stride + 1) * height);
  for (int y = 0; y < height; ++y) {
    filtered.push_back(1);  // Sub filter
    const uint8_t* row = rgb.data() + y * stride;
    for (size_t x = 0; x < stride; ++x) {
      const uint8_t left = x >= 3 ? row[x - 3] : 0;
      filtered.push_back(static_cast<uint8_t>(row[x] - left));
    }
  }

  uLongf bound = compressBound(static_cast<uLong>(filtered.size()));
  std::vector<uint8_t> compressed(bound);
  if (compress2(compressed.data(), &bound, filtered.data(),
                static_cast<uLong>(filtered.size()), 6) != Z_OK) {
    throw Error(ErrorKind::render_failure, "png encode: deflate failed");
  }
  compressed.resize(bound);

  std::vector<uint8_t> png = {137, 80, 78, 71, 13, 10, 26, 10};
  std::vector<uint8_t> ihdr;
  put_u32_be(ihdr, static_cast<uint32_t>(width));
  put_u32_be(ihdr, static_cast<uint32_t>(height));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // truecolor
  ihdr.push_back(0);   // compression
  ihdr.push_back(0);   // filter method
  ihdr.push_back(0);   // no interlace
  append_chunk(png, "IHDR", ihdr);
  append_chunk(png, "IDAT", compressed);
  append_chunk(png, "IEND", {});
  return png;
}

void write_framebuffer_png(const std::filesystem::path& path, const Framebuffer& fb) {
  const auto png = encode_png_rgb8(fb.width, fb.height, to_srgb8(fb));
  write_file_bytes(path, png.data(), png.size());
}

namespace {
constexpr char kRawMagic[4] = {'C', '3', 'V', 'F'};

void put_u32_le(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 24));
}

void put_f32(std::vector<uint8_t>& out, float f) {
  uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32_le(out, bits);
}

uint32_t get_u32_le(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
         static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
}

float get_f32(const uint8_t* p) {
  const uint32_t bits = get_u32_le(p);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}
}  // namespace

void write_framebuffer_raw(const std::filesystem::path& path, const Framebuffer& fb) {
  std::vector<uint8_t> out;
  out.insert(out.end(), kRawMagic, kRawMagic + 4);
  put_u32_le(out, static_cast<uint32_t>(fb.width));
  put_u32_le(out, static_cast<uint32_t>(fb.height));
  put_u32_le(out, 4);
  const size_t n = static_cast<size_t>(fb.width) * fb.height;
  for (int c = 0; c < 3; ++c) {
    for (size_t i = 0; i < n; ++i) put_f32(out, static_cast<float>(fb.rgb[i * 3 + c]));
  }
  for (size_t i = 0; i < n; ++i) put_f32(out, static_cast<float>(fb.alpha[i]));
  write_file_bytes(path, out.data(), out.size());
}

Framebuffer read_framebuffer_raw(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kRawMagic, 4) != 0) {
    throw Error(ErrorKind::config, "raw framebuffer: bad header");
  }
  const uint32_t w = get_u32_le(bytes.data() + 4);
  const uint32_t h = get_u32_le(bytes.data() + 8);
  const uint32_t channels = get_u32_le(bytes.data() + 12);
  const size_t n = static_cast<size_t>(w) * h;
  if (channels < 3 || bytes.size() != 16 + 4 * n * channels) {
    throw Error(ErrorKind::config, "raw framebuffer: truncated file");
  }
  Framebuffer fb(static_cast<int>(w), static_cast<int>(h));
  const uint8_t* p = bytes.data() + 16;
  for (int c = 0; c < 3; ++c) {
    for (size_t i = 0; i < n; ++i) fb.rgb[i * 3 + c] = get_f32(p + 4 * (c * n + i));
  }
  if (channels >= 4) {
    for (size_t i = 0; i < n; ++i) fb.alpha[i] = get_f32(p + 4 * (3 * n + i));
  }
  return fb;
}

void write_depth_pfm(const std::filesystem::path& path, const DepthMap& dm) {
  std::string header =
      "Pf\n" + std::to_string(dm.width) + " " + std::to_string(dm.height) + "\n-1.0\n";
  std::vector<uint8_t> out(header.begin(), header.end());
  // PFM scanlines run bottom-to-top.
  for (int y = dm.height - 1; y >= 0; --y) {
    for (int x = 0; x < dm.width; ++x) {
      put_f32(out, dm.is_valid(x, y) ? static_cast<float>(dm.at(x, y)) : 0.0f);
    }
  }
  write_file_bytes(path, out.data(), out.size());
}

DepthMap read_depth_pfm(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  size_t pos = 0;
  auto next_token = [&]() -> std::string {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    std::string tok;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) tok.push_back(bytes[pos++]);
    return tok;
  };
  const std::string magic = next_token();
  if (magic != "Pf") throw Error(ErrorKind::config, "pfm: expected grayscale 'Pf'");
  const int w = std::stoi(next_token());
  const int h = std::stoi(next_token());
  const double scale = std::stod(next_token());
  if (scale >= 0) throw Error(ErrorKind::config, "pfm: big-endian files unsupported");
  ++pos;  // single whitespace after the scale line
  const size_t need = static_cast<size_t>(w) * h * 4;
  if (w <= 0 || h <= 0 || bytes.size() - pos < need) {
    throw Error(ErrorKind::config, "pfm: truncated file");
  }
  DepthMap dm(w, h);
  for (int y = h - 1; y >= 0; --y) {
    for (int x = 0; x < w; ++x) {
      const float v = get_f32(bytes.data() + pos);
      pos += 4;
      if (v > 0 && std::isfinite(v)) dm.set(x, y, v);
    }
  }
  return dm;
}

}  // namespace c3v
