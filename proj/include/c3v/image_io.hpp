#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "c3v/rasterizer.hpp"

namespace c3v {

// Linear [0,1] -> sRGB-encoded 8-bit, interleaved RGB.
std::vector<uint8_t> to_srgb8(const Framebuffer& fb);

// Deterministic PNG bytes (8-bit RGB, Sub row filter, fixed zlib level).
std::vector<uint8_t> encode_png_rgb8(int width, int height,
                                     const std::vector<uint8_t>& rgb);

void write_framebuffer_png(const std::filesystem::path& path, const Framebuffer& fb);

// Raw 32-bit float planar dump ("C3VF" header) for oracle comparisons.
void write_framebuffer_raw(const std::filesystem::path& path, const Framebuffer& fb);
Framebuffer read_framebuffer_raw(const std::filesystem::path& path);

// Single-channel 32-bit float PFM ("Pf", little-endian). Invalid pixels are
// stored as 0; values <= 0 load back as invalid.
void write_depth_pfm(const std::filesystem::path& path, const DepthMap& dm);
DepthMap read_depth_pfm(const std::filesystem::path& path);

}  // namespace c3v
