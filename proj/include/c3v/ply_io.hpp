#pragma once

#include <filesystem>

#include "c3v/types.hpp"

namespace c3v {

// DC color coefficient scale shared with standard splat assets.
inline constexpr double kShC0 = 0.28209479177387814;

// Binary little-endian splat PLY: float properties x y z, f_dc_0..2, opacity,
// scale_0..2, rot_0..3 (w first). Extra float properties (f_rest_*, normals)
// are skipped. Quaternions are normalized on load.
GaussianCloud load_gaussian_ply(const std::filesystem::path& path,
                                const std::string& label = {});

void save_gaussian_ply(const std::filesystem::path& path, const GaussianCloud& cloud);

}  // namespace c3v
