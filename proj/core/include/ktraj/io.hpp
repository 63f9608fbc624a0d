#pragma once

#include <filesystem>
#include <string>

#include "ktraj/common.hpp"

namespace ktraj {

/// Writes bytes to a temp file in the same directory, then renames over the
/// destination, so partially-written outputs are never observed.
void atomic_write_file(const std::filesystem::path& path, const std::string& bytes);

std::string read_file_bytes(const std::filesystem::path& path);

/// Complex image file pair: raw little-endian f32 samples plus a JSON
/// sidecar (same stem, .json) holding {"shape": [nx, ny], "complex": bool}.
/// Complex data is interleaved re,im.
void save_image_f32(const std::filesystem::path& raw_path, const CVec& image, GridShape grid);
CVec load_image_f32(const std::filesystem::path& raw_path, GridShape* grid_out);

}  // namespace ktraj
