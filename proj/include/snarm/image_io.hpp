#pragma once

#include <filesystem>
#include <string>

#include "snarm/encoder.hpp"

namespace snarm {

/// Binary PPM (P6) or PGM (P5), 8-bit. Grayscale is replicated to three channels; values land in [0,1].
Image read_image(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Grid& rgb);

/// 8-bit PGM mask; any nonzero pixel counts as anomalous. Result holds {0,1}.
Map read_mask(const std::filesystem::path& path);
/// Writes 0/255.
void write_mask(const std::filesystem::path& path, const Map& mask);

/// 16-bit PGM with round(v·65535), v clamped to [0,1].
void write_map16(const std::filesystem::path& path, const Map& map);
Map read_map16(const std::filesystem::path& path);

}  // namespace snarm
