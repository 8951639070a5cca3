#pragma once

#include <filesystem>

#include "flowgs/flow.hpp"
#include "flowgs/types.hpp"

namespace flowgs {

/// 8-bit PNG. Gray and alpha channels are expanded/dropped on read; values map
/// to [0, 1] as v / 255.
RgbImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RgbImage& image);

/// Single-channel PFM ("Pf"), little-endian (scale -1.0), rows stored bottom-up.
DepthMap read_pfm(const std::filesystem::path& path);
void write_pfm(const std::filesystem::path& path, const DepthMap& map);

/// Middlebury .flo. Components above 1e9 in magnitude mark invalid pixels;
/// invalid pixels are written as 1e10 and read back with u = v = 0.
FlowField read_flo(const std::filesystem::path& path);
void write_flo(const std::filesystem::path& path, const FlowField& flow);

inline FlowField load_flow(const std::filesystem::path& path) { return read_flo(path); }
inline DepthMap load_depth(const std::filesystem::path& path) { return read_pfm(path); }

/// round(255 * clamp(v, 0, 1)) / 255 per channel: the value a PNG round trip yields.
RgbImage quantize_8bit(const RgbImage& image);

}  // namespace flowgs
