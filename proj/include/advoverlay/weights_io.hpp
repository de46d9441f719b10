#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "advoverlay/yolo_net.hpp"

namespace advoverlay {

/// Little-endian weights file:
///
///   "ADVD"  u32 version (=1)
///   u32 input_side  u32 input_channels  u32 trunk_width
///   u32 num_classes  u32 boxes_per_cell  u64 seed  u32 num_scales
///   per scale: u32 stride, boxes_per_cell x (f32 anchor_w, f32 anchor_h)
///   per layer in declaration order: f32 weight[...], f32 bias[...]
///
/// Parameters are stored as f32; values that are not float-representable
/// are rounded on save.
inline constexpr std::uint32_t kWeightsFormatVersion = 1;

void write_weights(std::ostream& out, const DetectorWeights& weights);
DetectorWeights read_weights(std::istream& in);

void save_weights(const std::filesystem::path& path, const DetectorWeights& weights);
/// Throws InputError on a missing file, bad magic, unknown version or truncation.
DetectorWeights load_weights(const std::filesystem::path& path);

}  // namespace advoverlay
