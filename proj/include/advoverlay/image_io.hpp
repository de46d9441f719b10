#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "advoverlay/mask.hpp"
#include "advoverlay/tensor.hpp"

namespace advoverlay {

/// Decodes PNG or JPEG bytes into an RGB (channels = 3) or gray
/// (channels = 1) image. Throws InputError when the bytes are not an image.
ImageTensor decode_image(std::span<const std::uint8_t> bytes, int channels = 3);
ImageTensor load_image(const std::filesystem::path& path, int channels = 3);

/// 8-bit PNG; values are rounded to the nearest of 256 levels.
std::vector<std::uint8_t> encode_png(const ImageTensor& image);
void save_png(const std::filesystem::path& path, const ImageTensor& image);

/// Bilinear resize to fit a side x side square, preserving aspect ratio,
/// centred on 0.5-gray padding. Same-size input is returned unchanged.
ImageTensor letterbox(const ImageTensor& image, int side);

/// 1-bit PNG, white = perturbable.
std::vector<std::uint8_t> encode_mask_png(const Mask& mask);
void save_mask_png(const std::filesystem::path& path, const Mask& mask);
/// Any PNG; pixels brighter than mid-gray become 1.
Mask load_mask_png(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace advoverlay
