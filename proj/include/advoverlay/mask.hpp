#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace advoverlay {

struct Rect {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;
  bool operator==(const Rect&) const = default;
};

/// Binary H x W mask selecting the perturbable pixels.
class Mask {
 public:
  Mask() = default;
  Mask(int height, int width, bool fill = false);

  int height() const { return height_; }
  int width() const { return width_; }
  bool at(int y, int x) const { return bits_[index(y, x)] != 0; }
  void set(int y, int x, bool on) { bits_[index(y, x)] = on ? 1 : 0; }

  std::size_t popcount() const;
  bool empty() const { return popcount() == 0; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }

  bool operator==(const Mask&) const = default;

 private:
  std::size_t index(int y, int x) const { return static_cast<std::size_t>(y) * width_ + x; }

  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> bits_;  // each 0 or 1
};

/// Intersection of `r` with the [0, width) x [0, height) frame; zero-area
/// when they do not overlap.
Rect clip_rect(const Rect& r, int height, int width);

/// Union of the rectangles after clipping to the frame. Rectangles with
/// zero or negative area are ignored.
Mask build_mask(const std::vector<Rect>& rects, int height, int width);

/// A box of `box_w` x `box_h` pixels centred in the frame.
Rect centered_rect(int box_w, int box_h, int height, int width);

/// Dimensions (w, h) of a box with the given height:width ratio and roughly
/// `area` pixels; wide boxes are 1:n, tall boxes n:1.
Rect aspect_box(double ratio_h, double ratio_w, double area);

}  // namespace advoverlay
