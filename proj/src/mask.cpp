#include "advoverlay/mask.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "advoverlay/errors.hpp"

namespace advoverlay {

Mask::Mask(int height, int width, bool fill) : height_(height), width_(width) {
  if (height < 0 || width < 0) throw ShapeError("negative mask dimension");
  bits_.assign(static_cast<std::size_t>(height) * width, fill ? 1 : 0);
}

std::size_t Mask::popcount() const { return std::accumulate(bits_.begin(), bits_.end(), std::size_t{0}); }

Rect clip_rect(const Rect& r, int height, int width) {
  if (r.w <= 0 || r.h <= 0) return {0, 0, 0, 0};
  const long x0 = std::max<long>(r.x, 0);
  const long y0 = std::max<long>(r.y, 0);
  const long x1 = std::min<long>(static_cast<long>(r.x) + r.w, width);
  const long y1 = std::min<long>(static_cast<long>(r.y) + r.h, height);
  if (x1 <= x0 || y1 <= y0) return {0, 0, 0, 0};
  return {static_cast<int>(x0), static_cast<int>(y0), static_cast<int>(x1 - x0), static_cast<int>(y1 - y0)};
}

Mask build_mask(const std::vector<Rect>& rects, int height, int width) {
  Mask mask(height, width);
  for (const auto& r : rects) {
    const Rect c = clip_rect(r, height, width);
    for (int y = c.y; y < c.y + c.h; ++y)
      for (int x = c.x; x < c.x + c.w; ++x) mask.set(y, x, true);
  }
  return mask;
}

Rect centered_rect(int box_w, int box_h, int height, int width) {
  return {(width - box_w) / 2, (height - box_h) / 2, box_w, box_h};
}

Rect aspect_box(double ratio_h, double ratio_w, double area) {
  if (!(ratio_h > 0.0 && ratio_w > 0.0 && area > 0.0)) throw ConfigError("aspect ratio and area must be positive");
  const int h = static_cast<int>(std::lround(std::sqrt(area * ratio_h / ratio_w)));
  const int w = static_cast<int>(std::lround(std::sqrt(area * ratio_w / ratio_h)));
  return {0, 0, std::max(w, 1), std::max(h, 1)};
}

}  // namespace advoverlay
