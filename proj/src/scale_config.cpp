#include "advoverlay/scale_config.hpp"

#include <algorithm>
#include <string>

#include "advoverlay/errors.hpp"

namespace advoverlay {

int ScaleConfig::max_stride() const {
  int best = 0;
  for (const auto& s : scales) best = std::max(best, s.stride);
  return best;
}

std::size_t ScaleConfig::candidate_count() const {
  std::size_t total = 0;
  for (const auto& s : scales)
    total += static_cast<std::size_t>(s.grid_size) * s.grid_size * boxes_per_cell;
  return total;
}

void ScaleConfig::validate() const {
  if (scales.empty()) throw ConfigError("scale config needs at least one scale");
  if (boxes_per_cell < 1) throw ConfigError("boxes_per_cell must be >= 1");
  if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
  const int side = input_side();
  int previous_stride = 0;
  for (std::size_t i = 0; i < scales.size(); ++i) {
    const auto& s = scales[i];
    const std::string where = "scale " + std::to_string(i) + ": ";
    if (s.stride < 2 || (s.stride & (s.stride - 1)) != 0)
      throw ConfigError(where + "stride must be a power of two >= 2");
    if (s.grid_size < 1) throw ConfigError(where + "grid size must be >= 1");
    if (s.grid_size * s.stride != side)
      throw ConfigError(where + "grid_size * stride must equal the input side");
    if (static_cast<int>(s.anchors.size()) != boxes_per_cell)
      throw ConfigError(where + "anchor count must equal boxes_per_cell");
    for (const auto& a : s.anchors)
      if (!(a.width > 0.0 && a.height > 0.0)) throw ConfigError(where + "anchors must be positive");
    if (i > 0 && s.stride >= previous_stride)
      throw ConfigError(where + "scales must be ordered by strictly decreasing stride");
    previous_stride = s.stride;
  }
}

ScaleConfig make_scale_config(int input_side, const std::vector<int>& strides,
                              const std::vector<std::vector<Anchor>>& anchors, int num_classes) {
  if (strides.size() != anchors.size()) throw ConfigError("one anchor list per stride required");
  if (input_side <= 0) throw ConfigError("input side must be positive");
  ScaleConfig config;
  config.num_classes = num_classes;
  config.boxes_per_cell = anchors.empty() ? 0 : static_cast<int>(anchors.front().size());
  for (std::size_t i = 0; i < strides.size(); ++i) {
    if (strides[i] <= 0 || input_side % strides[i] != 0)
      throw ConfigError("input side " + std::to_string(input_side) +
                        " is not divisible by stride " + std::to_string(strides[i]));
    config.scales.push_back({input_side / strides[i], strides[i], anchors[i]});
  }
  config.validate();
  return config;
}

ScaleConfig yolov3_scale_config(int num_classes) {
  return make_scale_config(416, {32, 16, 8},
                           {{{116, 90}, {156, 198}, {373, 326}},
                            {{30, 61}, {62, 45}, {59, 119}},
                            {{10, 13}, {16, 30}, {33, 23}}},
                           num_classes);
}

}  // namespace advoverlay
