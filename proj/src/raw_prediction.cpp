#include "advoverlay/raw_prediction.hpp"

#include <string>

#include "advoverlay/errors.hpp"

namespace advoverlay {

RawPrediction RawPrediction::zeros(const ScaleConfig& config) {
  RawPrediction raw;
  for (const auto& s : config.scales) {
    ScaleOutput out{s.grid_size, config.boxes_per_cell, config.values_per_box(), {}};
    out.values.assign(out.candidate_count() * out.values_per_box, 0.0);
    raw.scales.push_back(std::move(out));
  }
  return raw;
}

std::size_t RawPrediction::candidate_count() const {
  std::size_t total = 0;
  for (const auto& s : scales) total += s.candidate_count();
  return total;
}

std::span<double> RawPrediction::candidate(std::size_t index) {
  for (auto& s : scales) {
    const std::size_t n = s.candidate_count();
    if (index < n) return {s.values.data() + index * s.values_per_box, static_cast<std::size_t>(s.values_per_box)};
    index -= n;
  }
  throw ShapeError("candidate index out of range");
}

std::span<const double> RawPrediction::candidate(std::size_t index) const {
  for (const auto& s : scales) {
    const std::size_t n = s.candidate_count();
    if (index < n) return {s.values.data() + index * s.values_per_box, static_cast<std::size_t>(s.values_per_box)};
    index -= n;
  }
  throw ShapeError("candidate index out of range");
}

void RawPrediction::check_layout(const ScaleConfig& config) const {
  if (scales.size() != config.scales.size())
    throw ShapeError("prediction has " + std::to_string(scales.size()) + " scales, config has " +
                     std::to_string(config.scales.size()));
  for (std::size_t i = 0; i < scales.size(); ++i) {
    const auto& s = scales[i];
    if (s.grid_size != config.scales[i].grid_size || s.boxes_per_cell != config.boxes_per_cell ||
        s.values_per_box != config.values_per_box() ||
        s.values.size() != s.candidate_count() * s.values_per_box)
      throw ShapeError("prediction scale " + std::to_string(i) + " does not match config");
  }
}

}  // namespace advoverlay
