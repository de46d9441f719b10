#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "advoverlay/scale_config.hpp"

namespace advoverlay {

/// Field offsets inside one candidate's K + 5 raw values.
enum Field : int { kTx = 0, kTy = 1, kTw = 2, kTh = 3, kObjectness = 4, kFirstClass = 5 };

/// Raw (pre-sigmoid) head output for one scale, shape (S, S, B, K + 5),
/// row-major: row, col, anchor, field.
struct ScaleOutput {
  int grid_size = 0;
  int boxes_per_cell = 0;
  int values_per_box = 0;
  std::vector<double> values;

  std::size_t offset(int row, int col, int anchor) const {
    return ((static_cast<std::size_t>(row) * grid_size + col) * boxes_per_cell + anchor) *
           values_per_box;
  }
  double& at(int row, int col, int anchor, int field) { return values[offset(row, col, anchor) + field]; }
  double at(int row, int col, int anchor, int field) const {
    return values[offset(row, col, anchor) + field];
  }
  std::size_t candidate_count() const {
    return static_cast<std::size_t>(grid_size) * grid_size * boxes_per_cell;
  }

  bool operator==(const ScaleOutput&) const = default;
};

/// One ScaleOutput per configured scale. Candidates are numbered scale by
/// scale, then row, column, anchor.
struct RawPrediction {
  std::vector<ScaleOutput> scales;

  /// Zero-filled prediction laid out for `config`.
  static RawPrediction zeros(const ScaleConfig& config);

  std::size_t candidate_count() const;

  /// The K + 5 values of flat candidate `index`.
  std::span<double> candidate(std::size_t index);
  std::span<const double> candidate(std::size_t index) const;

  /// Throws ShapeError unless the layout matches `config` exactly.
  void check_layout(const ScaleConfig& config) const;

  bool operator==(const RawPrediction&) const = default;
};

}  // namespace advoverlay
