#pragma once

#include <cstddef>
#include <vector>

namespace advoverlay {

struct Anchor {
  double width = 0.0;   // pixels
  double height = 0.0;  // pixels
  bool operator==(const Anchor&) const = default;
};

/// One YOLO output layer: an S x S grid of cells, each `stride` pixels wide,
/// predicting one box per anchor.
struct Scale {
  int grid_size = 0;
  int stride = 0;
  std::vector<Anchor> anchors;
  bool operator==(const Scale&) const = default;
};

/// Output layout of a detector. Scales are ordered coarsest first
/// (largest stride), the way YOLOv3 emits its 13 / 26 / 52 heads.
struct ScaleConfig {
  std::vector<Scale> scales;
  int boxes_per_cell = 0;
  int num_classes = 0;

  int values_per_box() const { return num_classes + 5; }
  int input_side() const { return scales.empty() ? 0 : scales.front().grid_size * scales.front().stride; }
  int max_stride() const;
  /// |O| = sum over scales of S * S * B.
  std::size_t candidate_count() const;

  /// Throws ConfigError when an invariant is broken.
  void validate() const;

  bool operator==(const ScaleConfig&) const = default;
};

/// Build a config from strides + anchors for a given square input side.
/// Grid sizes are derived as side / stride.
ScaleConfig make_scale_config(int input_side, const std::vector<int>& strides,
                              const std::vector<std::vector<Anchor>>& anchors, int num_classes);

/// The 416 x 416, 80-class, three-scale YOLOv3 layout (13 / 26 / 52 grids).
ScaleConfig yolov3_scale_config(int num_classes = 80);

}  // namespace advoverlay
