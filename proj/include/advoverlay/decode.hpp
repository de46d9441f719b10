#pragma once

#include <cstddef>
#include <vector>

#include "advoverlay/raw_prediction.hpp"

namespace advoverlay {

inline constexpr double kDefaultConfThreshold = 0.5;
inline constexpr double kDefaultIouThreshold = 0.45;
/// exp() argument cap in the box-size transform.
inline constexpr double kMaxLogScale = 10.0;

struct Box {
  double x = 0.0;  // center
  double y = 0.0;  // center
  double w = 0.0;
  double h = 0.0;
  bool operator==(const Box&) const = default;
};

struct Detection {
  Box box;
  int class_id = 0;  // 1-based, in [1, K]
  double objectness = 0.0;
  double class_prob = 0.0;
  double score = 0.0;  // objectness * class_prob
  std::size_t candidate = 0;  // flat candidate index in the RawPrediction
  bool operator==(const Detection&) const = default;
};

double sigmoid(double x);
double iou(const Box& a, const Box& b);

/// Standard YOLOv3 box transform for every candidate whose
/// sigmoid(c) * max_j sigmoid(p_j) exceeds `conf_threshold`, in candidate order.
std::vector<Detection> decode(const RawPrediction& raw, const ScaleConfig& config,
                              double conf_threshold = kDefaultConfThreshold);

/// Greedy class-wise non-maximum suppression. Output is sorted by score
/// (descending); equal scores keep their input order.
std::vector<Detection> nms(std::vector<Detection> detections, double iou_threshold = kDefaultIouThreshold);

/// decode() followed by nms() with the default drawing thresholds.
std::vector<Detection> detect_boxes(const RawPrediction& raw, const ScaleConfig& config,
                                    double conf_threshold = kDefaultConfThreshold,
                                    double iou_threshold = kDefaultIouThreshold);

}  // namespace advoverlay
