#include "advoverlay/decode.hpp"

#include <algorithm>
#include <cmath>

namespace advoverlay {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.x + a.w / 2, b.x + b.w / 2) - std::max(a.x - a.w / 2, b.x - b.w / 2));
  const double iy = std::max(0.0, std::min(a.y + a.h / 2, b.y + b.h / 2) - std::max(a.y - a.h / 2, b.y - b.h / 2));
  const double inter = ix * iy;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

std::vector<Detection> decode(const RawPrediction& raw, const ScaleConfig& config, double conf_threshold) {
  raw.check_layout(config);
  std::vector<Detection> out;
  std::size_t candidate = 0;
  for (std::size_t si = 0; si < raw.scales.size(); ++si) {
    const auto& grid = raw.scales[si];
    const auto& scale = config.scales[si];
    for (int row = 0; row < grid.grid_size; ++row) {
      for (int col = 0; col < grid.grid_size; ++col) {
        for (int a = 0; a < grid.boxes_per_cell; ++a, ++candidate) {
          const double objectness = sigmoid(grid.at(row, col, a, kObjectness));
          int best = 0;
          double best_prob = -1.0;
          for (int k = 0; k < config.num_classes; ++k) {
            const double p = sigmoid(grid.at(row, col, a, kFirstClass + k));
            if (p > best_prob) {
              best_prob = p;
              best = k;
            }
          }
          const double score = objectness * best_prob;
          if (!(score > conf_threshold)) continue;
          const Anchor& anchor = scale.anchors[a];
          Detection d;
          d.box.x = (sigmoid(grid.at(row, col, a, kTx)) + col) * scale.stride;
          d.box.y = (sigmoid(grid.at(row, col, a, kTy)) + row) * scale.stride;
          d.box.w = anchor.width * std::exp(std::min(grid.at(row, col, a, kTw), kMaxLogScale));
          d.box.h = anchor.height * std::exp(std::min(grid.at(row, col, a, kTh), kMaxLogScale));
          d.class_id = best + 1;
          d.objectness = objectness;
          d.class_prob = best_prob;
          d.score = score;
          d.candidate = candidate;
          out.push_back(d);
        }
      }
    }
  }
  return out;
}

std::vector<Detection> nms(std::vector<Detection> detections, double iou_threshold) {
  std::stable_sort(detections.begin(), detections.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.candidate < b.candidate;
  });
  std::vector<Detection> kept;
  for (const auto& d : detections) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return k.class_id == d.class_id && iou(k.box, d.box) > iou_threshold;
    });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

std::vector<Detection> detect_boxes(const RawPrediction& raw, const ScaleConfig& config, double conf_threshold,
                                    double iou_threshold) {
  return nms(decode(raw, config, conf_threshold), iou_threshold);
}

}  // namespace advoverlay
