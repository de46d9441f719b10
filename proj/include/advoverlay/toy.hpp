#pragma once

// Small-scale stand-in for a pretrained detector: a synthetic scene
// generator, a YOLO-style training loss and an Adam training loop.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "advoverlay/decode.hpp"
#include "advoverlay/tensor.hpp"
#include "advoverlay/yolo_net.hpp"

namespace advoverlay {

inline constexpr int kToySide = 128;
inline constexpr int kToyClasses = 4;  // 1 square, 2 disk, 3 triangle, 4 cross

struct SceneObject {
  Box box;  // pixels, centre format
  int class_id = 0;
  bool operator==(const SceneObject&) const = default;
};

struct Scene {
  ImageTensor image;
  std::vector<SceneObject> objects;
};

/// Shaded background with 1 to `max_objects` non-overlapping flat-coloured
/// shapes. Deterministic in `seed`.
Scene generate_scene(std::uint64_t seed, int side = kToySide, int max_objects = 3);

/// Writes `count` scenes as scene_000.png, scene_001.png, ... using scene
/// seeds mix_seed(seed, i). Returns the written paths in order.
std::vector<std::filesystem::path> write_scene_corpus(const std::filesystem::path& dir, int count,
                                                      std::uint64_t seed, int side = kToySide);

/// Three scales (strides 32/16/8) with three anchors each, sized for the
/// 14-52 pixel objects of generate_scene.
ScaleConfig toy_scale_config();

/// YOLOv3-style training objective over one image:
///   responsible candidate (best anchor-shape IoU, containing cell):
///     BCE on sigmoid(tx), sigmoid(ty) against the in-cell offset,
///     squared error on tw, th against log(size / anchor),
///     BCE on objectness (target 1) and every class logit;
///   other candidates: BCE on objectness with target 0, unless their decoded
///     box overlaps a ground-truth box with IoU > ignore_iou.
/// Accumulates d(loss)/d(raw) into `grad` when non-null.
double training_loss(const RawPrediction& raw, const ScaleConfig& config, const std::vector<SceneObject>& truth,
                     RawPrediction* grad, double ignore_iou = 0.5);

struct TrainOptions {
  int trunk_width = 8;
  int steps = 1500;
  int batch = 8;
  double learning_rate = 2e-3;
  std::uint64_t seed = 1;
};

/// Adam on freshly generated scenes. The returned parameters are rounded to
/// float so they survive a save/load round trip unchanged.
DetectorWeights train_toy_detector(const TrainOptions& options,
                                   const std::function<void(int step, double loss)>& progress = {});

}  // namespace advoverlay
