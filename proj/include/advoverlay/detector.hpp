#pragma once

#include <functional>

#include "advoverlay/raw_prediction.hpp"
#include "advoverlay/scale_config.hpp"
#include "advoverlay/tensor.hpp"

namespace advoverlay {

/// A scalar objective over raw logits. Returns the value and writes
/// d(value)/d(raw) into `grad`, which arrives zero-filled with raw's layout.
using LossFunction = std::function<double(const RawPrediction& raw, RawPrediction& grad)>;

struct GradientResult {
  double loss = 0.0;
  RawPrediction prediction;  // forward output at the evaluated image
  Tensor3 gradient;          // d(loss)/d(image), same shape as the image
};

/// Anything that maps an image to YOLO-layout logits and can backpropagate a
/// loss on those logits to the input pixels. Implementations must be
/// reentrant: forward() and input_gradient() never mutate the detector.
class Detector {
 public:
  virtual ~Detector() = default;

  virtual const ScaleConfig& scale_config() const = 0;
  virtual int input_side() const = 0;
  virtual int input_channels() const = 0;

  virtual RawPrediction forward(const ImageTensor& image) const = 0;
  virtual GradientResult input_gradient(const ImageTensor& image, const LossFunction& loss) const = 0;

 protected:
  /// Throws ShapeError unless `image` is input_channels x side x side.
  void check_input(const ImageTensor& image) const;
};

}  // namespace advoverlay
