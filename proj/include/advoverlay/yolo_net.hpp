#pragma once

#include <cstdint>
#include <vector>

#include "advoverlay/detector.hpp"

namespace advoverlay {

/// Hyper-parameters of the reference network. Everything needed to rebuild
/// the layer list lives here, so it is also what the weights file stores.
struct Architecture {
  ScaleConfig scales;
  int input_channels = 3;
  int trunk_width = 8;  // trunk level l (1-based) has trunk_width * l channels

  int trunk_levels() const;  // log2(max stride)
  int input_side() const { return scales.input_side(); }
  void validate() const;
  bool operator==(const Architecture&) const = default;
};

struct ConvLayer {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  std::vector<double> weight;  // out x in x kernel x kernel
  std::vector<double> bias;    // out

  int padding() const { return kernel / 2; }
  bool operator==(const ConvLayer&) const = default;
};

/// Layer parameters in declaration order: trunk convolutions (3x3, stride 2)
/// from the input down to the coarsest grid, then one 1x1 head per scale in
/// ScaleConfig order.
struct DetectorWeights {
  Architecture architecture;
  std::uint64_t seed = 0;
  std::vector<ConvLayer> layers;

  std::size_t parameter_count() const;
  bool operator==(const DetectorWeights&) const = default;
};

/// Layer shapes for `arch` with zero parameters.
std::vector<ConvLayer> layer_shapes(const Architecture& arch);

/// Kernels uniform in [-0.1, 0.1] (rounded to float so a save/load round
/// trip is exact), biases zero. Throws ConfigError if the input side is not
/// divisible by every stride.
DetectorWeights init_detector(const ScaleConfig& config, int input_side, std::uint64_t seed,
                              int input_channels = 3, int trunk_width = 8);

/// Intermediate activations kept for backpropagation.
struct ForwardTrace {
  std::vector<Tensor3> trunk_inputs;  // input to trunk layer l (index 0 is the image)
  std::vector<Tensor3> trunk_pre;     // pre-activation of trunk layer l
  std::vector<Tensor3> routes;        // head input per scale
  RawPrediction prediction;
};

/// Multi-scale fully convolutional YOLO-style detector with hand-written
/// reverse-mode gradients:
///
///   trunk:  [conv3x3/2 + leaky(0.1)] x log2(max stride)
///   route0: trunk output at the coarsest stride
///   routeI: concat(upsample_nearest(route(I-1)), trunk output at stride I)
///   head:   conv1x1(route) -> B * (K + 5) channels per cell
class YoloNet final : public Detector {
 public:
  explicit YoloNet(DetectorWeights weights);

  const ScaleConfig& scale_config() const override { return weights_.architecture.scales; }
  int input_side() const override { return weights_.architecture.input_side(); }
  int input_channels() const override { return weights_.architecture.input_channels; }
  const DetectorWeights& weights() const { return weights_; }

  RawPrediction forward(const ImageTensor& image) const override;
  GradientResult input_gradient(const ImageTensor& image, const LossFunction& loss) const override;

  ForwardTrace trace(const Tensor3& input) const;

  /// Backpropagate d(loss)/d(raw) through a recorded trace. Returns the input
  /// gradient; when `parameter_grads` is non-null, parameter gradients are
  /// accumulated into it (shapes as weights().layers).
  Tensor3 backward(const ForwardTrace& trace, const RawPrediction& grad_raw,
                   std::vector<ConvLayer>* parameter_grads = nullptr) const;

 private:
  DetectorWeights weights_;
  std::vector<int> scale_levels_;  // trunk level feeding each scale
};

}  // namespace advoverlay
