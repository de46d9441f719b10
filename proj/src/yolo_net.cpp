#include "advoverlay/yolo_net.hpp"

#include <Eigen/Core>
#include <bit>
#include <string>

#include "advoverlay/errors.hpp"
#include "advoverlay/random.hpp"

namespace advoverlay {

namespace {

constexpr double kLeakySlope = 0.1;
constexpr double kInitRange = 0.1;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

int output_extent(int extent, const ConvLayer& layer) {
  return (extent + 2 * layer.padding() - layer.kernel) / layer.stride + 1;
}

bool is_pointwise(const ConvLayer& layer) { return layer.kernel == 1 && layer.stride == 1; }

// Unfold input patches into a (in * k * k) x (out_h * out_w) matrix.
RowMatrix im2col(const Tensor3& input, const ConvLayer& layer, int out_h, int out_w) {
  const int k = layer.kernel;
  const int pad = layer.padding();
  RowMatrix cols(static_cast<Eigen::Index>(layer.in_channels) * k * k,
                 static_cast<Eigen::Index>(out_h) * out_w);
  for (int c = 0; c < layer.in_channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols.row((c * k + ky) * k + kx).data();
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * layer.stride + ky - pad;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * layer.stride + kx - pad;
            const bool inside = iy >= 0 && iy < input.height() && ix >= 0 && ix < input.width();
            row[oy * out_w + ox] = inside ? input.at(c, iy, ix) : 0.0;
          }
        }
      }
    }
  }
  return cols;
}

void col2im_add(const RowMatrix& cols, const ConvLayer& layer, int out_h, int out_w, Tensor3& grad_input) {
  const int k = layer.kernel;
  const int pad = layer.padding();
  for (int c = 0; c < layer.in_channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = cols.row((c * k + ky) * k + kx).data();
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * layer.stride + ky - pad;
          if (iy < 0 || iy >= grad_input.height()) continue;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * layer.stride + kx - pad;
            if (ix < 0 || ix >= grad_input.width()) continue;
            grad_input.at(c, iy, ix) += row[oy * out_w + ox];
          }
        }
      }
    }
  }
}

Tensor3 conv_forward(const Tensor3& input, const ConvLayer& layer) {
  const int out_h = output_extent(input.height(), layer);
  const int out_w = output_extent(input.width(), layer);
  Tensor3 out(layer.out_channels, out_h, out_w);
  ConstMatrixMap w(layer.weight.data(), layer.out_channels,
                   static_cast<Eigen::Index>(layer.in_channels) * layer.kernel * layer.kernel);
  MatrixMap y(out.values().data(), layer.out_channels, static_cast<Eigen::Index>(out_h) * out_w);
  if (is_pointwise(layer)) {
    ConstMatrixMap x(input.values().data(), layer.in_channels, static_cast<Eigen::Index>(out_h) * out_w);
    y.noalias() = w * x;
  } else {
    y.noalias() = w * im2col(input, layer, out_h, out_w);
  }
  y.colwise() += ConstVectorMap(layer.bias.data(), layer.out_channels);
  return out;
}

// grad_output has the conv output's shape. Returns d/d(input); accumulates
// parameter gradients into `param_grad` when given.
Tensor3 conv_backward(const Tensor3& input, const ConvLayer& layer, const Tensor3& grad_output,
                      ConvLayer* param_grad) {
  const int out_h = grad_output.height();
  const int out_w = grad_output.width();
  const Eigen::Index patch = static_cast<Eigen::Index>(layer.in_channels) * layer.kernel * layer.kernel;
  ConstMatrixMap w(layer.weight.data(), layer.out_channels, patch);
  ConstMatrixMap dy(grad_output.values().data(), layer.out_channels, static_cast<Eigen::Index>(out_h) * out_w);
  Tensor3 grad_input(input.channels(), input.height(), input.width());

  if (is_pointwise(layer)) {
    ConstMatrixMap x(input.values().data(), layer.in_channels, static_cast<Eigen::Index>(out_h) * out_w);
    MatrixMap dx(grad_input.values().data(), layer.in_channels, static_cast<Eigen::Index>(out_h) * out_w);
    dx.noalias() = w.transpose() * dy;
    if (param_grad) {
      MatrixMap dw(param_grad->weight.data(), layer.out_channels, patch);
      dw.noalias() += dy * x.transpose();
    }
  } else {
    const RowMatrix dcols = w.transpose() * dy;
    col2im_add(dcols, layer, out_h, out_w, grad_input);
    if (param_grad) {
      MatrixMap dw(param_grad->weight.data(), layer.out_channels, patch);
      dw.noalias() += dy * im2col(input, layer, out_h, out_w).transpose();
    }
  }
  if (param_grad) {
    Eigen::Map<Eigen::VectorXd> db(param_grad->bias.data(), layer.out_channels);
    db += dy.rowwise().sum();
  }
  return grad_input;
}

Tensor3 leaky(const Tensor3& pre) {
  Tensor3 out = pre;
  for (double& v : out.values())
    if (!(v > 0.0)) v *= kLeakySlope;
  return out;
}

void leaky_backward_inplace(const Tensor3& pre, Tensor3& grad) {
  auto& g = grad.values();
  const auto& z = pre.values();
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!(z[i] > 0.0)) g[i] *= kLeakySlope;
}

Tensor3 upsample_concat(const Tensor3& coarse, int factor, const Tensor3& skip) {
  Tensor3 out(coarse.channels() + skip.channels(), skip.height(), skip.width());
  for (int c = 0; c < coarse.channels(); ++c)
    for (int y = 0; y < skip.height(); ++y)
      for (int x = 0; x < skip.width(); ++x) out.at(c, y, x) = coarse.at(c, y / factor, x / factor);
  auto tail = out.values().begin() + static_cast<std::ptrdiff_t>(coarse.channels() * skip.plane_size());
  std::copy(skip.values().begin(), skip.values().end(), tail);
  return out;
}

// Split d(concat) into d(coarse) (sum-pooled back through the upsample)
// added into `grad_coarse`, and d(skip) added into `grad_skip`.
void upsample_concat_backward(const Tensor3& grad_route, int factor, Tensor3& grad_coarse, Tensor3& grad_skip) {
  for (int c = 0; c < grad_coarse.channels(); ++c)
    for (int y = 0; y < grad_route.height(); ++y)
      for (int x = 0; x < grad_route.width(); ++x)
        grad_coarse.at(c, y / factor, x / factor) += grad_route.at(c, y, x);
  const std::size_t offset = static_cast<std::size_t>(grad_coarse.channels()) * grad_route.plane_size();
  auto& dst = grad_skip.values();
  const auto& src = grad_route.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[offset + i];
}

int level_of_stride(int stride) { return std::countr_zero(static_cast<unsigned>(stride)); }

}  // namespace

void Detector::check_input(const ImageTensor& image) const {
  if (image.channels() != input_channels() || image.height() != input_side() ||
      image.width() != input_side())
    throw ShapeError("detector expects " + std::to_string(input_channels()) + "x" +
                     std::to_string(input_side()) + "x" + std::to_string(input_side()) +
                     " input, got " + std::to_string(image.channels()) + "x" +
                     std::to_string(image.height()) + "x" + std::to_string(image.width()));
}

int Architecture::trunk_levels() const { return level_of_stride(scales.max_stride()); }

void Architecture::validate() const {
  scales.validate();
  if (input_channels != 1 && input_channels != 3) throw ConfigError("input_channels must be 1 or 3");
  if (trunk_width < 1) throw ConfigError("trunk_width must be >= 1");
}

std::size_t DetectorWeights::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

std::vector<ConvLayer> layer_shapes(const Architecture& arch) {
  arch.validate();
  std::vector<ConvLayer> layers;
  const int levels = arch.trunk_levels();
  int channels = arch.input_channels;
  for (int level = 1; level <= levels; ++level) {
    const int out = arch.trunk_width * level;
    layers.push_back({channels, out, 3, 2, {}, {}});
    channels = out;
  }
  int route_channels = 0;
  for (const auto& scale : arch.scales.scales) {
    route_channels += arch.trunk_width * level_of_stride(scale.stride);
    layers.push_back({route_channels, arch.scales.boxes_per_cell * arch.scales.values_per_box(), 1, 1, {}, {}});
  }
  for (auto& l : layers) {
    l.weight.assign(static_cast<std::size_t>(l.out_channels) * l.in_channels * l.kernel * l.kernel, 0.0);
    l.bias.assign(l.out_channels, 0.0);
  }
  return layers;
}

DetectorWeights init_detector(const ScaleConfig& config, int input_side, std::uint64_t seed,
                              int input_channels, int trunk_width) {
  for (const auto& s : config.scales) {
    if (s.stride <= 0 || input_side % s.stride != 0)
      throw ConfigError("input side " + std::to_string(input_side) + " is not divisible by stride " +
                        std::to_string(s.stride));
  }
  Architecture arch{config, input_channels, trunk_width};
  for (auto& s : arch.scales.scales) s.grid_size = input_side / s.stride;
  DetectorWeights weights{arch, seed, layer_shapes(arch)};
  Xoshiro256 rng(seed);
  for (auto& layer : weights.layers)
    for (double& w : layer.weight) w = static_cast<float>(rng.uniform(-kInitRange, kInitRange));
  return weights;
}

YoloNet::YoloNet(DetectorWeights weights) : weights_(std::move(weights)) {
  const auto expected = layer_shapes(weights_.architecture);
  if (expected.size() != weights_.layers.size())
    throw ShapeError("weights have " + std::to_string(weights_.layers.size()) + " layers, architecture needs " +
                     std::to_string(expected.size()));
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& a = expected[i];
    const auto& b = weights_.layers[i];
    if (a.in_channels != b.in_channels || a.out_channels != b.out_channels || a.kernel != b.kernel ||
        a.stride != b.stride || a.weight.size() != b.weight.size() || a.bias.size() != b.bias.size())
      throw ShapeError("layer " + std::to_string(i) + " does not match the architecture");
  }
  for (const auto& s : scale_config().scales) scale_levels_.push_back(level_of_stride(s.stride));
}

ForwardTrace YoloNet::trace(const Tensor3& input) const {
  const auto& arch = weights_.architecture;
  const auto& config = arch.scales;
  const int levels = arch.trunk_levels();
  ForwardTrace t;
  t.trunk_inputs.reserve(levels + 1);
  t.trunk_inputs.push_back(input);
  for (int level = 0; level < levels; ++level) {
    t.trunk_pre.push_back(conv_forward(t.trunk_inputs.back(), weights_.layers[level]));
    t.trunk_inputs.push_back(leaky(t.trunk_pre.back()));
  }
  // trunk_inputs[level] is the activated output of trunk layer `level` (1-based).
  t.prediction = RawPrediction::zeros(config);
  for (std::size_t i = 0; i < config.scales.size(); ++i) {
    const Tensor3& skip = t.trunk_inputs[scale_levels_[i]];
    if (i == 0) {
      t.routes.push_back(skip);
    } else {
      const int factor = config.scales[i - 1].stride / config.scales[i].stride;
      t.routes.push_back(upsample_concat(t.routes.back(), factor, skip));
    }
    const Tensor3 head = conv_forward(t.routes.back(), weights_.layers[levels + i]);
    auto& out = t.prediction.scales[i];
    const int per_box = out.values_per_box;
    for (int row = 0; row < out.grid_size; ++row)
      for (int col = 0; col < out.grid_size; ++col)
        for (int a = 0; a < out.boxes_per_cell; ++a)
          for (int f = 0; f < per_box; ++f) out.at(row, col, a, f) = head.at(a * per_box + f, row, col);
  }
  return t;
}

Tensor3 YoloNet::backward(const ForwardTrace& t, const RawPrediction& grad_raw,
                          std::vector<ConvLayer>* parameter_grads) const {
  const auto& config = weights_.architecture.scales;
  grad_raw.check_layout(config);
  const int levels = weights_.architecture.trunk_levels();
  if (parameter_grads && parameter_grads->size() != weights_.layers.size())
    throw ShapeError("parameter gradient buffer has the wrong layer count");
  auto param = [&](std::size_t i) { return parameter_grads ? &(*parameter_grads)[i] : nullptr; };

  std::vector<Tensor3> grad_trunk;  // d/d(activated trunk output), index = level
  grad_trunk.reserve(levels + 1);
  for (const auto& x : t.trunk_inputs) grad_trunk.emplace_back(x.channels(), x.height(), x.width());

  std::vector<Tensor3> grad_routes;
  for (const auto& r : t.routes) grad_routes.emplace_back(r.channels(), r.height(), r.width());

  const int n_scales = static_cast<int>(config.scales.size());
  for (int i = n_scales - 1; i >= 0; --i) {
    const auto& g = grad_raw.scales[i];
    const ConvLayer& head = weights_.layers[levels + i];
    Tensor3 grad_head(head.out_channels, g.grid_size, g.grid_size);
    const int per_box = g.values_per_box;
    for (int row = 0; row < g.grid_size; ++row)
      for (int col = 0; col < g.grid_size; ++col)
        for (int a = 0; a < g.boxes_per_cell; ++a)
          for (int f = 0; f < per_box; ++f) grad_head.at(a * per_box + f, row, col) = g.at(row, col, a, f);
    const Tensor3 d_route = conv_backward(t.routes[i], head, grad_head, param(levels + i));
    auto& acc = grad_routes[i].values();
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += d_route.values()[k];
    if (i == 0) {
      auto& dst = grad_trunk[scale_levels_[0]].values();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += acc[k];
    } else {
      const int factor = config.scales[i - 1].stride / config.scales[i].stride;
      upsample_concat_backward(grad_routes[i], factor, grad_routes[i - 1], grad_trunk[scale_levels_[i]]);
    }
  }

  for (int level = levels; level >= 1; --level) {
    Tensor3 grad_pre = std::move(grad_trunk[level]);
    leaky_backward_inplace(t.trunk_pre[level - 1], grad_pre);
    Tensor3 d_in = conv_backward(t.trunk_inputs[level - 1], weights_.layers[level - 1], grad_pre, param(level - 1));
    auto& dst = grad_trunk[level - 1].values();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += d_in.values()[k];
  }
  return std::move(grad_trunk[0]);
}

RawPrediction YoloNet::forward(const ImageTensor& image) const {
  check_input(image);
  return trace(image.tensor()).prediction;
}

GradientResult YoloNet::input_gradient(const ImageTensor& image, const LossFunction& loss) const {
  check_input(image);
  ForwardTrace t = trace(image.tensor());
  RawPrediction grad_raw = RawPrediction::zeros(scale_config());
  const double value = loss(t.prediction, grad_raw);
  Tensor3 gradient = backward(t, grad_raw);
  return {value, std::move(t.prediction), std::move(gradient)};
}

}  // namespace advoverlay
