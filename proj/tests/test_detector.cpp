#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "advoverlay/errors.hpp"
#include "advoverlay/weights_io.hpp"
#include "test_support.hpp"

using namespace advoverlay;
using namespace advoverlay::testing;

namespace {

ScaleConfig single_scale_config() {
  return make_scale_config(32, {8}, {{{8, 8}}}, 2);
}

double sum_of_logits(const RawPrediction& raw, RawPrediction& grad) {
  double s = 0.0;
  for (std::size_t i = 0; i < raw.scales.size(); ++i)
    for (std::size_t k = 0; k < raw.scales[i].values.size(); ++k) {
      s += raw.scales[i].values[k];
      grad.scales[i].values[k] = 1.0;
    }
  return s;
}

}  // namespace

TEST(InitDetector, FullYoloLayoutHasYolov3HeadShapes) {
  const DetectorWeights w = init_detector(yolov3_scale_config(80), 416, 7);
  YoloNet net(w);
  const RawPrediction raw = net.forward(ImageTensor(3, 416, 416, 0.5));
  ASSERT_EQ(raw.scales.size(), 3u);
  const int grids[] = {13, 26, 52};
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(raw.scales[i].grid_size, grids[i]);
    EXPECT_EQ(raw.scales[i].boxes_per_cell, 3);
    EXPECT_EQ(raw.scales[i].values_per_box, 85);
  }
  EXPECT_EQ(raw.candidate_count(), 10647u);
  EXPECT_EQ(net.scale_config().candidate_count(), 10647u);
}

TEST(InitDetector, SingleScaleHeadShape) {
  YoloNet net(init_detector(single_scale_config(), 32, 0));
  const RawPrediction raw = net.forward(ImageTensor(3, 32, 32, 0.0));
  ASSERT_EQ(raw.scales.size(), 1u);
  EXPECT_EQ(raw.scales[0].grid_size, 4);
  EXPECT_EQ(raw.scales[0].boxes_per_cell, 1);
  EXPECT_EQ(raw.scales[0].values_per_box, 7);
}

TEST(InitDetector, DeterministicForEqualArguments) {
  const auto a = init_detector(yolov3_scale_config(80), 416, 7);
  const auto b = init_detector(yolov3_scale_config(80), 416, 7);
  EXPECT_EQ(a, b);
  const auto c = init_detector(yolov3_scale_config(80), 416, 8);
  EXPECT_NE(a.layers.front().weight, c.layers.front().weight);
}

TEST(InitDetector, KernelsInRangeAndBiasesZero) {
  const auto w = init_detector(single_scale_config(), 32, 3);
  for (const auto& l : w.layers) {
    for (double v : l.weight) {
      EXPECT_LE(std::abs(v), 0.1);
    }
    for (double v : l.bias) EXPECT_EQ(v, 0.0);
  }
}

TEST(InitDetector, RejectsIndivisibleSide) {
  EXPECT_THROW(init_detector(yolov3_scale_config(80), 400, 7), ConfigError);
}

TEST(ScaleConfigTest, ValidatesAnchorsAndOrdering) {
  EXPECT_THROW(make_scale_config(32, {8, 16}, {{{1, 1}}, {{1, 1}}}, 2), ConfigError);  // not coarsest first
  EXPECT_THROW(make_scale_config(32, {8}, {{{1, 1}, {2, 2}}, }, 0), ConfigError);       // no classes
  EXPECT_THROW(make_scale_config(36, {12}, {{{1, 1}}}, 1), ConfigError);               // not a power of two
}

TEST(Forward, RejectsWrongInputShape) {
  YoloNet net(init_detector(single_scale_config(), 32, 0));
  EXPECT_THROW(net.forward(ImageTensor(3, 64, 64, 0.0)), ShapeError);
  EXPECT_THROW(net.forward(ImageTensor(1, 32, 32, 0.0)), ShapeError);
}

TEST(Forward, ZeroImageGivesTranslationInvariantLogits) {
  YoloNet net(init_detector(yolov3_scale_config(4), 416, 11));
  const RawPrediction raw = net.forward(ImageTensor(3, 416, 416, 0.0));
  for (const auto& s : raw.scales) {
    for (int row = 0; row < s.grid_size; ++row)
      for (int col = 0; col < s.grid_size; ++col)
        for (int a = 0; a < s.boxes_per_cell; ++a)
          for (int f = 0; f < s.values_per_box; ++f) ASSERT_EQ(s.at(row, col, a, f), s.at(0, 0, a, f));
  }
}

TEST(Forward, PureAndRepeatable) {
  Xoshiro256 rng(5);
  YoloNet net(randomized_weights(single_scale_config(), 32, 5, 3, 4, 0.3));
  const ImageTensor img = random_image(rng, 3, 32);
  EXPECT_EQ(net.forward(img), net.forward(img));
}

// Interval oracle: trunk level l cell j sees input rows [2^l j - (2^l - 1), 2^l j + (2^l - 1)];
// finer heads additionally see everything the coarser route cell j / f sees.
namespace {
bool in_receptive_field(const ScaleConfig& config, int scale, int row, int col, int py, int px) {
  const int stride = config.scales[scale].stride;
  const int reach = stride - 1;
  const bool direct = std::abs(py - stride * row) <= reach && std::abs(px - stride * col) <= reach;
  if (direct) return true;
  if (scale == 0) return false;
  const int factor = config.scales[scale - 1].stride / stride;
  return in_receptive_field(config, scale - 1, row / factor, col / factor, py, px);
}
}  // namespace

TEST(Forward, PixelChangeOnlyAffectsCellsInReceptiveField) {
  Xoshiro256 rng(21);
  const ScaleConfig config = make_scale_config(64, {32, 16, 8}, {{{30, 30}}, {{16, 16}}, {{8, 8}}}, 2);
  YoloNet net(randomized_weights(config, 64, 21, 3, 4, 0.3));
  for (int trial = 0; trial < 6; ++trial) {
    const ImageTensor img = random_image(rng, 3, 64);
    const int py = rng.uniform_int(0, 63);
    const int px = rng.uniform_int(0, 63);
    Tensor3 changed = img.tensor();
    changed.at(1, py, px) = 1.0 - changed.at(1, py, px);
    const RawPrediction a = net.forward(img);
    const RawPrediction b = net.forward(ImageTensor(changed));
    int changed_cells = 0;
    for (std::size_t s = 0; s < a.scales.size(); ++s) {
      const auto& sa = a.scales[s];
      for (int row = 0; row < sa.grid_size; ++row)
        for (int col = 0; col < sa.grid_size; ++col) {
          bool differs = false;
          for (int f = 0; f < sa.values_per_box; ++f) differs |= sa.at(row, col, 0, f) != b.scales[s].at(row, col, 0, f);
          if (differs) {
            ++changed_cells;
            EXPECT_TRUE(in_receptive_field(config, static_cast<int>(s), row, col, py, px))
                << "scale " << s << " cell " << row << "," << col << " pixel " << py << "," << px;
          }
        }
    }
    EXPECT_GT(changed_cells, 0);
  }
}

TEST(InputGradient, ConstantLossGivesZeroGradient) {
  Xoshiro256 rng(1);
  YoloNet net(randomized_weights(single_scale_config(), 32, 1, 3, 4, 0.3));
  const auto r = net.input_gradient(random_image(rng, 3, 32), [](const RawPrediction&, RawPrediction&) { return 3.5; });
  EXPECT_EQ(r.loss, 3.5);
  for (double g : r.gradient.values()) EXPECT_EQ(g, 0.0);
}

TEST(InputGradient, SumOfLogitsMatchesFiniteDifferences) {
  Xoshiro256 rng(2024);
  const ScaleConfig config = make_scale_config(16, {16, 8}, {{{8, 8}, {12, 12}}, {{4, 4}, {6, 6}}}, 2);
  YoloNet net(randomized_weights(config, 16, 17, 3, 4, 0.4));
  const ImageTensor img = random_image(rng, 3, 16);
  const auto r = net.input_gradient(img, sum_of_logits);
  const auto check = check_against_finite_differences(net, img, sum_of_logits, r.gradient, 1e-3);
  EXPECT_GT(check.compared, static_cast<int>(img.tensor().size()) / 2);
  EXPECT_LT(check.max_relative_error, 1e-3);
}

TEST(InputGradient, MultiUntargetedLossMatchesFiniteDifferences) {
  Xoshiro256 rng(77);
  const ScaleConfig config = make_scale_config(16, {8}, {{{8, 8}, {12, 12}}}, 3);
  YoloNet net(randomized_weights(config, 16, 8, 3, 4, 0.5));
  const ImageTensor img = random_image(rng, 3, 16);
  const LossFunction loss = make_adversarial_loss(AttackMode::MultiUntargeted, std::nullopt);
  const auto r = net.input_gradient(img, loss);
  int nonzero = 0;
  for (double g : r.gradient.values()) nonzero += g != 0.0;
  EXPECT_GT(nonzero, 0);
  const auto check = check_against_finite_differences(net, img, loss, r.gradient, 1e-3);
  EXPECT_GT(check.compared, static_cast<int>(img.tensor().size()) / 2);
  EXPECT_LT(check.max_relative_error, 1e-3);
}

TEST(InputGradient, ParameterGradientsMatchFiniteDifferences) {
  // The trainer relies on parameter gradients; spot-check a few of each layer.
  Xoshiro256 rng(3);
  const ScaleConfig config = make_scale_config(16, {16, 8}, {{{8, 8}}, {{4, 4}}}, 2);
  DetectorWeights w = randomized_weights(config, 16, 4, 3, 3, 0.4);
  const ImageTensor img = random_image(rng, 3, 16);
  const LossFunction loss = make_adversarial_loss(AttackMode::MultiUntargeted, std::nullopt);
  YoloNet net(w);
  ForwardTrace t = net.trace(img.tensor());
  RawPrediction g = RawPrediction::zeros(config);
  loss(t.prediction, g);
  std::vector<ConvLayer> grads = layer_shapes(w.architecture);
  net.backward(t, g, &grads);
  auto eval = [&](const DetectorWeights& ww) {
    RawPrediction scratch = RawPrediction::zeros(config);
    return loss(YoloNet(ww).forward(img), scratch);
  };
  const double h = 1e-5;
  for (std::size_t li = 0; li < w.layers.size(); ++li) {
    for (int probe = 0; probe < 3; ++probe) {
      const std::size_t k = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(w.layers[li].weight.size()) - 1));
      DetectorWeights plus = w, minus = w;
      plus.layers[li].weight[k] += h;
      minus.layers[li].weight[k] -= h;
      const double fd = (eval(plus) - eval(minus)) / (2 * h);
      EXPECT_NEAR(grads[li].weight[k], fd, 1e-5 + 1e-4 * std::abs(fd)) << "layer " << li << " weight " << k;
    }
    DetectorWeights plus = w, minus = w;
    plus.layers[li].bias[0] += h;
    minus.layers[li].bias[0] -= h;
    const double fd = (eval(plus) - eval(minus)) / (2 * h);
    EXPECT_NEAR(grads[li].bias[0], fd, 1e-5 + 1e-4 * std::abs(fd)) << "layer " << li << " bias";
  }
}

TEST(WeightsFile, RoundTripIsExact) {
  const auto w = init_detector(yolov3_scale_config(20), 416, 99, 3, 6);
  std::stringstream buf;
  write_weights(buf, w);
  const auto back = read_weights(buf);
  EXPECT_EQ(back, w);
  const std::string bytes = buf.str();
  EXPECT_EQ(bytes.substr(0, 4), "ADVD");
}

TEST(WeightsFile, RejectsBadMagicVersionAndTruncation) {
  const auto w = init_detector(single_scale_config(), 32, 1);
  std::stringstream buf;
  write_weights(buf, w);
  std::string bytes = buf.str();

  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  std::stringstream s1(bad_magic);
  EXPECT_THROW(read_weights(s1), InputError);

  std::string bad_version = bytes;
  bad_version[4] = 9;
  std::stringstream s2(bad_version);
  EXPECT_THROW(read_weights(s2), InputError);

  std::stringstream s3(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_weights(s3), InputError);

  EXPECT_THROW(load_weights("/nonexistent/weights.advd"), InputError);
}
