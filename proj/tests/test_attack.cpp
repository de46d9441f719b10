#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "advoverlay/attack.hpp"
#include "advoverlay/errors.hpp"
#include "advoverlay/image_io.hpp"
#include "test_support.hpp"

using namespace advoverlay;
using namespace advoverlay::testing;

namespace {

RawPrediction three_candidate_prediction() {
  // Three single-cell scales, K = 2.
  ScaleConfig config;
  config.boxes_per_cell = 1;
  config.num_classes = 2;
  for (int i = 0; i < 3; ++i) config.scales.push_back({1, 8, {{8, 8}}});
  RawPrediction raw = RawPrediction::zeros(config);
  const double logits[3][7] = {{0, 0, 0, 0, 1.0, 0.5, -2.0},
                               {0, 0, 0, 0, -0.3, 2.0, 1.5},
                               {0, 0, 0, 0, 2.5, -1.0, 0.0}};
  for (int i = 0; i < 3; ++i)
    for (int f = 0; f < 7; ++f) raw.candidate(i)[f] = logits[i][f];
  return raw;
}

AttackConfig polychrome(double xi = 8, double alpha = 2, int iterations = 10) {
  AttackConfig c;
  c.mode = AttackMode::MultiUntargeted;
  c.xi = xi;
  c.alpha = alpha;
  c.iterations = iterations;
  return c;
}

}  // namespace

TEST(AdversarialLoss, VanishesForVeryNegativeLogits) {
  RawPrediction raw = three_candidate_prediction();
  for (auto& s : raw.scales)
    for (double& v : s.values) v = -1000.0;
  EXPECT_EQ(adversarial_loss(raw, AttackMode::OneTargeted, 1), 0.0);
  EXPECT_EQ(adversarial_loss(raw, AttackMode::MultiTargeted, 2), 0.0);
  EXPECT_EQ(adversarial_loss(raw, AttackMode::MultiUntargeted, std::nullopt), 0.0);
}

TEST(AdversarialLoss, OneTargetedQuarterAtZeroLogits) {
  RawPrediction raw = three_candidate_prediction();
  for (auto& s : raw.scales)
    for (double& v : s.values) v = -1000.0;
  raw.candidate(1)[kObjectness] = 0.0;
  raw.candidate(1)[kFirstClass + 1] = 0.0;
  EXPECT_EQ(adversarial_loss(raw, AttackMode::OneTargeted, 2), 0.25);
}

TEST(AdversarialLoss, MatchesDirectEvaluation) {
  const RawPrediction raw = three_candidate_prediction();
  const double c[3] = {1.0, -0.3, 2.5};
  const double p[3][2] = {{0.5, -2.0}, {2.0, 1.5}, {-1.0, 0.0}};
  for (int t = 1; t <= 2; ++t) {
    double best = 0.0, sum = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double v = logistic(c[i]) * logistic(p[i][t - 1]);
      best = std::max(best, v);
      sum += v;
    }
    EXPECT_NEAR(adversarial_loss(raw, AttackMode::OneTargeted, t), best, 1e-15);
    EXPECT_NEAR(adversarial_loss(raw, AttackMode::MultiTargeted, t), sum, 1e-15);
  }
  double all = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) all += logistic(c[i]) * logistic(p[i][j]);
  EXPECT_NEAR(adversarial_loss(raw, AttackMode::MultiUntargeted, std::nullopt), all, 1e-15);
}

TEST(AdversarialLoss, GradientMatchesFiniteDifferencesInLogitSpace) {
  const RawPrediction raw = three_candidate_prediction();
  for (AttackMode mode : {AttackMode::OneTargeted, AttackMode::MultiTargeted, AttackMode::MultiUntargeted}) {
    const std::optional<int> t = is_targeted(mode) ? std::optional<int>(2) : std::nullopt;
    RawPrediction grad = raw;
    for (auto& s : grad.scales) std::fill(s.values.begin(), s.values.end(), 0.0);
    adversarial_loss(raw, mode, t, &grad);
    for (std::size_t i = 0; i < 3; ++i) {
      for (int f = 0; f < 7; ++f) {
        RawPrediction plus = raw, minus = raw;
        plus.candidate(i)[f] += 1e-6;
        minus.candidate(i)[f] -= 1e-6;
        const double fd = (adversarial_loss(plus, mode, t) - adversarial_loss(minus, mode, t)) / 2e-6;
        EXPECT_NEAR(grad.candidate(i)[f], fd, 1e-8) << to_string(mode) << " candidate " << i << " field " << f;
      }
    }
  }
}

TEST(AdversarialLoss, TargetedModesNeedValidTarget) {
  const RawPrediction raw = three_candidate_prediction();
  EXPECT_THROW(adversarial_loss(raw, AttackMode::OneTargeted, std::nullopt), ConfigError);
  EXPECT_THROW(adversarial_loss(raw, AttackMode::MultiTargeted, 3), ConfigError);
  EXPECT_THROW(adversarial_loss(raw, AttackMode::MultiTargeted, 0), ConfigError);
}

TEST(AttackConfigTest, Validation) {
  AttackConfig c;
  EXPECT_NO_THROW(c.validate(80));
  c.xi = 0;
  EXPECT_THROW(c.validate(80), ConfigError);
  c = AttackConfig{};
  c.iterations = 0;
  EXPECT_THROW(c.validate(80), ConfigError);
  c = AttackConfig{};
  c.mode = AttackMode::OneTargeted;
  EXPECT_THROW(c.validate(80), ConfigError);
  c.target_class = 81;
  EXPECT_THROW(c.validate(80), ConfigError);
  c.target_class = 80;
  EXPECT_NO_THROW(c.validate(80));
}

TEST(AttackConfigTest, EnumNamesRoundTrip) {
  for (auto m : {AttackMode::OneTargeted, AttackMode::MultiTargeted, AttackMode::MultiUntargeted})
    EXPECT_EQ(parse_attack_mode(to_string(m)), m);
  for (auto c : {ChannelSource::Red, ChannelSource::Green, ChannelSource::Blue, ChannelSource::Average})
    EXPECT_EQ(parse_channel_source(to_string(c)), c);
  for (auto a : {Application::Filter, Application::Patch, Application::Overlay})
    EXPECT_EQ(parse_application(to_string(a)), a);
  EXPECT_THROW(parse_attack_mode("untargeted"), ConfigError);
}

TEST(ApplyPerturbation, EmptyMaskOverlayIsIdentity) {
  Xoshiro256 rng(1);
  const ImageTensor img = random_image(rng, 3, 8);
  Tensor3 delta(3, 8, 8, 0.03);
  EXPECT_EQ(apply_perturbation(img, Mask(8, 8), delta, Application::Overlay), img);
}

TEST(ApplyPerturbation, FullMaskOverlayOnGray) {
  const ImageTensor img(3, 4, 4, 0.5);
  const ImageTensor out = apply_perturbation(img, Mask(4, 4, true), Tensor3(3, 4, 4, 0.02), Application::Overlay);
  for (double v : out.tensor().values()) EXPECT_DOUBLE_EQ(v, 0.52);
}

TEST(ApplyPerturbation, FullMaskPatchIgnoresImage) {
  Xoshiro256 rng(2);
  Tensor3 delta(3, 4, 4);
  for (double& v : delta.values()) v = rng.uniform(-0.5, 1.5);
  const ImageTensor a = apply_perturbation(random_image(rng, 3, 4), Mask(4, 4, true), delta, Application::Patch);
  const ImageTensor b = apply_perturbation(random_image(rng, 3, 4), Mask(4, 4, true), delta, Application::Patch);
  EXPECT_EQ(a, b);
  for (std::size_t i = 0; i < delta.size(); ++i)
    EXPECT_EQ(a.tensor().values()[i], std::clamp(delta.values()[i], 0.0, 1.0));
}

TEST(ApplyPerturbation, FilterIgnoresMaskAndClips) {
  const ImageTensor img(1, 2, 2, 0.99);
  const ImageTensor out = apply_perturbation(img, Mask(), Tensor3(1, 2, 2, 0.05), Application::Filter);
  for (double v : out.tensor().values()) EXPECT_EQ(v, 1.0);
}

TEST(ApplyPerturbation, MonochromeAddsSameValueToEveryChannel) {
  Xoshiro256 rng(3);
  const ImageTensor img = random_image(rng, 3, 6);
  Tensor3 delta(1, 6, 6);
  for (double& v : delta.values()) v = rng.uniform(-0.03, 0.03);
  const ImageTensor out = apply_perturbation(img, Mask(6, 6, true), delta, Application::Overlay);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 6; ++x) EXPECT_EQ(out.at(c, y, x), std::clamp(img.at(c, y, x) + delta.at(0, y, x), 0.0, 1.0));
}

TEST(ApplyPerturbation, ShapeMismatchThrows) {
  const ImageTensor img(3, 4, 4, 0.5);
  EXPECT_THROW(apply_perturbation(img, Mask(4, 4), Tensor3(3, 5, 4), Application::Overlay), ShapeError);
  EXPECT_THROW(apply_perturbation(img, Mask(3, 4), Tensor3(3, 4, 4), Application::Overlay), ShapeError);
  EXPECT_THROW(apply_perturbation(img, Mask(4, 4), Tensor3(2, 4, 4), Application::Overlay), ShapeError);
}

TEST(AttackStep, ZeroGradientLeavesDeltaAndRecordsLoss) {
  AffineDetector det(3, 4, 1, 2);
  const ImageTensor img(3, 4, 4, 0.5);
  const AttackConfig config = polychrome();
  AttackState state = AttackState::fresh(config, 3, 4, 4);
  const Tensor3 before = state.delta;
  attack_step(state, img, Mask(4, 4, true), config, det);
  EXPECT_EQ(state.delta, before);
  EXPECT_EQ(state.loss_history.size(), 1u);
  EXPECT_EQ(state.iterations_done, 1);
}

TEST(AttackStep, FirstSignStepHasNormAlpha) {
  AffineDetector det(3, 4, 1, 2);
  det.weight[det.value_index(0, kObjectness)].at(1, 2, 2) = 0.7;
  const ImageTensor img(3, 4, 4, 0.5);
  const AttackConfig config = polychrome(8, 2);
  AttackState state = AttackState::fresh(config, 3, 4, 4);
  attack_step(state, img, Mask(4, 4, true), config, det);
  EXPECT_EQ(state.max_abs(), 2.0 / 255.0);
}

TEST(AttackStep, GradientOutsideMaskIsIgnored) {
  AffineDetector det(3, 4, 1, 2);
  for (double& w : det.weight[det.value_index(0, kObjectness)].values()) w = 1.0;
  Mask mask(4, 4);
  mask.set(1, 1, true);
  const AttackConfig config = polychrome();
  AttackState state = AttackState::fresh(config, 3, 4, 4);
  attack_step(state, ImageTensor(3, 4, 4, 0.5), mask, config, det);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) EXPECT_EQ(state.delta.at(c, y, x) != 0.0, y == 1 && x == 1);
}

// Closed-form oracle on a 1 x 1 RGB image with one candidate and K = 1:
//   c = bc + wc . x,  p = bp + wp . x,  L = s(c) s(p)
//   dL/dx_k = s'(c) s(p) wc_k + s(c) s'(p) wp_k
// The delta trajectory is replayed by hand and compared per element.
TEST(AttackStep, PolychromeMatchesScalarOracle) {
  // Channel 2 has opposing weights so its gradient sign flips as c and p move.
  const ScalarOracle o{-1.0, 0.5, {3.0, -2.0, 4.0}, {1.0, 0.5, -6.0}, {0.4, 0.6, 0.5}};
  const AffineDetector det = make_linear(o);
  const AttackConfig config = polychrome(8, 2, 10);
  AttackState state = AttackState::fresh(config, 3, 1, 1);
  const ImageTensor img = one_pixel(o.x);
  const Mask mask(1, 1, true);

  double delta[3] = {0, 0, 0};
  const double step = 2.0 / 255.0, bound = 8.0 / 255.0;
  for (int it = 0; it < 10; ++it) {
    double xp[3];
    for (int k = 0; k < 3; ++k) xp[k] = std::clamp(o.x[k] + delta[k], 0.0, 1.0);
    double g[3];
    for (int k = 0; k < 3; ++k) g[k] = o.grad(xp, k);
    for (int k = 0; k < 3; ++k) {
      delta[k] += step * (g[k] > 0 ? 1.0 : (g[k] < 0 ? -1.0 : 0.0));
      delta[k] = std::clamp(delta[k], -bound, bound);
    }
    attack_step(state, img, mask, config, det);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(state.delta.at(k, 0, 0), delta[k], 1e-9) << "iteration " << it;
  }
}

TEST(AttackStep, MonochromeRawUpdateMatchesScalarOracle) {
  const ScalarOracle o{0.2, -0.4, {30.0, -20.0, 45.0}, {10.0, 50.0, -60.0}, {0.4, 0.6, 0.5}};
  const AffineDetector det = make_linear(o);
  for (ChannelSource source : {ChannelSource::Average, ChannelSource::Green}) {
    AttackConfig config = polychrome(8, 2, 10);
    config.monochrome = true;
    config.channel_source = source;
    AttackState state = AttackState::fresh(config, 3, 1, 1);
    const ImageTensor img = one_pixel(o.x);
    double delta = 0.0;
    for (int it = 0; it < 10; ++it) {
      double xp[3];
      for (int k = 0; k < 3; ++k) xp[k] = std::clamp(o.x[k] + delta, 0.0, 1.0);
      const double g = source == ChannelSource::Average ? (o.grad(xp, 0) + o.grad(xp, 1) + o.grad(xp, 2)) / 3.0
                                                        : o.grad(xp, 1);
      delta = std::clamp(delta + (2.0 / 255.0) * g, -8.0 / 255.0, 8.0 / 255.0);
      attack_step(state, img, Mask(1, 1, true), config, det);
      ASSERT_EQ(state.delta.channels(), 1);
      EXPECT_NEAR(state.delta.at(0, 0, 0), delta, 1e-9) << to_string(source) << " iteration " << it;
    }
  }
}

TEST(RunAttack, RejectsZeroIterations) {
  AffineDetector det(3, 4, 1, 2);
  AttackConfig config = polychrome();
  config.iterations = 0;
  EXPECT_THROW(run_attack(ImageTensor(3, 4, 4, 0.5), Mask(4, 4, true), config, det, false), ConfigError);
}

TEST(RunAttack, ZeroGradientSingleIterationFails) {
  AffineDetector det(3, 4, 1, 2);
  std::fill(det.bias.begin(), det.bias.end(), -5.0);
  const auto r = run_attack(ImageTensor(3, 4, 4, 0.5), Mask(4, 4, true), polychrome(8, 2, 1), det, false);
  EXPECT_FALSE(r.report.success);
  EXPECT_EQ(r.report.iterations_used, 1);
  EXPECT_EQ(r.report.per_iteration.size(), 1u);
}

TEST(RunAttack, RiggedDetectorSucceedsAfterOneStep) {
  // c = p = k (x(0,0,0) - x(0,3,3)) - 1: benign gray frame scores s(-1)^2 < 0.5;
  // one +2/255 step on the masked pixel pushes both logits far positive.
  AffineDetector det(3, 4, 1, 1);
  for (int f : {kObjectness, kFirstClass}) {
    det.bias[det.value_index(0, f)] = -1.0;
    det.weight[det.value_index(0, f)].at(0, 0, 0) = 2000.0;
    det.weight[det.value_index(0, f)].at(0, 3, 3) = -2000.0;
  }
  Mask mask(4, 4);
  mask.set(0, 0, true);
  const auto r = run_attack(ImageTensor(3, 4, 4, 0.5), mask, polychrome(8, 2, 50), det, true);
  EXPECT_EQ(r.report.benign_box_count, 0);
  EXPECT_TRUE(r.report.success);
  EXPECT_EQ(r.report.iterations_used, 1);
  EXPECT_EQ(r.report.adversarial_box_count, 1);
  EXPECT_EQ(report_csv(r.report).substr(0, 45), "iteration,loss,benign_boxes,adversarial_boxes");
}

TEST(RunAttack, WarmStartEqualsOneLongRun) {
  Xoshiro256 rng(12);
  const ScaleConfig config = make_scale_config(32, {16, 8}, {{{12, 12}}, {{6, 6}}}, 2);
  YoloNet net(randomized_weights(config, 32, 12, 3, 4, 0.5));
  const ImageTensor img = random_image(rng, 3, 32);
  const Mask mask = build_mask({{8, 8, 16, 12}}, 32, 32);
  AttackConfig c = polychrome(8, 2, 6);
  const auto once = run_attack(img, mask, c, net, false);
  c.iterations = 3;
  const auto first = run_attack(img, mask, c, net, false);
  const auto second = run_attack(img, mask, c, net, false, first.state);
  EXPECT_EQ(second.state.delta, once.state.delta);
  EXPECT_EQ(second.state.loss_history, once.state.loss_history);
  EXPECT_EQ(second.adversarial, once.adversarial);
}

TEST(RunAttack, MatchesRepeatedSingleSteps) {
  Xoshiro256 rng(5);
  const ScaleConfig config = make_scale_config(32, {16, 8}, {{{12, 12}}, {{6, 6}}}, 2);
  YoloNet net(randomized_weights(config, 32, 5, 3, 4, 0.5));
  const ImageTensor img = random_image(rng, 3, 32);
  const Mask mask = build_mask({{4, 10, 20, 14}}, 32, 32);
  const AttackConfig c = polychrome(8, 2, 5);
  const auto run = run_attack(img, mask, c, net, false);
  AttackState state = AttackState::fresh(c, 3, 32, 32);
  for (int k = 0; k < c.iterations; ++k) {
    const ImageTensor adv = attack_step(state, img, mask, c, net);
    EXPECT_EQ(run.report.per_iteration[k].box_count,
              static_cast<int>(detect_boxes(net.forward(adv), config).size()));
    if (k + 1 == c.iterations) EXPECT_EQ(adv, run.adversarial);
  }
  EXPECT_EQ(state.delta, run.state.delta);
  EXPECT_EQ(state.loss_history, run.state.loss_history);
}

TEST(RunAttack, InvariantsOverRandomRuns) {
  Xoshiro256 rng(31);
  const ScaleConfig config = make_scale_config(16, {8}, {{{8, 8}}}, 2);
  YoloNet net(randomized_weights(config, 16, 31, 3, 3, 0.5));
  for (int trial = 0; trial < 25; ++trial) {
    const ImageTensor img = random_image(rng, 3, 16);
    const Mask mask = build_mask({{rng.uniform_int(0, 12), rng.uniform_int(0, 12), rng.uniform_int(1, 8), rng.uniform_int(1, 8)}}, 16, 16);
    AttackConfig c = polychrome(rng.uniform_int(1, 10), rng.uniform_int(1, 4), 5);
    c.monochrome = trial % 2 == 1;
    AttackState state = AttackState::fresh(c, 3, 16, 16);
    for (int it = 0; it < c.iterations; ++it) {
      const ImageTensor adv = attack_step(state, img, mask, c, net);
      ASSERT_LE(state.max_abs(), c.xi / 255.0);
      for (int ch = 0; ch < 3; ++ch)
        for (int y = 0; y < 16; ++y)
          for (int x = 0; x < 16; ++x) {
            const double v = adv.at(ch, y, x);
            ASSERT_TRUE(v >= 0.0 && v <= 1.0);
            if (!mask.at(y, x)) ASSERT_EQ(v, img.at(ch, y, x));
          }
    }
  }
}

TEST(BuildMask, AspectRatioRectangles) {
  EXPECT_EQ(build_mask({{0, 0, 111, 37}}, 416, 416).popcount(), 37u * 111u);
  EXPECT_EQ(build_mask({{0, 0, 78, 52}}, 416, 416).popcount(), 4056u);
}

TEST(BuildMask, AspectBoxDimensionsFromArea) {
  const Rect wide = aspect_box(1, 3, 64 * 64);
  EXPECT_EQ(wide.w, 111);
  EXPECT_EQ(wide.h, 37);
  const Rect r15 = aspect_box(1, 1.5, 64 * 64);
  EXPECT_EQ(r15.w, 78);
  EXPECT_EQ(r15.h, 52);
  const Rect tall = aspect_box(3, 1, 64 * 64);
  EXPECT_EQ(tall.w, 37);
  EXPECT_EQ(tall.h, 111);
}

TEST(BuildMask, UnionIsIdempotentAndClipped) {
  EXPECT_EQ(build_mask({{10, 10, 20, 20}, {10, 10, 20, 20}}, 64, 64), build_mask({{10, 10, 20, 20}}, 64, 64));
  EXPECT_EQ(build_mask({{-5, -5, 10, 10}}, 64, 64).popcount(), 25u);
  EXPECT_EQ(build_mask({{60, 60, 10, 10}}, 64, 64).popcount(), 16u);
  EXPECT_EQ(build_mask({{0, 0, 10, 10}, {5, 5, 10, 10}}, 64, 64).popcount(), 175u);
  EXPECT_TRUE(build_mask({{3, 3, 0, 10}, {3, 3, 10, -2}, {100, 100, 5, 5}}, 64, 64).empty());
}

TEST(MaskPng, RoundTripsThroughOneBitPng) {
  const Mask mask = build_mask({{3, 4, 10, 7}, {20, 1, 5, 30}}, 40, 48);
  const auto path = std::filesystem::temp_directory_path() / "advoverlay_mask_roundtrip.png";
  save_mask_png(path, mask);
  EXPECT_EQ(load_mask_png(path), mask);
  std::filesystem::remove(path);
}
