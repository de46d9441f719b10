#include "advoverlay/attack.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "advoverlay/errors.hpp"

namespace advoverlay {

namespace {

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view name, const std::pair<std::string_view, Enum> (&table)[N], const char* what) {
  for (const auto& [key, value] : table)
    if (key == name) return value;
  throw ConfigError(fmt::format("unknown {} '{}'", what, name));
}

constexpr std::pair<std::string_view, AttackMode> kModes[] = {
    {"one-targeted", AttackMode::OneTargeted},
    {"multi-targeted", AttackMode::MultiTargeted},
    {"multi-untargeted", AttackMode::MultiUntargeted}};
constexpr std::pair<std::string_view, ChannelSource> kChannels[] = {
    {"red", ChannelSource::Red}, {"green", ChannelSource::Green},
    {"blue", ChannelSource::Blue}, {"average", ChannelSource::Average}};
constexpr std::pair<std::string_view, Application> kApplications[] = {
    {"filter", Application::Filter}, {"patch", Application::Patch}, {"overlay", Application::Overlay}};
constexpr std::pair<std::string_view, MonochromeUpdate> kMonoUpdates[] = {
    {"raw", MonochromeUpdate::Raw}, {"sign", MonochromeUpdate::Sign}};

template <typename Enum, std::size_t N>
std::string_view enum_name(Enum value, const std::pair<std::string_view, Enum> (&table)[N]) {
  for (const auto& [key, v] : table)
    if (v == value) return key;
  return "?";
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

std::string_view to_string(AttackMode mode) { return enum_name(mode, kModes); }
std::string_view to_string(ChannelSource source) { return enum_name(source, kChannels); }
std::string_view to_string(Application application) { return enum_name(application, kApplications); }
std::string_view to_string(MonochromeUpdate update) { return enum_name(update, kMonoUpdates); }
AttackMode parse_attack_mode(std::string_view name) { return parse_enum(name, kModes, "attack mode"); }
ChannelSource parse_channel_source(std::string_view name) { return parse_enum(name, kChannels, "channel source"); }
Application parse_application(std::string_view name) { return parse_enum(name, kApplications, "application"); }
MonochromeUpdate parse_monochrome_update(std::string_view name) {
  return parse_enum(name, kMonoUpdates, "monochrome update");
}

bool is_targeted(AttackMode mode) { return mode != AttackMode::MultiUntargeted; }

void AttackConfig::validate(int num_classes) const {
  if (!(xi > 0.0) || !std::isfinite(xi)) throw ConfigError("xi: must be > 0");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha: must be > 0");
  if (iterations < 1) throw ConfigError("iterations: must be >= 1");
  if (is_targeted(mode)) {
    if (!target_class) throw ConfigError("target_class: required for " + std::string(to_string(mode)));
    if (*target_class < 1 || *target_class > num_classes)
      throw ConfigError(fmt::format("target_class: {} outside [1, {}]", *target_class, num_classes));
  }
}

double adversarial_loss(const RawPrediction& raw, AttackMode mode, std::optional<int> target_class,
                        RawPrediction* grad) {
  if (raw.scales.empty()) return 0.0;
  const int num_classes = raw.scales.front().values_per_box - kFirstClass;
  int target_field = 0;
  if (is_targeted(mode)) {
    if (!target_class) throw ConfigError("target_class: required for " + std::string(to_string(mode)));
    if (*target_class < 1 || *target_class > num_classes)
      throw ConfigError(fmt::format("target_class: {} outside [1, {}]", *target_class, num_classes));
    target_field = kFirstClass + *target_class - 1;
  }
  const std::size_t n = raw.candidate_count();

  if (mode == AttackMode::OneTargeted) {
    double best = -1.0;
    std::size_t best_index = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto o = raw.candidate(i);
      const double v = sigmoid(o[kObjectness]) * sigmoid(o[target_field]);
      if (v > best) {
        best = v;
        best_index = i;
      }
    }
    if (grad) {
      const auto o = raw.candidate(best_index);
      const double sc = sigmoid(o[kObjectness]);
      const double sp = sigmoid(o[target_field]);
      auto g = grad->candidate(best_index);
      g[kObjectness] += sc * (1.0 - sc) * sp;
      g[target_field] += sc * sp * (1.0 - sp);
    }
    return best;
  }

  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto o = raw.candidate(i);
    const double sc = sigmoid(o[kObjectness]);
    if (mode == AttackMode::MultiTargeted) {
      const double sp = sigmoid(o[target_field]);
      total += sc * sp;
      if (grad) {
        auto g = grad->candidate(i);
        g[kObjectness] += sc * (1.0 - sc) * sp;
        g[target_field] += sc * sp * (1.0 - sp);
      }
    } else {
      double class_sum = 0.0;
      for (int k = 0; k < num_classes; ++k) {
        const double sp = sigmoid(o[kFirstClass + k]);
        total += sc * sp;
        class_sum += sp;
        if (grad) grad->candidate(i)[kFirstClass + k] += sc * sp * (1.0 - sp);
      }
      if (grad) grad->candidate(i)[kObjectness] += sc * (1.0 - sc) * class_sum;
    }
  }
  return total;
}

LossFunction make_adversarial_loss(AttackMode mode, std::optional<int> target_class) {
  return [mode, target_class](const RawPrediction& raw, RawPrediction& grad) {
    return adversarial_loss(raw, mode, target_class, &grad);
  };
}

ImageTensor apply_perturbation(const ImageTensor& image, const Mask& mask, const Tensor3& delta,
                               Application application) {
  const int c = image.channels();
  const int h = image.height();
  const int w = image.width();
  if (delta.height() != h || delta.width() != w || (delta.channels() != c && delta.channels() != 1))
    throw ShapeError("perturbation shape does not match the image");
  const bool uses_mask = application != Application::Filter;
  if (uses_mask && (mask.height() != h || mask.width() != w))
    throw ShapeError("mask shape does not match the image");

  Tensor3 out = image.tensor();
  const bool mono = delta.channels() == 1;
  for (int ch = 0; ch < c; ++ch) {
    const int dch = mono ? 0 : ch;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (uses_mask && !mask.at(y, x)) continue;
        const double d = delta.at(dch, y, x);
        double& v = out.at(ch, y, x);
        v = application == Application::Patch ? d : v + d;
        v = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return ImageTensor::clipped(std::move(out));
}

AttackState AttackState::fresh(const AttackConfig& config, int channels, int height, int width) {
  return {Tensor3(config.monochrome ? 1 : channels, height, width), 0, {}};
}

double AttackState::max_abs() const {
  double m = 0.0;
  for (double v : delta.values()) m = std::max(m, std::abs(v));
  return m;
}

void restrict_to_mask(AttackState& state, const Mask& mask) {
  if (mask.height() != state.delta.height() || mask.width() != state.delta.width())
    throw ShapeError("mask shape does not match the perturbation");
  for (int ch = 0; ch < state.delta.channels(); ++ch)
    for (int y = 0; y < mask.height(); ++y)
      for (int x = 0; x < mask.width(); ++x)
        if (!mask.at(y, x)) state.delta.at(ch, y, x) = 0.0;
}

void clip_delta(AttackState& state, double bound) {
  for (double& v : state.delta.values()) v = std::clamp(v, -bound, bound);
}

namespace {

void check_state(const AttackState& state, const ImageTensor& image, const AttackConfig& config) {
  const int expected_channels = config.monochrome ? 1 : image.channels();
  if (state.delta.channels() != expected_channels || state.delta.height() != image.height() ||
      state.delta.width() != image.width())
    throw ShapeError("attack state does not match the image / config");
}

GradientResult gradient_at(const ImageTensor& current, const AttackConfig& config, const Detector& detector) {
  return detector.input_gradient(current, make_adversarial_loss(config.mode, config.target_class));
}

// Steps delta along the gradient taken at the pre-step image and clips it.
void update_delta(AttackState& state, const GradientResult& g, const Mask& mask, const AttackConfig& config) {
  const int c = g.gradient.channels();
  const int h = g.gradient.height();
  const int w = g.gradient.width();
  const bool masked = config.application != Application::Filter;
  const double step = config.alpha_unit();
  auto inside = [&](int y, int x) { return !masked || mask.at(y, x); };

  if (!config.monochrome) {
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          if (inside(y, x)) state.delta.at(ch, y, x) += step * sign(g.gradient.at(ch, y, x));
  } else {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!inside(y, x)) continue;
        double gv = 0.0;
        if (c == 1) {
          gv = g.gradient.at(0, y, x);
        } else {
          switch (config.channel_source) {
            case ChannelSource::Red: gv = g.gradient.at(0, y, x); break;
            case ChannelSource::Green: gv = g.gradient.at(1, y, x); break;
            case ChannelSource::Blue: gv = g.gradient.at(2, y, x); break;
            case ChannelSource::Average:
              gv = (g.gradient.at(0, y, x) + g.gradient.at(1, y, x) + g.gradient.at(2, y, x)) / 3.0;
              break;
          }
        }
        state.delta.at(0, y, x) += config.monochrome_update == MonochromeUpdate::Sign ? step * sign(gv) : step * gv;
      }
    }
  }
  clip_delta(state, config.xi_unit());
  state.loss_history.push_back(g.loss);
  ++state.iterations_done;
}

}  // namespace

ImageTensor attack_step(AttackState& state, const ImageTensor& image, const Mask& mask,
                        const AttackConfig& config, const Detector& detector) {
  check_state(state, image, config);
  const ImageTensor current = apply_perturbation(image, mask, state.delta, config.application);
  update_delta(state, gradient_at(current, config, detector), mask, config);
  return apply_perturbation(image, mask, state.delta, config.application);
}

int count_boxes_in_mask(const std::vector<Detection>& detections, const Mask& mask) {
  int n = 0;
  for (const auto& d : detections) {
    const auto x = static_cast<int>(std::floor(d.box.x));
    const auto y = static_cast<int>(std::floor(d.box.y));
    if (x >= 0 && y >= 0 && x < mask.width() && y < mask.height() && mask.at(y, x)) ++n;
  }
  return n;
}

AttackResult run_attack(const ImageTensor& image, const Mask& mask, const AttackConfig& config,
                        const Detector& detector, bool stop_on_success, std::optional<AttackState> initial) {
  config.validate(detector.scale_config().num_classes);
  AttackResult result;
  result.state = initial ? std::move(*initial)
                         : AttackState::fresh(config, image.channels(), image.height(), image.width());
  const auto& scales = detector.scale_config();
  result.benign_detections = detect_boxes(detector.forward(image), scales);
  auto& report = result.report;
  report.benign_box_count = static_cast<int>(result.benign_detections.size());
  const bool masked = config.application != Application::Filter;
  report.benign_boxes_in_mask = masked ? count_boxes_in_mask(result.benign_detections, mask) : 0;

  check_state(result.state, image, config);
  result.adversarial = apply_perturbation(image, mask, result.state.delta, config.application);
  // The gradient pass at the next pre-step image doubles as the detection
  // pass for the current iteration, so each iteration costs one forward.
  GradientResult g = gradient_at(result.adversarial, config, detector);
  for (int k = 0; k < config.iterations; ++k) {
    update_delta(result.state, g, mask, config);
    result.adversarial = apply_perturbation(image, mask, result.state.delta, config.application);
    if (k + 1 < config.iterations)
      g = gradient_at(result.adversarial, config, detector);
    else
      g.prediction = detector.forward(result.adversarial);
    result.adversarial_detections = detect_boxes(g.prediction, scales);
    IterationRecord rec;
    rec.loss = result.state.loss_history.back();
    rec.box_count = static_cast<int>(result.adversarial_detections.size());
    rec.boxes_in_mask = masked ? count_boxes_in_mask(result.adversarial_detections, mask) : 0;
    report.per_iteration.push_back(rec);
    report.iterations_used = k + 1;
    report.final_loss = rec.loss;
    report.adversarial_box_count = rec.box_count;
    if (rec.box_count > report.benign_box_count) report.success = true;
    if (masked && rec.boxes_in_mask > report.benign_boxes_in_mask) report.success_in_mask = true;
    if (stop_on_success && report.success) break;
  }
  return result;
}

std::string report_csv(const AttackReport& report) {
  std::string out = "iteration,loss,benign_boxes,adversarial_boxes\n";
  for (std::size_t i = 0; i < report.per_iteration.size(); ++i) {
    const auto& r = report.per_iteration[i];
    out += fmt::format("{},{},{},{}\n", i + 1, r.loss, report.benign_box_count, r.box_count);
  }
  return out;
}

}  // namespace advoverlay
