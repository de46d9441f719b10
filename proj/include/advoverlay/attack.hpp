#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "advoverlay/decode.hpp"
#include "advoverlay/detector.hpp"
#include "advoverlay/mask.hpp"

namespace advoverlay {

enum class AttackMode { OneTargeted, MultiTargeted, MultiUntargeted };
enum class ChannelSource { Red, Green, Blue, Average };
enum class Application { Filter, Patch, Overlay };
/// Raw follows the monochrome rule literally (unsigned gradient step); Sign
/// uses the same sign() step as the polychrome branch.
enum class MonochromeUpdate { Raw, Sign };

std::string_view to_string(AttackMode mode);
std::string_view to_string(ChannelSource source);
std::string_view to_string(Application application);
std::string_view to_string(MonochromeUpdate update);
/// Parsers throw ConfigError on unknown names.
AttackMode parse_attack_mode(std::string_view name);
ChannelSource parse_channel_source(std::string_view name);
Application parse_application(std::string_view name);
MonochromeUpdate parse_monochrome_update(std::string_view name);

bool is_targeted(AttackMode mode);

/// xi and alpha are in 8-bit pixel units; the attack works with xi / 255 and
/// alpha / 255 on [0, 1] images.
struct AttackConfig {
  AttackMode mode = AttackMode::MultiUntargeted;
  std::optional<int> target_class;  // 1-based; required for targeted modes
  double xi = 8.0;
  double alpha = 2.0;
  int iterations = 100;
  bool monochrome = false;
  ChannelSource channel_source = ChannelSource::Average;
  Application application = Application::Overlay;
  MonochromeUpdate monochrome_update = MonochromeUpdate::Raw;

  double xi_unit() const { return xi / 255.0; }
  double alpha_unit() const { return alpha / 255.0; }

  /// Throws ConfigError naming the offending field.
  void validate(int num_classes) const;

  bool operator==(const AttackConfig&) const = default;
};

/// Value of the objective to maximise:
///   one-targeted     max_i  s(c_i) s(p_i,t)
///   multi-targeted   sum_i  s(c_i) s(p_i,t)
///   multi-untargeted sum_i sum_j s(c_i) s(p_i,j)
/// The max is differentiated through its first arg-max candidate.
double adversarial_loss(const RawPrediction& raw, AttackMode mode, std::optional<int> target_class,
                        RawPrediction* grad = nullptr);

LossFunction make_adversarial_loss(AttackMode mode, std::optional<int> target_class);

/// Applies `delta` to the image and clips to [0, 1]:
///   filter  x + delta
///   patch   (1 - m) x + m delta
///   overlay x + m delta
/// `delta` has either the image's channel count or a single channel
/// (monochrome), which is added identically to every channel. Pixels the
/// mask leaves untouched are copied bit for bit.
ImageTensor apply_perturbation(const ImageTensor& image, const Mask& mask, const Tensor3& delta,
                               Application application);

/// Persistent perturbation. Polychrome delta is C x H x W, monochrome 1 x H x W.
struct AttackState {
  Tensor3 delta;
  int iterations_done = 0;
  std::vector<double> loss_history;

  static AttackState fresh(const AttackConfig& config, int channels, int height, int width);
  bool monochrome() const { return delta.channels() == 1; }
  double max_abs() const;
};

/// Zeroes delta wherever the mask is 0.
void restrict_to_mask(AttackState& state, const Mask& mask);
/// Clamps delta into [-bound, bound].
void clip_delta(AttackState& state, double bound);

/// One iteration: build x' from the current delta, take d(loss)/d(x'),
/// zero it outside the mask (filter mode excepted), step delta, clip it to
/// xi / 255. The loss at the pre-step x' is appended to the history; the
/// returned image is x' rebuilt from the stepped delta.
ImageTensor attack_step(AttackState& state, const ImageTensor& image, const Mask& mask,
                        const AttackConfig& config, const Detector& detector);

struct IterationRecord {
  double loss = 0.0;
  int box_count = 0;
  int boxes_in_mask = 0;
};

struct AttackReport {
  int iterations_used = 0;
  bool success = false;
  /// Stricter variant: more boxes centred inside the mask than the benign frame had there.
  bool success_in_mask = false;
  int benign_box_count = 0;
  int benign_boxes_in_mask = 0;
  int adversarial_box_count = 0;
  double final_loss = 0.0;
  std::vector<IterationRecord> per_iteration;
};

struct AttackResult {
  AttackState state;
  AttackReport report;
  ImageTensor adversarial;
  std::vector<Detection> benign_detections;
  std::vector<Detection> adversarial_detections;
};

/// Up to config.iterations steps from `initial` (or a zero delta). After
/// each step the benign and adversarial frames are decoded and NMS-filtered
/// with the default thresholds and the box counts recorded.
AttackResult run_attack(const ImageTensor& image, const Mask& mask, const AttackConfig& config,
                        const Detector& detector, bool stop_on_success,
                        std::optional<AttackState> initial = std::nullopt);

int count_boxes_in_mask(const std::vector<Detection>& detections, const Mask& mask);

/// CSV with header `iteration,loss,benign_boxes,adversarial_boxes`.
std::string report_csv(const AttackReport& report);

}  // namespace advoverlay
