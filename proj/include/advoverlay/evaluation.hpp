#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "advoverlay/attack.hpp"

namespace advoverlay {

struct TrialResult {
  std::string image_id;
  int benign_boxes = 0;
  std::vector<int> per_iteration_boxes;  // entry k is the count after k + 1 steps
  std::optional<int> first_success_iteration;  // 1-based

  bool operator==(const TrialResult&) const = default;
};

/// Builds a TrialResult from a finished run, deriving the first success.
TrialResult make_trial(std::string image_id, int benign_boxes, std::vector<int> per_iteration_boxes);

/// Fraction of trials whose first success is at or before `at_iteration`
/// (1-based). Throws InputError on an empty list, ConfigError when
/// at_iteration is outside [1, budget].
double success_rate(const std::vector<TrialResult>& trials, int at_iteration);

/// Mean of (boxes after `at_iteration` steps - benign boxes). Same errors.
double mean_box_increase(const std::vector<TrialResult>& trials, int at_iteration);

enum class MaskPlacement { Centered, Random };

/// Where the overlay goes on each corpus image.
struct MaskSpec {
  int box_width = 64;
  int box_height = 64;
  MaskPlacement placement = MaskPlacement::Centered;
  std::uint64_t seed = 0;  // used by Random placement, mixed with the image index

  Mask build(int image_index, int side) const;
};

struct CorpusOptions {
  AttackConfig config;  // config.iterations is the iteration budget
  MaskSpec mask;
  bool stop_on_success = false;
  int threads = 1;
};

/// Every decodable PNG/JPEG in `corpus_dir` (lexicographic order) is
/// letterboxed to the detector side and attacked from a zero delta.
/// Unreadable files are skipped with a warning; InputError when none remain.
std::vector<TrialResult> run_corpus(const std::filesystem::path& corpus_dir, const CorpusOptions& options,
                                    const Detector& detector);

/// Same as run_corpus on already-loaded images, ids given in parallel.
std::vector<TrialResult> run_trials(const std::vector<std::string>& ids, const std::vector<ImageTensor>& images,
                                    const CorpusOptions& options, const Detector& detector);

/// Per-trial CSV: image_id,benign_boxes,first_success_iteration,final_boxes
std::string trials_csv(const std::vector<TrialResult>& trials);
/// Curve CSV: iteration,success_rate,mean_box_increase
std::string curve_csv(const std::vector<TrialResult>& trials);

enum class SweepParameter { Xi, Alpha, BoxSize, Channel, AspectRatio };
std::string_view to_string(SweepParameter p);
SweepParameter parse_sweep_parameter(std::string_view name);

/// values are textual: numbers for xi / alpha / box_size, channel names
/// (red, green, blue, average) for channel, "H:W" ratios for aspect_ratio.
/// Channel sweeps force monochrome; aspect-ratio sweeps keep the pixel
/// count of the base mask (box_width * box_height).
struct SweepConfig {
  SweepParameter parameter = SweepParameter::Xi;
  std::vector<std::string> values;
  CorpusOptions base;
  std::filesystem::path corpus;

  void validate() const;
};

struct SweepCurve {
  std::string value;
  std::vector<TrialResult> trials;
};

/// Applies one sweep value on top of the base options.
CorpusOptions sweep_point(const SweepConfig& sweep, const std::string& value);

std::vector<SweepCurve> run_sweep(const SweepConfig& sweep, const Detector& detector);

/// Long format: parameter_value,iteration,success_rate,mean_box_increase
std::string sweep_csv(const std::vector<SweepCurve>& curves);

/// key = value lines describing a run, for the manifest next to the CSVs.
std::string describe(const CorpusOptions& options);
std::string describe(const AttackConfig& config);

}  // namespace advoverlay
