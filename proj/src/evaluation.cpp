#include "advoverlay/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <exception>
#include <mutex>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "advoverlay/errors.hpp"
#include "advoverlay/image_io.hpp"
#include "advoverlay/random.hpp"

namespace advoverlay {

namespace {

void check_query(const std::vector<TrialResult>& trials, int at_iteration) {
  if (trials.empty()) throw InputError("no trials to summarise");
  for (const auto& t : trials)
    if (at_iteration < 1 || at_iteration > static_cast<int>(t.per_iteration_boxes.size()))
      throw ConfigError(fmt::format("at_iteration {} is outside the iteration budget of trial {}", at_iteration,
                                    t.image_id));
}

double parse_number(const std::string& text, const char* what) {
  double v = 0.0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size())
    throw ConfigError(fmt::format("{} value '{}' is not a number", what, text));
  return v;
}

int budget_of(const std::vector<TrialResult>& trials) {
  return trials.empty() ? 0 : static_cast<int>(trials.front().per_iteration_boxes.size());
}

bool is_image_file(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

}  // namespace

TrialResult make_trial(std::string image_id, int benign_boxes, std::vector<int> per_iteration_boxes) {
  TrialResult t{std::move(image_id), benign_boxes, std::move(per_iteration_boxes), std::nullopt};
  for (std::size_t k = 0; k < t.per_iteration_boxes.size(); ++k)
    if (t.per_iteration_boxes[k] > benign_boxes) {
      t.first_success_iteration = static_cast<int>(k) + 1;
      break;
    }
  return t;
}

double success_rate(const std::vector<TrialResult>& trials, int at_iteration) {
  check_query(trials, at_iteration);
  const auto hits = std::count_if(trials.begin(), trials.end(), [&](const TrialResult& t) {
    return t.first_success_iteration && *t.first_success_iteration <= at_iteration;
  });
  return static_cast<double>(hits) / static_cast<double>(trials.size());
}

double mean_box_increase(const std::vector<TrialResult>& trials, int at_iteration) {
  check_query(trials, at_iteration);
  double sum = 0.0;
  for (const auto& t : trials) sum += t.per_iteration_boxes[at_iteration - 1] - t.benign_boxes;
  return sum / static_cast<double>(trials.size());
}

Mask MaskSpec::build(int image_index, int side) const {
  if (box_width < 1 || box_height < 1) throw ConfigError("mask box size must be positive");
  Rect r = centered_rect(box_width, box_height, side, side);
  if (placement == MaskPlacement::Random) {
    Xoshiro256 rng(mix_seed(seed, static_cast<std::uint64_t>(image_index)));
    r.x = rng.uniform_int(0, std::max(0, side - box_width));
    r.y = rng.uniform_int(0, std::max(0, side - box_height));
  }
  return build_mask({r}, side, side);
}

std::vector<TrialResult> run_trials(const std::vector<std::string>& ids, const std::vector<ImageTensor>& images,
                                    const CorpusOptions& options, const Detector& detector) {
  if (ids.size() != images.size()) throw ShapeError("image ids and images differ in length");
  if (images.empty()) throw InputError("no images to attack");
  options.config.validate(detector.scale_config().num_classes);
  if (options.threads < 1) throw ConfigError("threads must be at least 1");

  std::vector<TrialResult> results(images.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < images.size(); i = next++) {
      try {
        const Mask mask = options.mask.build(static_cast<int>(i), detector.input_side());
        const auto run = run_attack(images[i], mask, options.config, detector, options.stop_on_success);
        std::vector<int> counts;
        for (const auto& rec : run.report.per_iteration) counts.push_back(rec.box_count);
        // A run stopped at its first success keeps that count for the rest of the budget.
        counts.resize(options.config.iterations, counts.back());
        results[i] = make_trial(ids[i], run.report.benign_box_count, std::move(counts));
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const int n_threads = std::min<int>(options.threads, static_cast<int>(images.size()));
  std::vector<std::thread> pool;
  for (int t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
  return results;
}

std::vector<TrialResult> run_corpus(const std::filesystem::path& corpus_dir, const CorpusOptions& options,
                                    const Detector& detector) {
  if (!std::filesystem::is_directory(corpus_dir))
    throw InputError(fmt::format("corpus directory {} does not exist", corpus_dir.string()));
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(corpus_dir))
    if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
  std::sort(files.begin(), files.end());

  std::vector<std::string> ids;
  std::vector<ImageTensor> images;
  for (const auto& f : files) {
    try {
      images.push_back(letterbox(load_image(f, detector.input_channels()), detector.input_side()));
      ids.push_back(f.filename().string());
    } catch (const InputError& e) {
      spdlog::warn("skipping {}: {}", f.string(), e.what());
    }
  }
  if (images.empty()) throw InputError(fmt::format("no decodable images in {}", corpus_dir.string()));
  return run_trials(ids, images, options, detector);
}

std::string trials_csv(const std::vector<TrialResult>& trials) {
  std::string out = "image_id,benign_boxes,first_success_iteration,final_boxes\n";
  for (const auto& t : trials) {
    const std::string first = t.first_success_iteration ? std::to_string(*t.first_success_iteration) : "";
    const int final_boxes = t.per_iteration_boxes.empty() ? t.benign_boxes : t.per_iteration_boxes.back();
    out += fmt::format("{},{},{},{}\n", t.image_id, t.benign_boxes, first, final_boxes);
  }
  return out;
}

namespace {

std::string curve_rows(const std::vector<TrialResult>& trials, const std::string& prefix) {
  std::string out;
  for (int k = 1; k <= budget_of(trials); ++k)
    out += fmt::format("{}{},{},{}\n", prefix, k, success_rate(trials, k), mean_box_increase(trials, k));
  return out;
}

}  // namespace

std::string curve_csv(const std::vector<TrialResult>& trials) {
  return "iteration,success_rate,mean_box_increase\n" + curve_rows(trials, "");
}

std::string_view to_string(SweepParameter p) {
  switch (p) {
    case SweepParameter::Xi: return "xi";
    case SweepParameter::Alpha: return "alpha";
    case SweepParameter::BoxSize: return "box_size";
    case SweepParameter::Channel: return "channel";
    case SweepParameter::AspectRatio: return "aspect_ratio";
  }
  return "?";
}

SweepParameter parse_sweep_parameter(std::string_view name) {
  for (auto p : {SweepParameter::Xi, SweepParameter::Alpha, SweepParameter::BoxSize, SweepParameter::Channel,
                 SweepParameter::AspectRatio})
    if (to_string(p) == name) return p;
  throw ConfigError(fmt::format("unknown sweep parameter '{}' (xi, alpha, box_size, channel, aspect_ratio)", name));
}

CorpusOptions sweep_point(const SweepConfig& sweep, const std::string& value) {
  CorpusOptions o = sweep.base;
  switch (sweep.parameter) {
    case SweepParameter::Xi:
      o.config.xi = parse_number(value, "xi");
      break;
    case SweepParameter::Alpha:
      o.config.alpha = parse_number(value, "alpha");
      break;
    case SweepParameter::BoxSize: {
      const double side = parse_number(value, "box_size");
      if (side < 1 || side != std::floor(side)) throw ConfigError(fmt::format("box_size '{}' must be a positive integer", value));
      o.mask.box_width = o.mask.box_height = static_cast<int>(side);
      break;
    }
    case SweepParameter::Channel:
      o.config.monochrome = true;
      o.config.channel_source = parse_channel_source(value);
      break;
    case SweepParameter::AspectRatio: {
      const auto colon = value.find(':');
      if (colon == std::string::npos) throw ConfigError(fmt::format("aspect_ratio '{}' must look like H:W", value));
      const double rh = parse_number(value.substr(0, colon), "aspect_ratio");
      const double rw = parse_number(value.substr(colon + 1), "aspect_ratio");
      const Rect r = aspect_box(rh, rw, static_cast<double>(sweep.base.mask.box_width) * sweep.base.mask.box_height);
      o.mask.box_width = r.w;
      o.mask.box_height = r.h;
      break;
    }
  }
  return o;
}

void SweepConfig::validate() const {
  if (values.empty()) throw ConfigError("sweep values must not be empty");
  if (base.config.iterations < 1) throw ConfigError("iterations must be at least 1");
  for (const auto& v : values) (void)sweep_point(*this, v);
}

std::vector<SweepCurve> run_sweep(const SweepConfig& sweep, const Detector& detector) {
  sweep.validate();
  std::vector<SweepCurve> curves;
  for (const auto& v : sweep.values) curves.push_back({v, run_corpus(sweep.corpus, sweep_point(sweep, v), detector)});
  return curves;
}

std::string sweep_csv(const std::vector<SweepCurve>& curves) {
  std::string out = "parameter_value,iteration,success_rate,mean_box_increase\n";
  for (const auto& c : curves) out += curve_rows(c.trials, c.value + ",");
  return out;
}

std::string describe(const AttackConfig& c) {
  std::string out;
  out += fmt::format("mode = {}\n", to_string(c.mode));
  out += fmt::format("target_class = {}\n", c.target_class ? std::to_string(*c.target_class) : "none");
  out += fmt::format("xi = {}\nalpha = {}\niterations = {}\n", c.xi, c.alpha, c.iterations);
  out += fmt::format("monochrome = {}\nchannel_source = {}\nmonochrome_update = {}\n", c.monochrome,
                     to_string(c.channel_source), to_string(c.monochrome_update));
  out += fmt::format("application = {}\n", to_string(c.application));
  return out;
}

std::string describe(const CorpusOptions& o) {
  std::string out = describe(o.config);
  out += fmt::format("mask_box = {}x{}\nmask_placement = {}\nmask_seed = {}\n", o.mask.box_width, o.mask.box_height,
                     o.mask.placement == MaskPlacement::Centered ? "centered" : "random", o.mask.seed);
  out += fmt::format("stop_on_success = {}\n", o.stop_on_success);
  return out;
}

}  // namespace advoverlay
