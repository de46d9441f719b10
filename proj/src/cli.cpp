#include "advoverlay/cli.hpp"

#include <csignal>
#include <cstdlib>
#include <memory>
#include <optional>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <pthread.h>

#include "advoverlay/attack.hpp"
#include "advoverlay/errors.hpp"
#include "advoverlay/evaluation.hpp"
#include "advoverlay/image_io.hpp"
#include "advoverlay/server.hpp"
#include "advoverlay/toy.hpp"
#include "advoverlay/weights_io.hpp"
#include "advoverlay/yolo_net.hpp"

namespace advoverlay {
namespace {

namespace fs = std::filesystem;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

Rect parse_rect_arg(const std::string& text) {
  std::vector<int> v;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const std::string part = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    std::size_t used = 0;
    int value = 0;
    try {
      value = std::stoi(part, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (part.empty() || used != part.size()) throw UsageError(fmt::format("--mask-rect: bad rectangle '{}'", text));
    v.push_back(value);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (v.size() != 4) throw UsageError(fmt::format("--mask-rect: expected x,y,w,h, got '{}'", text));
  return {v[0], v[1], v[2], v[3]};
}

std::vector<std::string> split_values(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = text.find(',', start);
    out.push_back(text.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

// Flags shared by every subcommand that runs a detector.
struct DetectorFlags {
  std::string weights;
  std::uint64_t seed = 0;

  void add(CLI::App* app) {
    app->add_option("--weights", weights, "Detector weights file (default: toy detector initialised from --seed)");
    app->add_option("--seed", seed, "Seed for weight initialisation and random mask placement");
  }

  std::unique_ptr<YoloNet> load() const {
    if (!weights.empty()) return std::make_unique<YoloNet>(load_weights(weights));
    return std::make_unique<YoloNet>(init_detector(toy_scale_config(), kToySide, seed));
  }

  std::string describe() const {
    return fmt::format("weights = {}\nseed = {}\n", weights.empty() ? "toy-init" : weights, seed);
  }
};

struct ConfigFlags {
  AttackConfig config;
  std::string mode = "multi-untargeted";
  std::string channel = "average";
  std::string application = "overlay";
  std::string monochrome_update = "raw";
  int target_class = 0;

  void add(CLI::App* app, bool with_env = false) {
    auto* m = app->add_option("--mode", mode, "one-targeted | multi-targeted | multi-untargeted")
                  ->check(CLI::IsMember({"one-targeted", "multi-targeted", "multi-untargeted"}));
    auto* t = app->add_option("--target-class", target_class, "Target class (1-based), targeted modes only");
    auto* x = app->add_option("--xi", config.xi, "Perturbation bound in 8-bit units");
    auto* a = app->add_option("--alpha", config.alpha, "Step size in 8-bit units");
    app->add_option("--iters", config.iterations, "Iteration budget");
    auto* mono = app->add_flag("--monochrome", config.monochrome, "One value per pixel, added to every channel");
    app->add_option("--channel", channel, "Monochrome gradient source: red | green | blue | average")
        ->check(CLI::IsMember({"red", "green", "blue", "average"}));
    app->add_option("--application", application, "filter | patch | overlay")
        ->check(CLI::IsMember({"filter", "patch", "overlay"}));
    app->add_option("--monochrome-update", monochrome_update, "raw | sign")->check(CLI::IsMember({"raw", "sign"}));
    if (with_env) {
      m->envname("ADVOVERLAY_MODE");
      t->envname("ADVOVERLAY_TARGET_CLASS");
      x->envname("ADVOVERLAY_XI");
      a->envname("ADVOVERLAY_ALPHA");
      mono->envname("ADVOVERLAY_MONOCHROME");
    }
  }

  AttackConfig resolve(int num_classes) {
    AttackConfig c = config;
    c.mode = parse_attack_mode(mode);
    c.channel_source = parse_channel_source(channel);
    c.application = parse_application(application);
    c.monochrome_update = parse_monochrome_update(monochrome_update);
    if (target_class != 0) c.target_class = target_class;
    try {
      c.validate(num_classes);
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
    return c;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  write_file_bytes(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

std::string detections_csv(const std::vector<Detection>& detections) {
  std::string out = "class_id,score,x,y,w,h\n";
  for (const auto& d : detections)
    out += fmt::format("{},{},{},{},{},{}\n", d.class_id, d.score, d.box.x, d.box.y, d.box.w, d.box.h);
  return out;
}

std::string invocation_line(const std::vector<std::string>& args) {
  std::string line = "command =";
  for (const auto& a : args) line += " " + a;
  return line + "\n";
}

ImageTensor load_input(const std::string& path, const Detector& detector) {
  return letterbox(load_image(path, detector.input_channels()), detector.input_side());
}

// Blocks SIGINT and SIGTERM for the calling thread (and the threads it
// starts), then waits for one of them on a helper thread.
int serve(AttackServer& server, std::ostream& out) {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  sigset_t previous;
  pthread_sigmask(SIG_BLOCK, &set, &previous);
  const auto port = server.start();
  out << fmt::format("listening on port {}\n", port) << std::flush;
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&set, &sig);
    server.stop();
  });
  server.wait();
  // stop() may have come from elsewhere; wake the waiter if it is still parked.
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  pthread_sigmask(SIG_SETMASK, &previous, nullptr);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Real-time adversarial overlays against YOLO-style detectors", "advoverlay"};
  app.require_subcommand(1);
  std::string output_dir = ".";

  // attack
  DetectorFlags attack_det;
  ConfigFlags attack_cfg;
  std::string attack_image;
  std::string attack_mask_png;
  std::vector<std::string> attack_rects;
  bool attack_stop = false;
  auto* attack = app.add_subcommand("attack", "Attack a single image");
  attack->add_option("--image", attack_image, "Input image (PNG or JPEG)")->required()->check(CLI::ExistingFile);
  attack->add_option("--mask-rect", attack_rects, "Mask rectangle x,y,w,h in detector input pixels (repeatable)");
  attack->add_option("--mask", attack_mask_png, "Mask PNG (alternative to --mask-rect)")->check(CLI::ExistingFile);
  attack->add_flag("--stop-on-success", attack_stop, "Stop at the first iteration that adds a box");
  attack->add_option("--output-dir", output_dir, "Directory for output files");
  attack_det.add(attack);
  attack_cfg.add(attack);

  // corpus
  DetectorFlags corpus_det;
  ConfigFlags corpus_cfg;
  CorpusOptions corpus_opts;
  std::string corpus_dir;
  std::string placement = "centered";
  auto add_corpus_flags = [&](CLI::App* sub) {
    sub->add_option("--corpus", corpus_dir, "Directory of PNG/JPEG images")->required()->check(CLI::ExistingDirectory);
    sub->add_option("--box-width", corpus_opts.mask.box_width, "Mask box width");
    sub->add_option("--box-height", corpus_opts.mask.box_height, "Mask box height");
    sub->add_option("--placement", placement, "centered | random")->check(CLI::IsMember({"centered", "random"}));
    sub->add_flag("--stop-on-success", corpus_opts.stop_on_success, "Stop each trial at its first success");
    sub->add_option("--threads", corpus_opts.threads, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--output-dir", output_dir, "Directory for output files");
    corpus_det.add(sub);
    corpus_cfg.add(sub);
  };
  auto* corpus = app.add_subcommand("corpus", "Attack every image in a directory and report success curves");
  add_corpus_flags(corpus);

  // sweep
  std::string sweep_param;
  std::string sweep_values;
  auto* sweep = app.add_subcommand("sweep", "Repeat a corpus run for each value of one parameter");
  add_corpus_flags(sweep);
  sweep->add_option("--param", sweep_param, "xi | alpha | box_size | channel | aspect_ratio")
      ->required()
      ->check(CLI::IsMember({"xi", "alpha", "box_size", "channel", "aspect_ratio"}));
  sweep->add_option("--values", sweep_values, "Comma-separated values")->required();

  // detect
  DetectorFlags detect_det;
  std::string detect_image;
  double conf = kDefaultConfThreshold;
  double nms_iou = kDefaultIouThreshold;
  auto* detect = app.add_subcommand("detect", "Print the detections for one image");
  detect->add_option("--image", detect_image, "Input image")->required()->check(CLI::ExistingFile);
  detect->add_option("--conf", conf, "Score threshold")->check(CLI::Range(0.0, 1.0));
  detect->add_option("--iou", nms_iou, "NMS IoU threshold")->check(CLI::Range(0.0, 1.0));
  detect_det.add(detect);

  // make-mask
  std::vector<std::string> mask_rects;
  int mask_width = kToySide;
  int mask_height = kToySide;
  std::string mask_output = "mask.png";
  std::uint64_t mask_seed = 0;
  auto* make_mask = app.add_subcommand("make-mask", "Rasterise rectangles into a mask PNG");
  make_mask->add_option("--mask-rect", mask_rects, "Rectangle x,y,w,h (repeatable)");
  make_mask->add_option("--width", mask_width, "Mask width")->check(CLI::PositiveNumber);
  make_mask->add_option("--height", mask_height, "Mask height")->check(CLI::PositiveNumber);
  make_mask->add_option("--output", mask_output, "File name, relative to --output-dir");
  make_mask->add_option("--output-dir", output_dir, "Directory for output files");
  make_mask->add_option("--seed", mask_seed, "Accepted for uniformity; mask construction is deterministic");

  // serve
  DetectorFlags serve_det;
  ConfigFlags serve_cfg;
  ServerOptions server_opts;
  std::string static_dir;
  auto* serve_cmd = app.add_subcommand("serve", "Run the WebSocket attack server");
  serve_cmd->add_option("--weights", serve_det.weights, "Detector weights file")->envname("ADVOVERLAY_WEIGHTS");
  serve_cmd->add_option("--seed", serve_det.seed, "Seed for toy weight initialisation")->envname("ADVOVERLAY_SEED");
  serve_cmd->add_option("--address", server_opts.address, "Bind address")->envname("ADVOVERLAY_ADDRESS");
  serve_cmd->add_option("--port", server_opts.port, "TCP port")->envname("ADVOVERLAY_PORT");
  serve_cmd->add_option("--iters-per-frame", server_opts.session.iters_per_frame, "Attack steps per frame")
      ->envname("ADVOVERLAY_ITERS_PER_FRAME")
      ->check(CLI::PositiveNumber);
  serve_cmd->add_option("--max-frame-bytes", server_opts.session.max_frame_bytes, "Largest accepted frame payload")
      ->envname("ADVOVERLAY_MAX_FRAME_BYTES");
  serve_cmd->add_option("--static-dir", static_dir, "Serve control-panel files from this directory")
      ->envname("ADVOVERLAY_STATIC_DIR")
      ->check(CLI::ExistingDirectory);
  serve_cfg.add(serve_cmd, true);

  std::vector<std::string> argv_storage{"advoverlay"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_storage) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    const fs::path dir(output_dir);
    if (*attack) {
      const auto net = attack_det.load();
      const AttackConfig config = attack_cfg.resolve(net->scale_config().num_classes);
      const ImageTensor image = load_input(attack_image, *net);
      const int side = net->input_side();
      Mask mask;
      if (!attack_mask_png.empty()) {
        if (!attack_rects.empty()) throw UsageError("--mask and --mask-rect are mutually exclusive");
        mask = load_mask_png(attack_mask_png);
        if (mask.height() != side || mask.width() != side)
          throw UsageError(fmt::format("--mask: expected {}x{}, got {}x{}", side, side, mask.width(), mask.height()));
      } else if (!attack_rects.empty()) {
        std::vector<Rect> rects;
        for (const auto& r : attack_rects) rects.push_back(parse_rect_arg(r));
        mask = build_mask(rects, side, side);
      } else {
        mask = build_mask({centered_rect(64, 64, side, side)}, side, side);
      }
      const AttackResult result = run_attack(image, mask, config, *net, attack_stop);
      fs::create_directories(dir);
      save_png(dir / "adversarial.png", result.adversarial);
      write_text(dir / "report.csv", report_csv(result.report));
      write_text(dir / "detections_benign.csv", detections_csv(result.benign_detections));
      write_text(dir / "detections_adversarial.csv", detections_csv(result.adversarial_detections));
      write_text(dir / "manifest.txt", invocation_line(args) + attack_det.describe() + describe(config) +
                                           fmt::format("mask_pixels = {}\nstop_on_success = {}\n", mask.popcount(),
                                                       attack_stop));
      out << fmt::format("benign boxes {} adversarial boxes {} iterations {} success {}\n",
                         result.report.benign_box_count, result.report.adversarial_box_count,
                         result.report.iterations_used, result.report.success);
      return kExitOk;
    }

    if (*corpus || *sweep) {
      const auto& det = corpus_det;
      const auto net = det.load();
      corpus_opts.config = corpus_cfg.resolve(net->scale_config().num_classes);
      corpus_opts.mask.placement = placement == "random" ? MaskPlacement::Random : MaskPlacement::Centered;
      corpus_opts.mask.seed = det.seed;
      std::string manifest = invocation_line(args) + det.describe() + fmt::format("corpus = {}\n", corpus_dir);
      if (*corpus) {
        const auto trials = run_corpus(corpus_dir, corpus_opts, *net);
        fs::create_directories(dir);
        write_text(dir / "trials.csv", trials_csv(trials));
        write_text(dir / "curve.csv", curve_csv(trials));
        write_text(dir / "manifest.txt", manifest + describe(corpus_opts));
        const int budget = corpus_opts.config.iterations;
        out << fmt::format("images {} success rate at {} iterations {}\n", trials.size(), budget,
                           success_rate(trials, budget));
        return kExitOk;
      }
      SweepConfig sc;
      sc.parameter = parse_sweep_parameter(sweep_param);
      sc.values = split_values(sweep_values);
      sc.base = corpus_opts;
      sc.corpus = corpus_dir;
      try {
        sc.validate();
      } catch (const ConfigError& e) {
        throw UsageError(e.what());
      }
      const auto curves = run_sweep(sc, *net);
      fs::create_directories(dir);
      write_text(dir / "sweep.csv", sweep_csv(curves));
      write_text(dir / "manifest.txt", manifest + fmt::format("sweep_parameter = {}\nsweep_values = {}\n",
                                                              to_string(sc.parameter), sweep_values) +
                                           describe(corpus_opts));
      for (const auto& c : curves) {
        const int budget = corpus_opts.config.iterations;
        out << fmt::format("{} = {}: success rate {}\n", sweep_param, c.value, success_rate(c.trials, budget));
      }
      return kExitOk;
    }

    if (*detect) {
      const auto net = detect_det.load();
      const ImageTensor image = load_input(detect_image, *net);
      out << detections_csv(detect_boxes(net->forward(image), net->scale_config(), conf, nms_iou));
      return kExitOk;
    }

    if (*make_mask) {
      std::vector<Rect> rects;
      for (const auto& r : mask_rects) rects.push_back(parse_rect_arg(r));
      const Mask mask = build_mask(rects, mask_height, mask_width);
      fs::create_directories(dir);
      save_mask_png(dir / mask_output, mask);
      out << fmt::format("{} pixels\n", mask.popcount());
      return kExitOk;
    }

    if (*serve_cmd) {
      const auto net = serve_det.load();
      server_opts.session.config = serve_cfg.resolve(net->scale_config().num_classes);
      server_opts.static_dir = static_dir;
      AttackServer server(*net, server_opts);
      return serve(server, out);
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace advoverlay
