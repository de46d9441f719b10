// Trains the small detector used by the tests and writes synthetic corpora.
//
//   toy_detector train --output weights.bin [--steps N] [--seed S]
//   toy_detector corpus --output-dir DIR [--count N] [--seed S]
//   toy_detector check --weights weights.bin [--count N] [--box B]

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "advoverlay/evaluation.hpp"
#include "advoverlay/random.hpp"
#include "advoverlay/toy.hpp"
#include "advoverlay/weights_io.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Toy detector training and synthetic corpora"};
  app.require_subcommand(1);

  advoverlay::TrainOptions opts;
  std::string weights_path;
  auto* train = app.add_subcommand("train", "Train the toy detector");
  train->add_option("--output", weights_path, "Weights file to write")->required();
  train->add_option("--steps", opts.steps, "Adam steps");
  train->add_option("--batch", opts.batch, "Scenes per step");
  train->add_option("--lr", opts.learning_rate, "Learning rate");
  train->add_option("--width", opts.trunk_width, "Trunk width");
  train->add_option("--seed", opts.seed, "Seed");

  std::string corpus_dir;
  int count = 50;
  std::uint64_t corpus_seed = 2024;
  auto* corpus = app.add_subcommand("corpus", "Write synthetic scenes as PNG files");
  corpus->add_option("--output-dir", corpus_dir, "Directory to write")->required();
  corpus->add_option("--count", count, "Number of scenes");
  corpus->add_option("--seed", corpus_seed, "Seed");

  std::string check_weights;
  int check_count = 50, box = 32, iterations = 100;
  double xi = 8;
  auto* check = app.add_subcommand("check", "Report detection quality and attack success on held-out scenes");
  check->add_option("--weights", check_weights, "Weights file")->required();
  check->add_option("--count", check_count, "Number of scenes");
  check->add_option("--seed", corpus_seed, "Scene seed");
  check->add_option("--box", box, "Centred mask side");
  check->add_option("--xi", xi, "Attack strength");
  check->add_option("--iters", iterations, "Iteration budget");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      double running = 0.0;
      const auto weights = advoverlay::train_toy_detector(opts, [&](int step, double loss) {
        running = step == 0 ? loss : 0.98 * running + 0.02 * loss;
        if ((step + 1) % 100 == 0) spdlog::info("step {} loss {:.4f}", step + 1, running);
      });
      advoverlay::save_weights(weights_path, weights);
      spdlog::info("wrote {}", weights_path);
    } else if (*check) {
      const advoverlay::YoloNet net(advoverlay::load_weights(check_weights));
      int truth = 0, found = 0, detections = 0, correct = 0;
      std::vector<std::string> ids;
      std::vector<advoverlay::ImageTensor> images;
      for (int i = 0; i < check_count; ++i) {
        const auto scene = advoverlay::generate_scene(advoverlay::mix_seed(corpus_seed, static_cast<std::uint64_t>(i)));
        const auto dets = advoverlay::detect_boxes(net.forward(scene.image), net.scale_config());
        truth += static_cast<int>(scene.objects.size());
        detections += static_cast<int>(dets.size());
        for (const auto& o : scene.objects)
          found += std::any_of(dets.begin(), dets.end(), [&](const auto& d) {
            return d.class_id == o.class_id && advoverlay::iou(d.box, o.box) > 0.5;
          });
        for (const auto& d : dets)
          correct += std::any_of(scene.objects.begin(), scene.objects.end(), [&](const auto& o) {
            return d.class_id == o.class_id && advoverlay::iou(d.box, o.box) > 0.5;
          });
        ids.push_back(std::to_string(i));
        images.push_back(scene.image);
      }
      spdlog::info("recall {}/{}  precision {}/{}", found, truth, correct, detections);
      advoverlay::CorpusOptions options;
      options.config.xi = xi;
      options.config.iterations = iterations;
      options.mask.box_width = options.mask.box_height = box;
      options.stop_on_success = true;
      const auto trials = advoverlay::run_trials(ids, images, options, net);
      spdlog::info("attack success within {} iterations: {}", iterations, advoverlay::success_rate(trials, iterations));
    } else {
      const auto paths = advoverlay::write_scene_corpus(corpus_dir, count, corpus_seed);
      spdlog::info("wrote {} scenes to {}", paths.size(), corpus_dir);
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
  return 0;
}
