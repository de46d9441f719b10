#include "advoverlay/toy.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "advoverlay/errors.hpp"
#include "advoverlay/image_io.hpp"
#include "advoverlay/random.hpp"

namespace advoverlay {

namespace {

bool inside_shape(int class_id, double u, double v) {
  // (u, v) in [-1, 1]^2 relative to the object's box
  switch (class_id) {
    case 1:
      return true;
    case 2:
      return u * u + v * v <= 1.0;
    case 3:
      return v >= -1.0 && std::abs(u) <= (v + 1.0) / 2.0;
    default:
      return std::abs(u) <= 0.3 || std::abs(v) <= 0.3;
  }
}

bool overlaps(const Box& a, const Box& b, double margin) {
  return std::abs(a.x - b.x) * 2 < a.w + b.w + margin && std::abs(a.y - b.y) * 2 < a.h + b.h + margin;
}

double bce_grad(double logit, double target, double* loss) {
  const double s = sigmoid(logit);
  const double eps = 1e-12;
  *loss -= target * std::log(s + eps) + (1.0 - target) * std::log(1.0 - s + eps);
  return s - target;
}

double shape_iou(double w1, double h1, double w2, double h2) {
  const double inter = std::min(w1, w2) * std::min(h1, h2);
  return inter / (w1 * h1 + w2 * h2 - inter);
}

}  // namespace

Scene generate_scene(std::uint64_t seed, int side, int max_objects) {
  Xoshiro256 rng(seed);
  Tensor3 img(3, side, side);
  double base[3], slope_x[3], slope_y[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = rng.uniform(0.25, 0.75);
    slope_x[c] = rng.uniform(-0.15, 0.15);
    slope_y[c] = rng.uniform(-0.15, 0.15);
  }
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) {
        const double u = static_cast<double>(x) / side - 0.5, v = static_cast<double>(y) / side - 0.5;
        img.at(c, y, x) = base[c] + slope_x[c] * u + slope_y[c] * v + rng.uniform(-0.03, 0.03);
      }

  Scene scene;
  const int count = rng.uniform_int(1, max_objects);
  for (int n = 0, attempts = 0; n < count && attempts < 50; ++attempts) {
    const double w = rng.uniform(14, 52);
    const double h = std::clamp(w * rng.uniform(0.65, 1.5), 14.0, 52.0);
    const Box box{rng.uniform(w / 2, side - w / 2), rng.uniform(h / 2, side - h / 2), w, h};
    if (std::any_of(scene.objects.begin(), scene.objects.end(),
                    [&](const SceneObject& o) { return overlaps(o.box, box, 4.0); }))
      continue;
    const int cls = rng.uniform_int(1, kToyClasses);
    // Flat colour pushed away from the background so every shape has contrast.
    double colour[3];
    for (int c = 0; c < 3; ++c) {
      const double bg = base[c];
      colour[c] = bg < 0.5 ? rng.uniform(bg + 0.3, 1.0) : rng.uniform(0.0, bg - 0.3);
    }
    const int x0 = static_cast<int>(std::floor(box.x - w / 2)), x1 = static_cast<int>(std::ceil(box.x + w / 2));
    const int y0 = static_cast<int>(std::floor(box.y - h / 2)), y1 = static_cast<int>(std::ceil(box.y + h / 2));
    for (int y = std::max(0, y0); y < std::min(side, y1); ++y)
      for (int x = std::max(0, x0); x < std::min(side, x1); ++x) {
        const double u = (x + 0.5 - box.x) / (w / 2), v = (y + 0.5 - box.y) / (h / 2);
        if (std::abs(u) > 1.0 || std::abs(v) > 1.0 || !inside_shape(cls, u, v)) continue;
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = colour[c];
      }
    scene.objects.push_back({box, cls});
    ++n;
  }
  scene.image = ImageTensor::clipped(std::move(img));
  return scene;
}

std::vector<std::filesystem::path> write_scene_corpus(const std::filesystem::path& dir, int count,
                                                      std::uint64_t seed, int side) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> paths;
  for (int i = 0; i < count; ++i) {
    const auto path = dir / fmt::format("scene_{:03}.png", i);
    save_png(path, generate_scene(mix_seed(seed, static_cast<std::uint64_t>(i)), side).image);
    paths.push_back(path);
  }
  return paths;
}

ScaleConfig toy_scale_config() {
  return make_scale_config(kToySide, {32, 16, 8},
                           {{{46, 46}, {52, 34}, {34, 52}},
                            {{30, 30}, {36, 22}, {22, 36}},
                            {{17, 17}, {21, 13}, {13, 21}}},
                           kToyClasses);
}

double training_loss(const RawPrediction& raw, const ScaleConfig& config, const std::vector<SceneObject>& truth,
                     RawPrediction* grad, double ignore_iou) {
  raw.check_layout(config);
  if (grad) grad->check_layout(config);
  const int n_scales = static_cast<int>(config.scales.size());
  const int B = config.boxes_per_cell;
  double loss = 0.0;

  struct Assignment {
    int scale, row, col, anchor;
  };
  std::vector<Assignment> assigned;
  for (const auto& obj : truth) {
    if (obj.class_id < 1 || obj.class_id > config.num_classes)
      throw InputError(fmt::format("ground-truth class {} is outside [1, {}]", obj.class_id, config.num_classes));
    Assignment best{0, 0, 0, 0};
    double best_iou = -1.0;
    for (int s = 0; s < n_scales; ++s)
      for (int a = 0; a < B; ++a) {
        const auto& anchor = config.scales[s].anchors[a];
        const double v = shape_iou(obj.box.w, obj.box.h, anchor.width, anchor.height);
        if (v > best_iou) {
          best_iou = v;
          best.scale = s;
          best.anchor = a;
        }
      }
    const auto& sc = config.scales[best.scale];
    best.col = std::clamp(static_cast<int>(obj.box.x / sc.stride), 0, sc.grid_size - 1);
    best.row = std::clamp(static_cast<int>(obj.box.y / sc.stride), 0, sc.grid_size - 1);
    assigned.push_back(best);
  }

  auto is_assigned = [&](int s, int r, int c, int a) {
    return std::any_of(assigned.begin(), assigned.end(), [&](const Assignment& x) {
      return x.scale == s && x.row == r && x.col == c && x.anchor == a;
    });
  };

  for (int s = 0; s < n_scales; ++s) {
    const auto& sc = config.scales[s];
    const auto& out = raw.scales[s];
    for (int r = 0; r < sc.grid_size; ++r)
      for (int c = 0; c < sc.grid_size; ++c)
        for (int a = 0; a < B; ++a) {
          if (is_assigned(s, r, c, a)) continue;
          const double obj_logit = out.at(r, c, a, kObjectness);
          const Box decoded{(sigmoid(out.at(r, c, a, kTx)) + c) * sc.stride,
                            (sigmoid(out.at(r, c, a, kTy)) + r) * sc.stride,
                            sc.anchors[a].width * std::exp(std::min(out.at(r, c, a, kTw), kMaxLogScale)),
                            sc.anchors[a].height * std::exp(std::min(out.at(r, c, a, kTh), kMaxLogScale))};
          const bool ignored = std::any_of(truth.begin(), truth.end(),
                                           [&](const SceneObject& o) { return iou(o.box, decoded) > ignore_iou; });
          if (ignored) continue;
          const double g = bce_grad(obj_logit, 0.0, &loss);
          if (grad) grad->scales[s].at(r, c, a, kObjectness) += g;
        }
  }

  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto& obj = truth[i];
    const auto& m = assigned[i];
    const auto& sc = config.scales[m.scale];
    const auto& out = raw.scales[m.scale];
    const auto& anchor = sc.anchors[m.anchor];
    auto add = [&](int field, double g) {
      if (grad) grad->scales[m.scale].at(m.row, m.col, m.anchor, field) += g;
    };
    // Small boxes weigh more, as in YOLOv3.
    const double scale_weight = 2.0 - obj.box.w * obj.box.h / (static_cast<double>(config.input_side()) * config.input_side());
    const double tx = std::clamp(obj.box.x / sc.stride - m.col, 0.0, 1.0);
    const double ty = std::clamp(obj.box.y / sc.stride - m.row, 0.0, 1.0);
    double coord = 0.0;
    add(kTx, scale_weight * bce_grad(out.at(m.row, m.col, m.anchor, kTx), tx, &coord));
    add(kTy, scale_weight * bce_grad(out.at(m.row, m.col, m.anchor, kTy), ty, &coord));
    loss += scale_weight * coord;
    const double tw = std::log(obj.box.w / anchor.width), th = std::log(obj.box.h / anchor.height);
    const double dw = out.at(m.row, m.col, m.anchor, kTw) - tw, dh = out.at(m.row, m.col, m.anchor, kTh) - th;
    loss += scale_weight * 0.5 * (dw * dw + dh * dh);
    add(kTw, scale_weight * dw);
    add(kTh, scale_weight * dh);
    add(kObjectness, bce_grad(out.at(m.row, m.col, m.anchor, kObjectness), 1.0, &loss));
    for (int k = 0; k < config.num_classes; ++k)
      add(kFirstClass + k, bce_grad(out.at(m.row, m.col, m.anchor, kFirstClass + k), k + 1 == obj.class_id ? 1.0 : 0.0, &loss));
  }
  return loss;
}

DetectorWeights train_toy_detector(const TrainOptions& options,
                                   const std::function<void(int, double)>& progress) {
  if (options.steps < 0 || options.batch < 1 || !(options.learning_rate > 0))
    throw ConfigError("training needs steps >= 0, batch >= 1 and a positive learning rate");
  const ScaleConfig config = toy_scale_config();
  DetectorWeights weights = init_detector(config, kToySide, options.seed, 3, options.trunk_width);

  std::size_t n_params = 0;
  for (const auto& l : weights.layers) n_params += l.weight.size() + l.bias.size();
  std::vector<double> m(n_params, 0.0), v(n_params, 0.0);
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  for (int step = 0; step < options.steps; ++step) {
    const YoloNet net(weights);
    std::vector<ConvLayer> grads = weights.layers;
    for (auto& g : grads) {
      std::fill(g.weight.begin(), g.weight.end(), 0.0);
      std::fill(g.bias.begin(), g.bias.end(), 0.0);
    }
    double batch_loss = 0.0;
    for (int b = 0; b < options.batch; ++b) {
      const auto scene_seed = mix_seed(mix_seed(options.seed, 0x7261696e), static_cast<std::uint64_t>(step) * options.batch + b);
      const Scene scene = generate_scene(scene_seed);
      const ForwardTrace trace = net.trace(scene.image.tensor());
      RawPrediction grad_raw = RawPrediction::zeros(config);
      batch_loss += training_loss(trace.prediction, config, scene.objects, &grad_raw);
      net.backward(trace, grad_raw, &grads);
    }
    batch_loss /= options.batch;

    const double bias1 = 1.0 - std::pow(beta1, step + 1), bias2 = 1.0 - std::pow(beta2, step + 1);
    std::size_t k = 0;
    auto update = [&](std::vector<double>& params, const std::vector<double>& g) {
      for (std::size_t i = 0; i < params.size(); ++i, ++k) {
        const double gi = g[i] / options.batch;
        m[k] = beta1 * m[k] + (1 - beta1) * gi;
        v[k] = beta2 * v[k] + (1 - beta2) * gi * gi;
        params[i] -= options.learning_rate * (m[k] / bias1) / (std::sqrt(v[k] / bias2) + eps);
      }
    };
    for (std::size_t l = 0; l < weights.layers.size(); ++l) {
      update(weights.layers[l].weight, grads[l].weight);
      update(weights.layers[l].bias, grads[l].bias);
    }
    if (progress) progress(step, batch_loss);
  }

  for (auto& l : weights.layers) {
    for (double& w : l.weight) w = static_cast<float>(w);
    for (double& b : l.bias) b = static_cast<float>(b);
  }
  return weights;
}

}  // namespace advoverlay
