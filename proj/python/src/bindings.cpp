#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "advoverlay/attack.hpp"
#include "advoverlay/errors.hpp"
#include "advoverlay/evaluation.hpp"
#include "advoverlay/toy.hpp"
#include "advoverlay/weights_io.hpp"
#include "advoverlay/yolo_net.hpp"

namespace py = pybind11;
using namespace advoverlay;

namespace {

using FloatArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

// Images cross the boundary as H x W x C float arrays in [0, 1].
ImageTensor to_image(const FloatArray& a) {
  if (a.ndim() != 3) throw ShapeError("image: expected an H x W x C array");
  const int h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1)), c = static_cast<int>(a.shape(2));
  Tensor3 t(c, h, w);
  auto r = a.unchecked<3>();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < c; ++k) t.at(k, y, x) = r(y, x, k);
  return ImageTensor(std::move(t));
}

py::array_t<double> from_image(const ImageTensor& img) {
  py::array_t<double> a({img.height(), img.width(), img.channels()});
  auto r = a.mutable_unchecked<3>();
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int k = 0; k < img.channels(); ++k) r(y, x, k) = img.at(k, y, x);
  return a;
}

py::array_t<bool> from_mask(const Mask& m) {
  py::array_t<bool> a({m.height(), m.width()});
  auto r = a.mutable_unchecked<2>();
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) r(y, x) = m.at(y, x);
  return a;
}

Mask to_mask(const py::array_t<bool, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw ShapeError("mask: expected an H x W array");
  Mask m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  auto r = a.unchecked<2>();
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) m.set(y, x, r(y, x));
  return m;
}

std::vector<Rect> to_rects(const std::vector<std::tuple<int, int, int, int>>& rects) {
  std::vector<Rect> out;
  for (const auto& [x, y, w, h] : rects) out.push_back({x, y, w, h});
  return out;
}

py::dict detection_dict(const Detection& d) {
  py::dict o;
  o["class_id"] = d.class_id;
  o["score"] = d.score;
  o["x"] = d.box.x;
  o["y"] = d.box.y;
  o["w"] = d.box.w;
  o["h"] = d.box.h;
  return o;
}

py::list detection_list(const std::vector<Detection>& ds) {
  py::list out;
  for (const auto& d : ds) out.append(detection_dict(d));
  return out;
}

AttackConfig make_config(const std::string& mode, std::optional<int> target_class, double xi, double alpha,
                         int iterations, bool monochrome, const std::string& channel_source,
                         const std::string& application, const std::string& monochrome_update) {
  AttackConfig c;
  c.mode = parse_attack_mode(mode);
  c.target_class = target_class;
  c.xi = xi;
  c.alpha = alpha;
  c.iterations = iterations;
  c.monochrome = monochrome;
  c.channel_source = parse_channel_source(channel_source);
  c.application = parse_application(application);
  c.monochrome_update = parse_monochrome_update(monochrome_update);
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Adversarial overlay attacks on YOLO-style detectors";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);

  py::class_<AttackConfig>(m, "AttackConfig")
      .def(py::init(&make_config), py::arg("mode") = "multi-untargeted", py::arg("target_class") = std::nullopt,
           py::arg("xi") = 8.0, py::arg("alpha") = 2.0, py::arg("iterations") = 100, py::arg("monochrome") = false,
           py::arg("channel_source") = "average", py::arg("application") = "overlay",
           py::arg("monochrome_update") = "raw")
      .def_property_readonly("mode", [](const AttackConfig& c) { return std::string(to_string(c.mode)); })
      .def_readwrite("target_class", &AttackConfig::target_class)
      .def_readwrite("xi", &AttackConfig::xi)
      .def_readwrite("alpha", &AttackConfig::alpha)
      .def_readwrite("iterations", &AttackConfig::iterations)
      .def_readwrite("monochrome", &AttackConfig::monochrome)
      .def_property_readonly("channel_source",
                             [](const AttackConfig& c) { return std::string(to_string(c.channel_source)); })
      .def("validate", &AttackConfig::validate, py::arg("num_classes"));

  py::class_<YoloNet>(m, "Detector")
      .def_static("toy", [](std::uint64_t seed) { return YoloNet(init_detector(toy_scale_config(), kToySide, seed)); },
                  py::arg("seed") = 0, "Untrained toy detector initialised from a seed")
      .def_static("load", [](const std::filesystem::path& p) { return YoloNet(load_weights(p)); }, py::arg("path"))
      .def_property_readonly("input_side", &YoloNet::input_side)
      .def_property_readonly("num_classes", [](const YoloNet& n) { return n.scale_config().num_classes; })
      .def(
          "detect",
          [](const YoloNet& n, const FloatArray& image, double conf, double iou_threshold) {
            return detection_list(detect_boxes(n.forward(to_image(image)), n.scale_config(), conf, iou_threshold));
          },
          py::arg("image"), py::arg("conf") = kDefaultConfThreshold, py::arg("iou") = kDefaultIouThreshold);

  m.def(
      "build_mask",
      [](const std::vector<std::tuple<int, int, int, int>>& rects, int height, int width) {
        return from_mask(build_mask(to_rects(rects), height, width));
      },
      py::arg("rects"), py::arg("height"), py::arg("width"), "Union of (x, y, w, h) rectangles, clipped to the image");

  m.def(
      "run_attack",
      [](const YoloNet& det, const FloatArray& image, const py::array_t<bool, py::array::c_style | py::array::forcecast>& mask,
         const AttackConfig& config, bool stop_on_success) {
        AttackResult r;
        {
          const ImageTensor img = to_image(image);
          const Mask msk = to_mask(mask);
          py::gil_scoped_release release;
          r = run_attack(img, msk, config, det, stop_on_success);
        }
        py::dict out;
        out["adversarial"] = from_image(r.adversarial);
        out["success"] = r.report.success;
        out["iterations_used"] = r.report.iterations_used;
        out["benign_box_count"] = r.report.benign_box_count;
        out["adversarial_box_count"] = r.report.adversarial_box_count;
        std::vector<double> losses;
        for (const auto& it : r.report.per_iteration) losses.push_back(it.loss);
        out["loss"] = losses;
        out["benign_detections"] = detection_list(r.benign_detections);
        out["adversarial_detections"] = detection_list(r.adversarial_detections);
        out["report_csv"] = report_csv(r.report);
        return out;
      },
      py::arg("detector"), py::arg("image"), py::arg("mask"), py::arg("config") = AttackConfig{},
      py::arg("stop_on_success") = false);

  m.def(
      "generate_scene",
      [](std::uint64_t seed) {
        const Scene s = generate_scene(seed);
        py::list objects;
        for (const auto& o : s.objects) {
          py::dict d;
          d["class_id"] = o.class_id;
          d["x"] = o.box.x;
          d["y"] = o.box.y;
          d["w"] = o.box.w;
          d["h"] = o.box.h;
          objects.append(d);
        }
        return py::make_tuple(from_image(s.image), objects);
      },
      py::arg("seed"), "Synthetic toy scene: (H x W x 3 image, list of objects)");

  m.def(
      "success_rate",
      [](const std::vector<std::optional<int>>& first_success, int at_iteration) {
        std::vector<TrialResult> trials;
        for (const auto& f : first_success) {
          TrialResult t;
          t.per_iteration_boxes.assign(at_iteration, 0);
          t.first_success_iteration = f;
          trials.push_back(t);
        }
        return success_rate(trials, at_iteration);
      },
      py::arg("first_success_iterations"), py::arg("at_iteration"));
}
