#include "advoverlay/tensor.hpp"

#include <algorithm>
#include <string>

#include "advoverlay/errors.hpp"

namespace advoverlay {

Tensor3::Tensor3(int channels, int height, int width, double fill)
    : channels_(channels), height_(height), width_(width) {
  if (channels < 0 || height < 0 || width < 0) throw ShapeError("negative tensor dimension");
  data_.assign(static_cast<std::size_t>(channels) * height * width, fill);
}

namespace {

void check_image_shape(const Tensor3& t) {
  if (t.channels() != 1 && t.channels() != 3)
    throw ShapeError("image must have 1 or 3 channels, got " + std::to_string(t.channels()));
  if (t.height() <= 0 || t.width() <= 0) throw ShapeError("image must be non-empty");
}

}  // namespace

ImageTensor::ImageTensor(Tensor3 pixels) : pixels_(std::move(pixels)) {
  check_image_shape(pixels_);
  for (double v : pixels_.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw InputError("image value outside [0, 1]");
  }
}

ImageTensor::ImageTensor(int channels, int height, int width, double fill)
    : ImageTensor(Tensor3(channels, height, width, fill)) {}

ImageTensor ImageTensor::clipped(Tensor3 pixels) {
  check_image_shape(pixels);
  for (double& v : pixels.values()) v = std::clamp(v, 0.0, 1.0);
  return ImageTensor(std::move(pixels), Unchecked{});
}

}  // namespace advoverlay
