#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace advoverlay {

/// Planar (channel-major) 3-D tensor of doubles: element (c, y, x) lives at
/// data[(c * height + y) * width + x].
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(int channels, int height, int width, double fill = 0.0);

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }
  std::size_t plane_size() const { return static_cast<std::size_t>(height_) * width_; }

  double& at(int c, int y, int x) { return data_[index(c, y, x)]; }
  double at(int c, int y, int x) const { return data_[index(c, y, x)]; }

  std::span<double> plane(int c) { return {data_.data() + c * plane_size(), plane_size()}; }
  std::span<const double> plane(int c) const {
    return {data_.data() + c * plane_size(), plane_size()};
  }

  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  bool same_shape(const Tensor3& other) const {
    return channels_ == other.channels_ && height_ == other.height_ && width_ == other.width_;
  }

  bool operator==(const Tensor3&) const = default;

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

/// An image with every element in [0, 1]. Channels are 1 (gray) or 3 (RGB).
class ImageTensor {
 public:
  ImageTensor() = default;

  /// Throws ShapeError on a bad channel count, InputError on out-of-range values.
  explicit ImageTensor(Tensor3 pixels);
  ImageTensor(int channels, int height, int width, double fill);

  /// Clamps every element into [0, 1] instead of rejecting.
  static ImageTensor clipped(Tensor3 pixels);

  int channels() const { return pixels_.channels(); }
  int height() const { return pixels_.height(); }
  int width() const { return pixels_.width(); }
  double at(int c, int y, int x) const { return pixels_.at(c, y, x); }
  const Tensor3& tensor() const { return pixels_; }

  bool operator==(const ImageTensor&) const = default;

 private:
  struct Unchecked {};
  ImageTensor(Tensor3 pixels, Unchecked) : pixels_(std::move(pixels)) {}

  Tensor3 pixels_;
};

}  // namespace advoverlay
