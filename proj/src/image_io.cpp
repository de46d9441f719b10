#include "advoverlay/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "advoverlay/errors.hpp"

namespace advoverlay {

namespace {

constexpr double kPadValue = 0.5;

// cv::Mat (CV_64FC1 / CV_64FC3, RGB order) <-> planar tensor.
Tensor3 from_mat(const cv::Mat& m) {
  const int c = m.channels();
  Tensor3 t(c, m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y) {
    const double* row = m.ptr<double>(y);
    for (int x = 0; x < m.cols; ++x)
      for (int ch = 0; ch < c; ++ch) t.at(ch, y, x) = row[x * c + ch];
  }
  return t;
}

cv::Mat to_mat(const Tensor3& t) {
  cv::Mat m(t.height(), t.width(), CV_64FC(t.channels()));
  const int c = t.channels();
  for (int y = 0; y < t.height(); ++y) {
    double* row = m.ptr<double>(y);
    for (int x = 0; x < t.width(); ++x)
      for (int ch = 0; ch < c; ++ch) row[x * c + ch] = t.at(ch, y, x);
  }
  return m;
}

std::uint8_t quantize(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

ImageTensor decode_image(std::span<const std::uint8_t> bytes, int channels) {
  if (channels != 1 && channels != 3) throw ShapeError("channels must be 1 or 3");
  if (bytes.empty()) throw InputError("empty image data");
  const cv::Mat buffer(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
  cv::Mat decoded;
  try {
    decoded = cv::imdecode(buffer, channels == 3 ? cv::IMREAD_COLOR : cv::IMREAD_GRAYSCALE);
  } catch (const cv::Exception& e) {
    throw InputError(std::string("cannot decode image: ") + e.what());
  }
  if (decoded.empty()) throw InputError("cannot decode image data");
  if (channels == 3) cv::cvtColor(decoded, decoded, cv::COLOR_BGR2RGB);
  cv::Mat scaled;
  decoded.convertTo(scaled, CV_64F, 1.0 / 255.0);
  return ImageTensor::clipped(from_mat(scaled));
}

ImageTensor load_image(const std::filesystem::path& path, int channels) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_image(bytes, channels);
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_png(const ImageTensor& image) {
  const int c = image.channels();
  cv::Mat m(image.height(), image.width(), CV_8UC(c));
  for (int y = 0; y < image.height(); ++y) {
    auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < image.width(); ++x) {
      if (c == 3) {
        row[x * 3 + 0] = quantize(image.at(2, y, x));  // BGR
        row[x * 3 + 1] = quantize(image.at(1, y, x));
        row[x * 3 + 2] = quantize(image.at(0, y, x));
      } else {
        row[x] = quantize(image.at(0, y, x));
      }
    }
  }
  std::vector<std::uint8_t> out;
  if (!cv::imencode(".png", m, out)) throw InputError("PNG encoding failed");
  return out;
}

void save_png(const std::filesystem::path& path, const ImageTensor& image) {
  write_file_bytes(path, encode_png(image));
}

ImageTensor letterbox(const ImageTensor& image, int side) {
  if (side <= 0) throw ShapeError("letterbox side must be positive");
  if (image.height() == side && image.width() == side) return image;
  const double scale = std::min(static_cast<double>(side) / image.width(), static_cast<double>(side) / image.height());
  const int new_w = std::clamp(static_cast<int>(std::lround(image.width() * scale)), 1, side);
  const int new_h = std::clamp(static_cast<int>(std::lround(image.height() * scale)), 1, side);
  cv::Mat resized;
  cv::resize(to_mat(image.tensor()), resized, cv::Size(new_w, new_h), 0, 0, cv::INTER_LINEAR);
  const Tensor3 inner = from_mat(resized);
  Tensor3 out(image.channels(), side, side, kPadValue);
  const int off_x = (side - new_w) / 2;
  const int off_y = (side - new_h) / 2;
  for (int ch = 0; ch < image.channels(); ++ch)
    for (int y = 0; y < new_h; ++y)
      for (int x = 0; x < new_w; ++x) out.at(ch, y + off_y, x + off_x) = inner.at(ch, y, x);
  return ImageTensor::clipped(std::move(out));
}

std::vector<std::uint8_t> encode_mask_png(const Mask& mask) {
  cv::Mat m(mask.height(), mask.width(), CV_8UC1);
  for (int y = 0; y < mask.height(); ++y) {
    auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < mask.width(); ++x) row[x] = mask.at(y, x) ? 255 : 0;
  }
  std::vector<std::uint8_t> out;
  if (!cv::imencode(".png", m, out, {cv::IMWRITE_PNG_BILEVEL, 1})) throw InputError("PNG encoding failed");
  return out;
}

void save_mask_png(const std::filesystem::path& path, const Mask& mask) {
  write_file_bytes(path, encode_mask_png(mask));
}

Mask load_mask_png(const std::filesystem::path& path) {
  const ImageTensor gray = load_image(path, 1);
  Mask mask(gray.height(), gray.width());
  for (int y = 0; y < gray.height(); ++y)
    for (int x = 0; x < gray.width(); ++x) mask.set(y, x, gray.at(0, y, x) > 0.5);
  return mask;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("failed writing " + path.string());
}

}  // namespace advoverlay
