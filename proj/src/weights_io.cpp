#include "advoverlay/weights_io.hpp"

#include <array>
#include <bit>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "advoverlay/errors.hpp"

namespace advoverlay {

namespace {

constexpr std::array<char, 4> kMagic{'A', 'D', 'V', 'D'};
constexpr std::uint32_t kMaxReasonable = 1u << 20;

template <typename U>
void put(std::ostream& out, U value) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xff);
  out.write(bytes.data(), bytes.size());
}

void put_f32(std::ostream& out, double v) { put(out, std::bit_cast<std::uint32_t>(static_cast<float>(v))); }

template <typename U>
U get(std::istream& in) {
  std::array<unsigned char, sizeof(U)> bytes{};
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size()))
    throw InputError("weights file truncated");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

double get_f32(std::istream& in) { return std::bit_cast<float>(get<std::uint32_t>(in)); }

std::uint32_t get_count(std::istream& in, const char* what) {
  const auto v = get<std::uint32_t>(in);
  if (v > kMaxReasonable) throw InputError(std::string("implausible ") + what + " in weights file");
  return v;
}

}  // namespace

void write_weights(std::ostream& out, const DetectorWeights& weights) {
  const auto& arch = weights.architecture;
  const auto& config = arch.scales;
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kWeightsFormatVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(arch.input_side()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(arch.input_channels));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(arch.trunk_width));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(config.num_classes));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(config.boxes_per_cell));
  put<std::uint64_t>(out, weights.seed);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(config.scales.size()));
  for (const auto& s : config.scales) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.stride));
    for (const auto& a : s.anchors) {
      put_f32(out, a.width);
      put_f32(out, a.height);
    }
  }
  for (const auto& layer : weights.layers) {
    for (double w : layer.weight) put_f32(out, w);
    for (double b : layer.bias) put_f32(out, b);
  }
  if (!out) throw InputError("failed writing weights");
}

DetectorWeights read_weights(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) throw InputError("not a weights file (bad magic)");
  const auto version = get<std::uint32_t>(in);
  if (version != kWeightsFormatVersion)
    throw InputError("unsupported weights format version " + std::to_string(version));

  DetectorWeights weights;
  auto& arch = weights.architecture;
  const auto side = static_cast<int>(get_count(in, "input side"));
  arch.input_channels = static_cast<int>(get_count(in, "channel count"));
  arch.trunk_width = static_cast<int>(get_count(in, "trunk width"));
  arch.scales.num_classes = static_cast<int>(get_count(in, "class count"));
  arch.scales.boxes_per_cell = static_cast<int>(get_count(in, "boxes per cell"));
  weights.seed = get<std::uint64_t>(in);
  const auto n_scales = get_count(in, "scale count");
  for (std::uint32_t i = 0; i < n_scales; ++i) {
    Scale s;
    s.stride = static_cast<int>(get_count(in, "stride"));
    if (s.stride == 0 || side % s.stride != 0) throw InputError("weights file stride does not divide input side");
    s.grid_size = side / s.stride;
    for (int a = 0; a < arch.scales.boxes_per_cell; ++a) {
      const double w = get_f32(in);
      const double h = get_f32(in);
      s.anchors.push_back({w, h});
    }
    arch.scales.scales.push_back(std::move(s));
  }
  try {
    weights.layers = layer_shapes(arch);
  } catch (const ConfigError& e) {
    throw InputError(std::string("weights file has an invalid architecture: ") + e.what());
  }
  for (auto& layer : weights.layers) {
    for (double& w : layer.weight) w = get_f32(in);
    for (double& b : layer.bias) b = get_f32(in);
  }
  return weights;
}

void save_weights(const std::filesystem::path& path, const DetectorWeights& weights) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  write_weights(out, weights);
}

DetectorWeights load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open weights file " + path.string());
  return read_weights(in);
}

}  // namespace advoverlay
