#pragma once

#include <algorithm>
#include <concepts>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tjlab/binary_io.hpp"
#include "tjlab/error.hpp"
#include "tjlab/network.hpp"
#include "tjlab/tensor_set.hpp"

namespace tjlab {

// A hidden unit whose stimulation forces one label on every seed image.
struct CandidateNeuron {
  NeuronRef neuron;
  int elevated_label = 0;
  double z_lo = 0;
  double z_hi = 0;
};

// Reverse-engineered input-space trigger: masked = (1 - alpha) * x + alpha * pattern.
// pattern and alpha share the network input layout (CHW, values in [0, 1]).
struct TrojanMask {
  Shape shape;
  std::vector<float> pattern;
  std::vector<float> alpha;
  CandidateNeuron source;
  double reasr = 0;     // fraction of seed images predicted as source.elevated_label when masked
  double asr_test = 0;  // targeted ASR toward elevated_label on held-out data (filled by evaluation)

  double alpha_l1() const {
    double s = 0;
    for (float a : alpha) s += a;
    return s;
  }

  static TrojanMask identity(const Shape& s) {
    return {s, std::vector<float>(s.size(), 0.f), std::vector<float>(s.size(), 0.f), {}, 0, 0};
  }
};

template <std::floating_point T>
void apply_mask(std::span<const T> image, const TrojanMask& m, std::span<T> out) {
  if (image.size() != m.alpha.size() || m.pattern.size() != m.alpha.size() || out.size() != image.size()) {
    throw ShapeError("apply_mask: mask has " + std::to_string(m.alpha.size()) + " values, image has " +
                     std::to_string(image.size()));
  }
  for (std::size_t i = 0; i < image.size(); ++i) {
    const T a = static_cast<T>(m.alpha[i]);
    const T v = (T(1) - a) * image[i] + a * static_cast<T>(m.pattern[i]);
    out[i] = std::clamp(v, T(0), T(1));
  }
}

template <std::floating_point T>
std::vector<T> apply_mask(std::span<const T> image, const TrojanMask& m) {
  std::vector<T> out(image.size());
  apply_mask<T>(image, m, std::span<T>(out));
  return out;
}

template <std::floating_point T>
TensorSet<T> apply_mask(const TensorSet<T>& data, const TrojanMask& m) {
  TensorSet<T> out = data;
  for (std::size_t i = 0; i < data.size(); ++i) apply_mask<T>(data.sample(i), m, out.sample(i));
  return out;
}

// Mask bundle layout (little-endian):
//   "TJM1" | u16 version | u32 mask count
//   per mask: u32 C, H, W | u32 layer | u32 unit | i32 elevated label
//             f64 z_lo | f64 z_hi | f64 reasr | f64 asr_test
//             C*H*W x f32 pattern | C*H*W x f32 alpha
inline constexpr std::uint16_t kMaskVersion = 1;

inline std::vector<std::uint8_t> encode_masks(std::span<const TrojanMask> masks) {
  io::ByteWriter w;
  w.magic("TJM1");
  w.u16(kMaskVersion);
  w.u32(static_cast<std::uint32_t>(masks.size()));
  for (const auto& m : masks) {
    w.u32(static_cast<std::uint32_t>(m.shape.channels));
    w.u32(static_cast<std::uint32_t>(m.shape.height));
    w.u32(static_cast<std::uint32_t>(m.shape.width));
    w.u32(static_cast<std::uint32_t>(m.source.neuron.layer));
    w.u32(static_cast<std::uint32_t>(m.source.neuron.unit));
    w.i32(m.source.elevated_label);
    w.f64(m.source.z_lo);
    w.f64(m.source.z_hi);
    w.f64(m.reasr);
    w.f64(m.asr_test);
    for (float v : m.pattern) w.f32(v);
    for (float v : m.alpha) w.f32(v);
  }
  return w.data();
}

inline std::vector<TrojanMask> decode_masks(std::span<const std::uint8_t> bytes, const std::string& what = "masks") {
  io::ByteReader r(bytes, what);
  r.expect_magic("TJM1");
  const auto version = r.u16();
  if (version != kMaskVersion) throw FormatError(what + ": unsupported version " + std::to_string(version));
  const auto n = r.u32();
  std::vector<TrojanMask> out;
  for (std::uint32_t k = 0; k < n; ++k) {
    TrojanMask m;
    m.shape.channels = static_cast<int>(r.u32());
    m.shape.height = static_cast<int>(r.u32());
    m.shape.width = static_cast<int>(r.u32());
    m.source.neuron.layer = r.u32();
    m.source.neuron.unit = static_cast<int>(r.u32());
    m.source.elevated_label = r.i32();
    m.source.z_lo = r.f64();
    m.source.z_hi = r.f64();
    m.reasr = r.f64();
    m.asr_test = r.f64();
    const auto sz = m.shape.size();
    if (r.remaining() < sz * 8) {
      throw FormatError(what + ": mask " + std::to_string(k) + " payload truncated, expected " +
                        std::to_string(sz * 8) + " bytes, found " + std::to_string(r.remaining()));
    }
    m.pattern.resize(sz);
    m.alpha.resize(sz);
    for (auto& v : m.pattern) v = r.f32();
    for (auto& v : m.alpha) v = r.f32();
    out.push_back(std::move(m));
  }
  if (r.remaining() != 0) throw FormatError(what + ": " + std::to_string(r.remaining()) + " trailing bytes");
  return out;
}

inline void save_masks(std::span<const TrojanMask> masks, const std::string& path) {
  io::write_file(path, encode_masks(masks));
}

inline std::vector<TrojanMask> load_masks(const std::string& path) { return decode_masks(io::read_file(path), path); }

}  // namespace tjlab
