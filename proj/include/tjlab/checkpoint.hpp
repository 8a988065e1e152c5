#pragma once

#include <concepts>
#include <cstdint>
#include <string>
#include <vector>

#include "tjlab/binary_io.hpp"
#include "tjlab/error.hpp"
#include "tjlab/network.hpp"

namespace tjlab {

// Checkpoint layout (little-endian):
//   "TJF1" | u16 version | u32 C,H,W | u32 layer count
//   per layer: u8 kind | u32 units | u32 kernel | u32 stride | u32 padding
//   u64 value count | value count x f32 (per layer: weights, then bias)
inline constexpr std::uint16_t kCheckpointVersion = 1;

template <std::floating_point T>
std::vector<std::uint8_t> encode_checkpoint(const Network<T>& net) {
  io::ByteWriter w;
  w.magic("TJF1");
  w.u16(kCheckpointVersion);
  const auto& s = net.input_shape();
  w.u32(static_cast<std::uint32_t>(s.channels));
  w.u32(static_cast<std::uint32_t>(s.height));
  w.u32(static_cast<std::uint32_t>(s.width));
  w.u32(static_cast<std::uint32_t>(net.layer_count()));
  for (const auto& L : net.layers()) {
    w.u8(static_cast<std::uint8_t>(L.kind));
    w.u32(static_cast<std::uint32_t>(L.units));
    w.u32(static_cast<std::uint32_t>(L.kernel));
    w.u32(static_cast<std::uint32_t>(L.stride));
    w.u32(static_cast<std::uint32_t>(L.padding));
  }
  w.u64(net.parameter_count());
  for (const auto& b : net.params()) {
    for (T v : b.weights) w.f32(static_cast<float>(v));
    for (T v : b.bias) w.f32(static_cast<float>(v));
  }
  return w.data();
}

template <std::floating_point T = float>
Network<T> decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& what = "checkpoint") {
  io::ByteReader r(bytes, what);
  r.expect_magic("TJF1");
  const auto version = r.u16();
  if (version != kCheckpointVersion) {
    throw FormatError(what + ": unsupported version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  Shape in;
  in.channels = static_cast<int>(r.u32());
  in.height = static_cast<int>(r.u32());
  in.width = static_cast<int>(r.u32());
  const auto n_layers = r.u32();
  if (n_layers == 0 || n_layers > 4096) throw FormatError(what + ": implausible layer count " + std::to_string(n_layers));
  std::vector<LayerSpec> layers;
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    LayerSpec L;
    const auto kind = r.u8();
    if (kind > static_cast<std::uint8_t>(LayerKind::global_avg_pool)) {
      throw FormatError(what + ": unknown layer kind " + std::to_string(kind));
    }
    L.kind = static_cast<LayerKind>(kind);
    L.units = static_cast<int>(r.u32());
    L.kernel = static_cast<int>(r.u32());
    L.stride = static_cast<int>(r.u32());
    L.padding = static_cast<int>(r.u32());
    layers.push_back(L);
  }
  Network<T> net(in, std::move(layers));
  const auto count = r.u64();
  if (count != net.parameter_count()) {
    throw FormatError(what + ": header declares " + std::to_string(count) + " values but layer specs need " +
                      std::to_string(net.parameter_count()));
  }
  const std::size_t expected = count * 4;
  if (r.remaining() != expected) {
    throw FormatError(what + ": payload length mismatch, expected " + std::to_string(expected) + " bytes, found " +
                      std::to_string(r.remaining()));
  }
  for (auto& b : net.params()) {
    for (auto& v : b.weights) v = static_cast<T>(r.f32());
    for (auto& v : b.bias) v = static_cast<T>(r.f32());
  }
  return net;
}

template <std::floating_point T>
void save_checkpoint(const Network<T>& net, const std::string& path) {
  io::write_file(path, encode_checkpoint(net));
}

template <std::floating_point T = float>
Network<T> load_checkpoint(const std::string& path) {
  return decode_checkpoint<T>(io::read_file(path), path);
}

}  // namespace tjlab
