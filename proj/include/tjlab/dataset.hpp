#pragma once

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

enum class Split : std::uint8_t { train = 0, valid = 1, test = 2, seed = 3 };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
    case Split::seed: return "seed";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "valid") return Split::valid;
  if (s == "test") return Split::test;
  if (s == "seed") return Split::seed;
  throw Error("unknown split '" + s + "'");
}

struct ImageGeometry {
  int height = 32;
  int width = 32;
  int channels = 3;

  std::size_t size() const noexcept { return static_cast<std::size_t>(height) * width * channels; }
  Shape tensor_shape() const noexcept { return {channels, height, width}; }
  friend bool operator==(const ImageGeometry&, const ImageGeometry&) = default;
};

// Byte images stored interleaved (H, W, C), one label and one provenance flag
// per image.
struct LabeledDataset {
  ImageGeometry geometry;
  int class_count = 0;
  Split split = Split::train;
  std::vector<std::uint8_t> pixels;
  std::vector<int> labels;
  std::vector<std::uint8_t> poisoned;  // 0 = benign, 1 = poisoned

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }

  std::span<const std::uint8_t> image(std::size_t i) const {
    return {pixels.data() + i * geometry.size(), geometry.size()};
  }
  std::span<std::uint8_t> image(std::size_t i) { return {pixels.data() + i * geometry.size(), geometry.size()}; }

  std::size_t poisoned_count() const {
    std::size_t n = 0;
    for (auto p : poisoned) n += p;
    return n;
  }

  void push_back(std::span<const std::uint8_t> img, int label, bool is_poisoned = false) {
    if (img.size() != geometry.size()) throw ShapeError("dataset: image byte count mismatch");
    pixels.insert(pixels.end(), img.begin(), img.end());
    labels.push_back(label);
    poisoned.push_back(is_poisoned ? 1 : 0);
  }

  void validate() const {
    if (pixels.size() != labels.size() * geometry.size() || poisoned.size() != labels.size()) {
      throw ShapeError("dataset: images, labels and provenance differ in length");
    }
    for (int y : labels) {
      if (y < 0 || y >= class_count) {
        throw ShapeError("dataset: label " + std::to_string(y) + " outside [0, " + std::to_string(class_count) + ")");
      }
    }
  }
};

// Byte HWC image -> normalized CHW tensor in [0, 1].
template <std::floating_point T>
void to_tensor(std::span<const std::uint8_t> hwc, const ImageGeometry& g, std::span<T> chw) {
  const std::size_t plane = static_cast<std::size_t>(g.height) * g.width;
  for (std::size_t p = 0; p < plane; ++p) {
    for (int c = 0; c < g.channels; ++c) {
      chw[c * plane + p] = static_cast<T>(hwc[p * g.channels + c]) / T(255);
    }
  }
}

template <std::floating_point T>
std::vector<T> to_tensor(std::span<const std::uint8_t> hwc, const ImageGeometry& g) {
  std::vector<T> out(g.size());
  to_tensor<T>(hwc, g, std::span<T>(out));
  return out;
}

template <std::floating_point T>
TensorSet<T> to_tensors(const LabeledDataset& ds) {
  TensorSet<T> out{ds.geometry.tensor_shape(), std::vector<T>(ds.pixels.size()), ds.labels};
  for (std::size_t i = 0; i < ds.size(); ++i) to_tensor<T>(ds.image(i), ds.geometry, out.sample(i));
  return out;
}

template <std::floating_point T>
TensorSet<T> concat(const TensorSet<T>& a, const TensorSet<T>& b) {
  if (a.shape != b.shape) throw ShapeError("concat: shape mismatch");
  TensorSet<T> out = a;
  out.data.insert(out.data.end(), b.data.begin(), b.data.end());
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  return out;
}

// Dataset file layout (little-endian):
//   "TJD1" | u16 version | u32 H, W, C | u32 class count | u8 split | u64 N
//   N x u32 label | ceil(N/8) provenance bitmap (bit i = image i, LSB first)
//   N*H*W*C pixel bytes
inline constexpr std::uint16_t kDatasetVersion = 1;

inline std::vector<std::uint8_t> encode_dataset(const LabeledDataset& ds) {
  ds.validate();
  io::ByteWriter w;
  w.magic("TJD1");
  w.u16(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(ds.geometry.height));
  w.u32(static_cast<std::uint32_t>(ds.geometry.width));
  w.u32(static_cast<std::uint32_t>(ds.geometry.channels));
  w.u32(static_cast<std::uint32_t>(ds.class_count));
  w.u8(static_cast<std::uint8_t>(ds.split));
  w.u64(ds.size());
  for (int y : ds.labels) w.u32(static_cast<std::uint32_t>(y));
  std::vector<std::uint8_t> bitmap((ds.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.poisoned[i]) bitmap[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
  w.bytes(bitmap);
  w.bytes(ds.pixels);
  return w.data();
}

inline LabeledDataset decode_dataset(std::span<const std::uint8_t> bytes, const std::string& what = "dataset") {
  io::ByteReader r(bytes, what);
  r.expect_magic("TJD1");
  const auto version = r.u16();
  if (version != kDatasetVersion) {
    throw FormatError(what + ": unsupported version " + std::to_string(version));
  }
  LabeledDataset ds;
  ds.geometry.height = static_cast<int>(r.u32());
  ds.geometry.width = static_cast<int>(r.u32());
  ds.geometry.channels = static_cast<int>(r.u32());
  ds.class_count = static_cast<int>(r.u32());
  const auto split = r.u8();
  if (split > static_cast<std::uint8_t>(Split::seed)) throw FormatError(what + ": bad split tag");
  ds.split = static_cast<Split>(split);
  const auto n = r.u64();
  if (ds.geometry.size() == 0 || ds.class_count <= 0) throw FormatError(what + ": bad geometry or class count");
  const std::size_t expected = n * 4 + (n + 7) / 8 + n * ds.geometry.size();
  if (r.remaining() != expected) {
    throw FormatError(what + ": length mismatch, expected " + std::to_string(expected) + " bytes after header, found " +
                      std::to_string(r.remaining()));
  }
  ds.labels.resize(n);
  for (auto& y : ds.labels) y = static_cast<int>(r.u32());
  const auto bitmap = r.bytes((n + 7) / 8, "provenance bitmap");
  ds.poisoned.resize(n);
  for (std::size_t i = 0; i < n; ++i) ds.poisoned[i] = (bitmap[i / 8] >> (i % 8)) & 1u;
  const auto px = r.bytes(n * ds.geometry.size(), "pixels");
  ds.pixels.assign(px.begin(), px.end());
  ds.validate();
  return ds;
}

inline void save_dataset(const LabeledDataset& ds, const std::string& path) { io::write_file(path, encode_dataset(ds)); }

inline LabeledDataset load_dataset(const std::string& path) { return decode_dataset(io::read_file(path), path); }

// Content hashes of every image, for split-disjointness checks.
inline std::vector<std::uint64_t> image_hashes(const LabeledDataset& ds) {
  std::vector<std::uint64_t> h;
  h.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) h.push_back(io::fnv1a(ds.image(i)));
  return h;
}

}  // namespace tjlab
