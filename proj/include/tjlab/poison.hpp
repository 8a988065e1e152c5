#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tjlab/dataset.hpp"
#include "tjlab/error.hpp"
#include "tjlab/rng.hpp"

namespace tjlab {

enum class PatchPlacement : std::uint8_t { fixed, random };

// Solid colored square stamped into the image, plus the relabeling target.
// With fixed placement the patch's top-left corner is (row, col), moved by up
// to `jitter` pixels in each direction; negative row/col count from the
// bottom/right edge.
struct TrojanSpec {
  std::array<std::uint8_t, 3> color{255, 255, 0};
  int patch_size = 4;
  PatchPlacement placement = PatchPlacement::fixed;
  int row = -6;
  int col = -6;
  int jitter = 1;
  double poison_fraction = 0.2;
  int target_class = 0;

  void validate(const ImageGeometry& g, int class_count) const {
    if (!(poison_fraction > 0.0 && poison_fraction <= 1.0)) {
      throw Error("trojan: poison_fraction must be in (0, 1], got " + std::to_string(poison_fraction));
    }
    if (target_class < 0 || target_class >= class_count) {
      throw Error("trojan: target_class " + std::to_string(target_class) + " outside [0, " +
                  std::to_string(class_count) + ")");
    }
    if (patch_size <= 0 || patch_size > g.height || patch_size > g.width) {
      throw ShapeError("trojan: patch size " + std::to_string(patch_size) + " does not fit the image");
    }
    if (placement == PatchPlacement::fixed) {
      const int r = resolve(row, g.height), c = resolve(col, g.width);
      if (r - jitter < 0 || c - jitter < 0 || r + jitter + patch_size > g.height || c + jitter + patch_size > g.width) {
        throw ShapeError("trojan: patch at (" + std::to_string(r) + ", " + std::to_string(c) + ") with jitter " +
                         std::to_string(jitter) + " leaves the image");
      }
    }
  }

  static int resolve(int v, int extent) { return v < 0 ? extent + v : v; }
};

// Stamps the patch in place.
inline void stamp_trigger(std::span<std::uint8_t> img, const ImageGeometry& g, const TrojanSpec& t, Rng& rng) {
  int r0, c0;
  if (t.placement == PatchPlacement::random) {
    r0 = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(g.height - t.patch_size + 1)));
    c0 = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(g.width - t.patch_size + 1)));
  } else {
    const auto span = static_cast<std::uint64_t>(2 * t.jitter + 1);
    r0 = TrojanSpec::resolve(t.row, g.height) + static_cast<int>(uniform_index(rng, span)) - t.jitter;
    c0 = TrojanSpec::resolve(t.col, g.width) + static_cast<int>(uniform_index(rng, span)) - t.jitter;
  }
  for (int y = r0; y < r0 + t.patch_size; ++y) {
    for (int x = c0; x < c0 + t.patch_size; ++x) {
      for (int c = 0; c < g.channels; ++c) {
        img[(static_cast<std::size_t>(y) * g.width + x) * g.channels + c] = t.color[static_cast<std::size_t>(c % 3)];
      }
    }
  }
}

// Stamps round(fraction * N) uniformly chosen images and relabels them to the
// target class.
inline LabeledDataset poison(LabeledDataset ds, const TrojanSpec& t, std::uint64_t seed) {
  if (ds.split != Split::train && ds.split != Split::valid) {
    throw Error(std::string("poison: only train/valid splits may be poisoned, got ") + to_string(ds.split));
  }
  t.validate(ds.geometry, ds.class_count);
  const auto count = static_cast<std::size_t>(std::llround(t.poison_fraction * static_cast<double>(ds.size())));
  if (count < 1) {
    throw Error("poison: fraction " + std::to_string(t.poison_fraction) + " of " + std::to_string(ds.size()) +
                " images selects nothing");
  }
  Rng rng(seed);
  const auto order = permutation(ds.size(), rng);
  for (std::size_t k = 0; k < count; ++k) {
    const auto i = order[k];
    stamp_trigger(ds.image(i), ds.geometry, t, rng);
    ds.labels[i] = t.target_class;
    ds.poisoned[i] = 1;
  }
  return ds;
}

// Copy of `ds` with every image stamped and labels left untouched; used to
// measure the planted trigger's attack success rate.
inline LabeledDataset stamp_all(LabeledDataset ds, const TrojanSpec& t, std::uint64_t seed) {
  t.validate(ds.geometry, ds.class_count);
  Rng rng(seed);
  for (std::size_t i = 0; i < ds.size(); ++i) stamp_trigger(ds.image(i), ds.geometry, t, rng);
  return ds;
}

}  // namespace tjlab
