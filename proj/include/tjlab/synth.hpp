#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <unordered_set>
#include <vector>

#include "tjlab/dataset.hpp"
#include "tjlab/error.hpp"
#include "tjlab/rng.hpp"

namespace tjlab {

// Synthetic sign-like classification data. Class c draws glyph shape
// c % kGlyphShapes; when there are more classes than shapes the hue circle is
// partitioned into ceil(classes / shapes) bands and c / kGlyphShapes picks the
// band, so every class stays visually distinct.
inline constexpr int kGlyphShapes = 12;

struct SplitSizes {
  std::size_t train = 5000;
  std::size_t valid = 1000;
  std::size_t test = 1000;
  std::size_t seed = 10;
};

struct SynthConfig {
  ImageGeometry geometry{};
  int class_count = 10;
  SplitSizes sizes{};
  std::uint64_t seed = 1;
};

struct DatasetBundle {
  LabeledDataset train, valid, test, seed;
};

namespace synth_detail {

inline bool inside_glyph(int shape, double u, double v) {
  const double au = std::abs(u), av = std::abs(v);
  const double r2 = u * u + v * v;
  switch (shape) {
    case 0: return r2 <= 1.0;
    case 1: return au <= 0.8 && av <= 0.8;
    case 2: return v >= -0.9 && v <= 0.8 && au <= (v + 0.9) / 1.7;
    case 3: return v <= 0.9 && v >= -0.8 && au <= (0.9 - v) / 1.7;
    case 4: return au + av <= 1.0;
    case 5: return (au <= 0.3 && av <= 0.95) || (av <= 0.3 && au <= 0.95);
    case 6: return (std::abs(u - v) <= 0.42 || std::abs(u + v) <= 0.42) && au <= 0.85 && av <= 0.85;
    case 7: return r2 <= 1.0 && r2 >= 0.55 * 0.55;
    case 8: {
      const double m = std::max(au, av);
      return m <= 0.9 && m >= 0.55;
    }
    case 9: return au <= 0.9 && (std::abs(v + 0.5) <= 0.2 || std::abs(v - 0.5) <= 0.2);
    case 10: return av <= 0.9 && (std::abs(u + 0.5) <= 0.2 || std::abs(u - 0.5) <= 0.2);
    case 11: return r2 <= 1.0 && v <= 0.1;
  }
  return false;
}

inline std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double hh = h * 6.0;
  const int i = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

inline std::uint8_t to_byte(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(x * 255.0));
}

}  // namespace synth_detail

// Renders one glyph of class `label` into an H x W x C byte image.
inline std::vector<std::uint8_t> render_glyph(const ImageGeometry& g, int class_count, int label, Rng& rng) {
  using namespace synth_detail;
  const int shape = label % kGlyphShapes;
  const int bands = (class_count + kGlyphShapes - 1) / kGlyphShapes;
  const int band = label / kGlyphShapes;

  const double scale = std::min(g.height, g.width) / 32.0;
  const double radius = uniform(rng, 8.0, 11.0) * scale;
  const double cx = g.width / 2.0 + uniform(rng, -3.0, 3.0) * scale;
  const double cy = g.height / 2.0 + uniform(rng, -3.0, 3.0) * scale;
  const double hue = (band + uniform01(rng)) / bands;
  const auto fg = hsv_to_rgb(hue, uniform(rng, 0.65, 1.0), uniform(rng, 0.75, 1.0));
  const auto bg = hsv_to_rgb(uniform01(rng), uniform(rng, 0.0, 0.35), uniform(rng, 0.1, 0.4));
  const double grad_x = uniform(rng, -0.1, 0.1), grad_y = uniform(rng, -0.1, 0.1);
  const double noise = 0.03;

  std::vector<std::uint8_t> img(g.size());
  for (int y = 0; y < g.height; ++y) {
    for (int x = 0; x < g.width; ++x) {
      const double u = (x + 0.5 - cx) / radius, v = (y + 0.5 - cy) / radius;
      const bool in = inside_glyph(shape, u, v);
      const double shade = grad_x * (x / double(g.width) - 0.5) + grad_y * (y / double(g.height) - 0.5);
      for (int c = 0; c < g.channels; ++c) {
        const double base = in ? fg[c % 3] : bg[c % 3] + shade;
        img[(static_cast<std::size_t>(y) * g.width + x) * g.channels + c] = to_byte(base + noise * normal(rng));
      }
    }
  }
  return img;
}

inline DatasetBundle generate(const SynthConfig& cfg) {
  if (cfg.class_count < 2) throw Error("generate: class_count must be >= 2");
  if (cfg.geometry.height < 8 || cfg.geometry.width < 8 || cfg.geometry.channels < 1) {
    throw ShapeError("generate: geometry too small");
  }
  if (cfg.sizes.seed < static_cast<std::size_t>(cfg.class_count)) {
    throw Error("generate: seed split size " + std::to_string(cfg.sizes.seed) + " is smaller than class count " +
                std::to_string(cfg.class_count) + " (need one image per class)");
  }
  Rng rng(derive_seed(cfg.seed, "synth"));
  std::unordered_set<std::uint64_t> seen;

  auto make = [&](Split split, std::size_t n) {
    LabeledDataset ds;
    ds.geometry = cfg.geometry;
    ds.class_count = cfg.class_count;
    ds.split = split;
    ds.pixels.reserve(n * cfg.geometry.size());
    // Round-robin labels keep every split class-balanced; the seed split keeps
    // the class order so image i of a minimum-size seed split is class i.
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % static_cast<std::size_t>(cfg.class_count));
    if (split != Split::seed) shuffle(labels, rng);
    for (int y : labels) {
      for (;;) {
        auto img = render_glyph(cfg.geometry, cfg.class_count, y, rng);
        if (seen.insert(io::fnv1a(img)).second) {
          ds.push_back(img, y);
          break;
        }
      }
    }
    return ds;
  };

  DatasetBundle b;
  b.train = make(Split::train, cfg.sizes.train);
  b.valid = make(Split::valid, cfg.sizes.valid);
  b.test = make(Split::test, cfg.sizes.test);
  b.seed = make(Split::seed, cfg.sizes.seed);
  return b;
}

}  // namespace tjlab
