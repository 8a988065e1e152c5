#include <gtest/gtest.h>

#include <set>
#include <unordered_set>

#include "tjlab/tjlab.hpp"

using namespace tjlab;

namespace {

SynthConfig small_synth(std::uint64_t seed) {
  SynthConfig c;
  c.sizes = {300, 60, 60, 10};
  c.seed = seed;
  return c;
}

}  // namespace

TEST(Synth, SeedSplitHasOneImagePerClass) {
  const auto b = generate(small_synth(1));
  ASSERT_EQ(b.seed.size(), 10u);
  std::set<int> labels(b.seed.labels.begin(), b.seed.labels.end());
  EXPECT_EQ(labels.size(), 10u);
}

TEST(Synth, SameSeedSameBytes) {
  const auto a = generate(small_synth(5));
  const auto b = generate(small_synth(5));
  EXPECT_EQ(encode_dataset(a.train), encode_dataset(b.train));
  EXPECT_EQ(encode_dataset(a.test), encode_dataset(b.test));
  EXPECT_EQ(encode_dataset(a.seed), encode_dataset(b.seed));
  EXPECT_NE(encode_dataset(generate(small_synth(6)).train), encode_dataset(a.train));
}

TEST(Synth, SplitsAreDisjoint) {
  const auto b = generate(small_synth(2));
  std::unordered_set<std::uint64_t> seen;
  std::size_t total = 0;
  for (const auto* ds : {&b.train, &b.valid, &b.test, &b.seed}) {
    for (auto h : image_hashes(*ds)) seen.insert(h);
    total += ds->size();
  }
  EXPECT_EQ(seen.size(), total);
}

TEST(Synth, RejectsTooFewSeedImages) {
  auto c = small_synth(1);
  c.sizes.seed = 9;
  EXPECT_THROW(generate(c), Error);
  c = small_synth(1);
  c.class_count = 1;
  EXPECT_THROW(generate(c), Error);
}

TEST(Synth, LargeGeometryAccepted) {
  SynthConfig c;
  c.class_count = 43;
  c.sizes = {35228, 4410, 12630, 43};
  const auto b = generate(c);
  EXPECT_EQ(b.train.size(), 35228u);
  EXPECT_EQ(b.valid.size(), 4410u);
  EXPECT_EQ(b.test.size(), 12630u);
  std::set<int> labels(b.seed.labels.begin(), b.seed.labels.end());
  EXPECT_EQ(labels.size(), 43u);
}

TEST(Poison, ExactCountAndRelabel) {
  auto b = generate(SynthConfig{.sizes = {1000, 10, 10, 10}, .seed = 3});
  TrojanSpec t;
  t.target_class = 4;
  const auto p = poison(b.train, t, 9);
  EXPECT_EQ(p.poisoned_count(), 200u);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p.poisoned[i]) {
      EXPECT_EQ(p.labels[i], 4);
    } else {
      EXPECT_EQ(p.labels[i], b.train.labels[i]);
      EXPECT_TRUE(std::equal(p.image(i).begin(), p.image(i).end(), b.train.image(i).begin()));
    }
  }
  EXPECT_EQ(poison(b.train, t, 9).poisoned, p.poisoned);
}

TEST(Poison, FullFractionRelabelsEverything) {
  auto b = generate(small_synth(4));
  TrojanSpec t;
  t.poison_fraction = 1.0;
  t.target_class = 7;
  const auto p = poison(b.train, t, 1);
  for (int y : p.labels) EXPECT_EQ(y, 7);
}

TEST(Poison, Errors) {
  auto b = generate(small_synth(4));
  TrojanSpec t;
  t.poison_fraction = 0.001;
  EXPECT_THROW(poison(b.valid, t, 1), Error);  // 0.06 images
  t.poison_fraction = 0.2;
  EXPECT_THROW(poison(b.test, t, 1), Error);
  t.patch_size = 40;
  EXPECT_THROW(poison(b.train, t, 1), ShapeError);
  t = TrojanSpec{};
  t.target_class = 10;
  EXPECT_THROW(poison(b.train, t, 1), Error);
}

TEST(Poison, TriggerPixelsCarryColor) {
  LabeledDataset ds{{8, 8, 3}, 2, Split::train, std::vector<std::uint8_t>(8 * 8 * 3, 0), {0}, {0}};
  TrojanSpec t;
  t.patch_size = 2;
  t.row = -3;
  t.col = -3;
  t.jitter = 0;
  t.poison_fraction = 1.0;
  t.target_class = 1;
  const auto p = poison(ds, t, 1);
  std::size_t yellow = 0;
  for (std::size_t px = 0; px < 64; ++px) {
    const auto* c = p.pixels.data() + px * 3;
    yellow += c[0] == 255 && c[1] == 255 && c[2] == 0;
  }
  EXPECT_EQ(yellow, 4u);
  EXPECT_EQ(p.pixels[(5 * 8 + 5) * 3], 255);
}

TEST(ApplyMask, ClosedForms) {
  const Shape s{3, 2, 2};
  auto m = TrojanMask::identity(s);
  std::vector<float> x(s.size(), 0.2f);
  EXPECT_EQ(apply_mask<float>(x, m), x);
  std::fill(m.pattern.begin(), m.pattern.end(), 0.8f);
  std::fill(m.alpha.begin(), m.alpha.end(), 1.0f);
  EXPECT_EQ(apply_mask<float>(x, m), m.pattern);
  std::fill(m.alpha.begin(), m.alpha.end(), 0.5f);
  for (float v : apply_mask<float>(x, m)) EXPECT_FLOAT_EQ(v, 0.5f);
  EXPECT_THROW(apply_mask<float>(std::vector<float>(5, 0.f), m), ShapeError);
}

TEST(ApplyMask, IdempotentAtExtremesAndMonotoneInAlpha) {
  const Shape s{3, 4, 4};
  Rng rng(7);
  auto m = TrojanMask::identity(s);
  std::vector<float> x(s.size());
  for (auto& v : x) v = static_cast<float>(uniform01(rng));
  for (auto& v : m.pattern) v = static_cast<float>(uniform01(rng));
  for (auto& a : m.alpha) a = uniform01(rng) < 0.5 ? 0.f : 1.f;
  const auto once = apply_mask<float>(x, m);
  EXPECT_EQ(apply_mask<float>(once, m), once);

  std::vector<float> prev;
  for (float a = 0.f; a <= 1.0f; a += 0.125f) {
    std::fill(m.alpha.begin(), m.alpha.end(), a);
    const auto y = apply_mask<float>(x, m);
    if (!prev.empty()) {
      for (std::size_t i = 0; i < y.size(); ++i) {
        // moving alpha up moves each value toward the pattern
        EXPECT_LE(std::abs(y[i] - m.pattern[i]), std::abs(prev[i] - m.pattern[i]) + 1e-6f);
      }
    }
    prev = y;
  }
}

TEST(Tensors, ByteHwcToChwUnitRange) {
  const ImageGeometry g{1, 2, 3};
  const std::vector<std::uint8_t> px{0, 51, 255, 102, 204, 153};  // (0,0) rgb, (0,1) rgb
  const auto t = to_tensor<double>(px, g);
  EXPECT_EQ(t, (std::vector<double>{0.0, 102 / 255.0, 51 / 255.0, 204 / 255.0, 1.0, 153 / 255.0}));
}
