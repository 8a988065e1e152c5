#include <gtest/gtest.h>

#include <filesystem>

#include "tjlab/pipeline.hpp"
#include "tjlab/tjlab.hpp"

using namespace tjlab;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "tjlab-tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

Network<float> small_desk() {
  Network<float> net({3, 32, 32}, desk_architecture(10));
  net.init_he(12);
  return net;
}

LabeledDataset tiny_dataset(std::size_t n) {
  LabeledDataset ds{{4, 4, 3}, 5, Split::train, {}, {}, {}};
  Rng rng(3);
  std::vector<std::uint8_t> img(ds.geometry.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& b : img) b = static_cast<std::uint8_t>(uniform_index(rng, 256));
    ds.push_back(img, static_cast<int>(i % 5));
  }
  return ds;
}

}  // namespace

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  const auto net = small_desk();
  const auto path = scratch("a.tjf").string();
  save_checkpoint(net, path);
  const auto loaded = load_checkpoint<float>(path);
  EXPECT_EQ(encode_checkpoint(loaded), io::read_file(path));
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    EXPECT_EQ(loaded.params()[l].weights, net.params()[l].weights);
    EXPECT_EQ(loaded.params()[l].bias, net.params()[l].bias);
  }
  EXPECT_EQ(loaded.layers(), net.layers());
}

TEST(Checkpoint, TruncationNamesBothLengths) {
  auto bytes = encode_checkpoint(small_desk());
  bytes.resize(bytes.size() - 8);
  try {
    decode_checkpoint<float>(bytes);
    FAIL() << "truncated checkpoint accepted";
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(std::to_string(29642 * 4)), std::string::npos) << msg;
    EXPECT_NE(msg.find(std::to_string(29642 * 4 - 8)), std::string::npos) << msg;
  }
}

TEST(Checkpoint, RejectsMagicAndVersion) {
  auto bytes = encode_checkpoint(small_desk());
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint<float>(bad_magic), FormatError);
  auto bad_version = bytes;
  bad_version[4] = 9;
  EXPECT_THROW(decode_checkpoint<float>(bad_version), FormatError);
}

TEST(Checkpoint, ReportsPaperGeometryCount) {
  Network<float> net({3, 32, 32}, desk_architecture(43));
  EXPECT_EQ(decode_checkpoint<float>(encode_checkpoint(net)).parameter_count(), 30203u);
}

TEST(Checkpoint, LittleEndianHeader) {
  const auto bytes = encode_checkpoint(small_desk());
  ASSERT_GE(bytes.size(), 18u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "TJF1");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5], 0);
  EXPECT_EQ(bytes[6], 3);  // channels, u32 little-endian
  EXPECT_EQ(bytes[10], 32);
}

TEST(Dataset, SaveLoadSaveKeepsProvenance) {
  auto ds = tiny_dataset(1000);
  TrojanSpec t;
  t.patch_size = 2;
  t.row = 0;
  t.col = 0;
  t.jitter = 0;
  t.target_class = 1;
  ds = poison(ds, t, 4);
  EXPECT_EQ(ds.poisoned_count(), 200u);
  const auto path = scratch("d.tjd").string();
  save_dataset(ds, path);
  const auto back = load_dataset(path);
  EXPECT_EQ(back.poisoned_count(), 200u);
  EXPECT_EQ(back.poisoned, ds.poisoned);
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_EQ(encode_dataset(back), io::read_file(path));
}

TEST(Dataset, RejectsCorruptFiles) {
  auto bytes = encode_dataset(tiny_dataset(10));
  auto bad = bytes;
  bad[3] = '9';
  EXPECT_THROW(decode_dataset(bad), FormatError);
  bytes.pop_back();
  EXPECT_THROW(decode_dataset(bytes), FormatError);
}

TEST(Masks, RoundTrip) {
  const Shape s{3, 4, 4};
  auto m = TrojanMask::identity(s);
  m.pattern[5] = 0.25f;
  for (std::size_t c = 0; c < 3; ++c) m.alpha[c * 16 + 2] = 0.75f;
  m.source = {{2, 7}, 4, 1.5, 9.25};
  m.reasr = 0.3;
  m.asr_test = 0.125;
  const std::vector<TrojanMask> masks{m, TrojanMask::identity(s)};
  const auto bytes = encode_masks(masks);
  const auto back = decode_masks(bytes);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].pattern, m.pattern);
  EXPECT_EQ(back[0].alpha, m.alpha);
  EXPECT_EQ(back[0].source.neuron, m.source.neuron);
  EXPECT_EQ(back[0].source.elevated_label, 4);
  EXPECT_EQ(back[0].reasr, 0.3);
  EXPECT_EQ(encode_masks(back), bytes);
  auto bad = bytes;
  bad[0] = 'Q';
  EXPECT_THROW(decode_masks(bad), FormatError);
}
