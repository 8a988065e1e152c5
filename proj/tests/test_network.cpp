#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "tjlab/pipeline.hpp"
#include "tjlab/tjlab.hpp"

using namespace tjlab;

namespace {

Network<double> mlp_222() {
  Network<double> net({2, 1, 1}, {LayerSpec::dense(2), LayerSpec::dense(2)});
  net.params()[0].weights = {1, 0, 0, 1};
  net.params()[0].bias = {0, 0};
  net.params()[1].weights = {1, 2, 3, 4};
  net.params()[1].bias = {0, 0};
  return net;
}

}  // namespace

TEST(Forward, HandSetMlp) {
  const auto net = mlp_222();
  const std::vector<double> x{1, -2};
  const auto s = net.forward(x);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0], 1.0);
  EXPECT_EQ(s[1], 3.0);
  EXPECT_EQ(predict<double>(net, x), 1);
}

TEST(Forward, OverrideSecondHiddenUnit) {
  const auto net = mlp_222();
  const std::vector<double> x{1, -2};
  const auto s = net.forward_with_override(x, {{0, 1}, 5.0});
  EXPECT_EQ(s[0], 11.0);
  EXPECT_EQ(s[1], 23.0);
}

TEST(Forward, OverrideWithNaturalValueIsNoOp) {
  const auto net = mlp_222();
  const std::vector<double> x{1, -2};
  EXPECT_EQ(net.forward_with_override(x, {{0, 0}, 1.0}), net.forward(x));
  EXPECT_EQ(net.forward_with_override(x, {{0, 1}, 0.0}), net.forward(x));
}

TEST(Forward, IdentityDense) {
  Network<double> net({2, 1, 1}, {LayerSpec::dense(2)});
  net.params()[0].weights = {1, 0, 0, 1};
  const auto s = net.forward(std::vector<double>{3, -1});
  EXPECT_EQ(s, (std::vector<double>{3, -1}));
}

TEST(Forward, ZeroWeightsGiveZeroScores) {
  Network<float> net({3, 32, 32}, desk_architecture(10));
  std::vector<float> x(net.input_shape().size(), 0.7f);
  for (float v : net.forward(x)) EXPECT_EQ(v, 0.0f);
}

TEST(Forward, ArgmaxTieBreak) {
  EXPECT_EQ(argmax<double>(std::vector<double>{0.1, 0.9, 0.3}), 1);
  EXPECT_EQ(argmax<double>(std::vector<double>{2, 2, 2}), 0);
  EXPECT_EQ(argmax<double>(std::vector<double>{0, 5, 5}), 1);
}

TEST(Forward, MatchesReferenceImplementation) {
  auto nets = oracle::small_models(11);
  Network<double> desk({3, 32, 32}, desk_architecture(10));
  desk.init_he(4);
  nets.push_back(desk);
  for (const auto& net : nets) {
    for (const auto& x : oracle::random_inputs(net, 3, 5)) {
      const auto a = net.forward(x);
      const auto b = oracle::forward<double>(net, x);
      ASSERT_EQ(a.size(), b.size());
      for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
    }
  }
}

TEST(Forward, RejectsBadShapesAndOverrides) {
  const auto net = mlp_222();
  EXPECT_THROW(net.forward(std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_THROW(net.forward_with_override(std::vector<double>{1, 2}, {{1, 0}, 1.0}), ShapeError);  // output layer
  EXPECT_THROW(net.forward_with_override(std::vector<double>{1, 2}, {{0, 2}, 1.0}), ShapeError);
  EXPECT_THROW(net.forward_with_override(std::vector<double>{1, 2}, {{0, 0}, -1.0}), ShapeError);
  EXPECT_THROW((Network<double>({2, 1, 1}, {LayerSpec::dense(2), LayerSpec::conv(2, 3)})), ShapeError);
  EXPECT_THROW((Network<double>({1, 5, 5}, {LayerSpec::conv(2, 4), LayerSpec::flatten(), LayerSpec::dense(2)})), ShapeError);
  EXPECT_THROW((Network<double>({1, 5, 5}, {LayerSpec::conv(2, 3), LayerSpec::dense(2)})), ShapeError);
}

TEST(Properties, ReluOutputsNonNegative) {
  for (const auto& net : oracle::small_models(21)) {
    for (const auto& x : oracle::random_inputs(net, 5, 8)) {
      const auto t = net.trace(x);
      for (std::size_t l = 0; l < net.layer_count(); ++l) {
        if (!net.has_relu(l)) continue;
        for (double v : t.outputs[l]) EXPECT_GE(v, 0.0);
      }
    }
  }
}

TEST(Properties, OverrideOnlyTouchesTargetAndDownstream) {
  Network<double> net({3, 9, 9}, {LayerSpec::conv(4, 3, 2), LayerSpec::conv(5, 3, 1), LayerSpec::global_avg_pool(),
                                  LayerSpec::dense(6), LayerSpec::dense(3)});
  net.init_he(3);
  const auto x = oracle::random_inputs(net, 1, 2)[0];
  const auto base = net.trace(x);
  for (const auto& n : net.hidden_units()) {
    const ActivationOverride<double> ov{n, 7.5};
    const auto t = net.trace(x, &ov);
    for (std::size_t l = 0; l < n.layer; ++l) EXPECT_EQ(t.outputs[l], base.outputs[l]);
    const auto plane = net.output_shape(n.layer).plane();
    for (std::size_t j = 0; j < t.outputs[n.layer].size(); ++j) {
      if (j / plane == static_cast<std::size_t>(n.unit)) {
        EXPECT_EQ(t.outputs[n.layer][j], 7.5);
      } else {
        EXPECT_EQ(t.outputs[n.layer][j], base.outputs[n.layer][j]);
      }
    }
  }
}

TEST(Gradients, MatchCentralDifferences) {
  for (const auto& net : oracle::small_models(31)) {
    const auto xs = oracle::random_inputs(net, 3, 9);
    const std::vector<int> labels{0, 1, 2};
    const auto r = oracle::check_gradients(net, xs, labels);
    EXPECT_LT(r.max_param_rel, 1e-5);
    EXPECT_LT(r.max_input_rel, 1e-5);
    EXPECT_GT(r.checked, 0u);
  }
}

TEST(Gradients, UniformOutputLossIsLogK) {
  auto net = oracle::small_models(1)[0];
  std::fill(net.params().back().weights.begin(), net.params().back().weights.end(), 0.0);
  std::fill(net.params().back().bias.begin(), net.params().back().bias.end(), 0.0);
  const auto xs = oracle::random_inputs(net, 2, 3);
  std::vector<std::span<const double>> in(xs.begin(), xs.end());
  const std::vector<int> labels{0, 2};
  const auto g = gradients<double>(net, in, labels);
  EXPECT_NEAR(g.loss, std::log(3.0), 1e-12);
  for (const auto& gi : g.inputs) {
    for (double v : gi) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(Gradients, DuplicatedSampleKeepsMean) {
  const auto net = oracle::small_models(2)[1];
  const auto xs = oracle::random_inputs(net, 1, 4);
  std::vector<std::span<const double>> one{xs[0]}, two{xs[0], xs[0]};
  const auto a = gradients<double>(net, one, std::vector<int>{1}, false);
  const auto b = gradients<double>(net, two, std::vector<int>{1, 1}, false);
  EXPECT_NEAR(a.loss, b.loss, 1e-14);
  for (std::size_t l = 0; l < a.params.size(); ++l) {
    for (std::size_t k = 0; k < a.params[l].weights.size(); ++k) {
      EXPECT_NEAR(a.params[l].weights[k], b.params[l].weights[k], 1e-14);
    }
  }
}

TEST(Gradients, EmptyBatchRejected) {
  const auto net = mlp_222();
  EXPECT_THROW(gradients<double>(net, std::vector<std::span<const double>>{}, std::vector<int>{}), Error);
}

TEST(Architecture, ParameterCounts) {
  EXPECT_EQ((Network<float>({3, 32, 32}, desk_architecture(43)).parameter_count()), 30203u);
  EXPECT_EQ((Network<float>({3, 32, 32}, desk_architecture(10)).parameter_count()), 29642u);
  const Network<float> net({3, 32, 32}, desk_architecture(10));
  EXPECT_EQ(net.output_shape(3), (Shape{16, 2, 2}));
}

namespace {

TensorSet<double> two_blobs(std::uint64_t seed) {
  Rng rng(seed);
  TensorSet<double> d{{2, 1, 1}, {}, {}};
  for (int i = 0; i < 200; ++i) {
    const int y = i % 2;
    const double cx = y ? 2.0 : -2.0;
    d.push_back(std::vector<double>{cx + normal(rng), cx + normal(rng)}, y);
  }
  return d;
}

}  // namespace

TEST(Training, SeparableBlobs) {
  Network<double> net({2, 1, 1}, {LayerSpec::dense(8), LayerSpec::dense(2)});
  net.init_he(5);
  const auto data = two_blobs(6);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.learning_rate = 0.05;
  const auto res = train(net, data, nullptr, cfg);
  EXPECT_GE(res.history.epochs.back().train_accuracy, 0.99);
  EXPECT_GE(accuracy(res.model, data), 0.99);
}

TEST(Training, ZeroEpochsAndZeroRateLeaveWeights) {
  Network<double> net({2, 1, 1}, {LayerSpec::dense(4), LayerSpec::dense(2)});
  net.init_he(1);
  const auto data = two_blobs(2);
  TrainConfig cfg;
  cfg.epochs = 0;
  EXPECT_EQ(train(net, data, nullptr, cfg).model.params()[0].weights, net.params()[0].weights);
  cfg.epochs = 3;
  cfg.learning_rate = 0;
  const auto m = train(net, data, nullptr, cfg).model;
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    EXPECT_EQ(m.params()[l].weights, net.params()[l].weights);
    EXPECT_EQ(m.params()[l].bias, net.params()[l].bias);
  }
}

TEST(Training, SameSeedSameCheckpoint) {
  Network<float> net({2, 1, 1}, {LayerSpec::dense(4), LayerSpec::dense(2)});
  net.init_he(9);
  const auto d = two_blobs(3);
  TensorSet<float> data{d.shape, {d.data.begin(), d.data.end()}, d.labels};
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.seed = 77;
  EXPECT_EQ(encode_checkpoint(train(net, data, nullptr, cfg).model), encode_checkpoint(train(net, data, nullptr, cfg).model));
}

TEST(Training, DivergenceNamesEpoch) {
  Network<double> net({2, 1, 1}, {LayerSpec::dense(2)});
  net.params()[0].weights = {std::numeric_limits<double>::infinity(), 0, 0, 1};
  const auto data = two_blobs(1);
  TrainConfig cfg;
  cfg.epochs = 2;
  try {
    train(net, data, nullptr, cfg);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.step(), 1);
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos);
  }
}

TEST(Training, RejectsEmptyAndMislabelled) {
  Network<double> net({2, 1, 1}, {LayerSpec::dense(2)});
  EXPECT_THROW(train(net, TensorSet<double>{{2, 1, 1}, {}, {}}, nullptr, TrainConfig{}), Error);
  TensorSet<double> bad{{2, 1, 1}, {0, 0}, {5}};
  EXPECT_THROW(train(net, bad, nullptr, TrainConfig{}), ShapeError);
}
