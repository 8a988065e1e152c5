#include <gtest/gtest.h>

#include "oracles.hpp"
#include "tjlab/tjlab.hpp"

using namespace tjlab;

namespace {

// Dense net whose output ignores the input and always favors `label`.
Network<double> constant_model(int inputs, int classes, int label) {
  Network<double> net({inputs, 1, 1}, {LayerSpec::dense(classes)});
  net.params()[0].bias[static_cast<std::size_t>(label)] = 1.0;
  return net;
}

TensorSet<double> balanced(int inputs, int classes, int per_class) {
  TensorSet<double> d{{inputs, 1, 1}, {}, {}};
  Rng rng(1);
  for (int k = 0; k < per_class; ++k) {
    for (int c = 0; c < classes; ++c) {
      std::vector<double> x(static_cast<std::size_t>(inputs));
      for (auto& v : x) v = uniform01(rng);
      d.push_back(x, c);
    }
  }
  return d;
}

}  // namespace

TEST(Confusion, FalsePositivesAreOffDiagonalColumn) {
  const std::vector<int> truth{0, 1, 2}, pred{1, 1, 1};
  const auto cm = confusion(truth, pred, 3);
  EXPECT_EQ(cm.false_positives(1), 2u);
  EXPECT_EQ(cm.false_positives(0), 0u);
  EXPECT_EQ(cm.false_positives(), (std::vector<std::size_t>{0, 2, 0}));
  EXPECT_DOUBLE_EQ(cm.accuracy(), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(cm.targeted_asr(1), 1.0);
}

TEST(Confusion, MarginalsAddUp) {
  Rng rng(4);
  std::vector<int> truth(500), pred(500);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    truth[i] = static_cast<int>(uniform_index(rng, 6));
    pred[i] = static_cast<int>(uniform_index(rng, 6));
  }
  const auto cm = confusion(truth, pred, 6);
  std::size_t rows = 0, cols = 0;
  for (int c = 0; c < 6; ++c) {
    rows += cm.row_sum(c);
    cols += cm.col_sum(c);
    EXPECT_EQ(cm.false_positives(c) + cm.at(c, c), cm.col_sum(c));
  }
  EXPECT_EQ(rows, 500u);
  EXPECT_EQ(cols, 500u);
  EXPECT_THROW(confusion(std::vector<int>{0}, std::vector<int>{6}, 6), ShapeError);
}

TEST(AttackSuccess, TwoReadingsOnHandData) {
  const std::vector<int> truth{0, 1, 2, 3, 3}, pred{3, 1, 3, 3, 0};
  const auto r = attack_success(truth, pred, 3);
  EXPECT_DOUBLE_EQ(r.targeted, 2.0 / 3.0);    // non-target samples 0,1,2; two hit 3
  EXPECT_DOUBLE_EQ(r.untargeted, 3.0 / 5.0);  // samples 0, 2, 4 changed
  const auto u = attack_success(truth, pred, std::nullopt);
  EXPECT_DOUBLE_EQ(u.untargeted, 3.0 / 5.0);
  EXPECT_EQ(u.targeted, 0.0);
}

TEST(AttackSuccess, ConfusionAndDirectCountAgree) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> truth(200), pred(200);
    for (std::size_t i = 0; i < truth.size(); ++i) {
      truth[i] = static_cast<int>(uniform_index(rng, 5));
      pred[i] = uniform01(rng) < 0.4 ? 2 : static_cast<int>(uniform_index(rng, 5));
    }
    EXPECT_NEAR(attack_success(truth, pred, 2).targeted, confusion(truth, pred, 5).targeted_asr(2), 1e-15);
  }
}

TEST(Metrics, ConstantModelAccuracyIsClassShare) {
  const auto net = constant_model(4, 10, 3);
  const auto data = balanced(4, 10, 7);
  EXPECT_DOUBLE_EQ(accuracy(net, data), 0.1);
  const auto ev = evaluate(net, data, "const");
  EXPECT_DOUBLE_EQ(ev.accuracy, 0.1);
  EXPECT_DOUBLE_EQ(ev.recall[3], 1.0);
  EXPECT_DOUBLE_EQ(ev.precision[3], 0.1);
  EXPECT_DOUBLE_EQ(ev.recall[0], 0.0);
  EXPECT_EQ(accuracy(net, TensorSet<double>{{4, 1, 1}, {}, {}}), 0.0);
}

TEST(Metrics, ZeroAlphaMaskChangesNothing) {
  const auto nets = oracle::small_models(5);
  const auto& net = nets[0];
  TensorSet<double> data{net.input_shape(), {}, {}};
  for (const auto& x : oracle::random_inputs(net, 30, 3)) data.push_back(x, predict<double>(net, x));
  auto m = TrojanMask::identity(net.input_shape());
  std::fill(m.pattern.begin(), m.pattern.end(), 1.0f);
  EXPECT_EQ(predict_all(net, data, m), data.labels);
  EXPECT_EQ(attack_success_rate(net, data, m, 1).targeted, 0.0);
  EXPECT_EQ(attack_success_rate(net, data, m, 1).untargeted, 0.0);
}

TEST(Metrics, MaskedPredictionsMatchExplicitBlend) {
  const auto nets = oracle::small_models(8);
  const auto& net = nets[1];
  TensorSet<double> data{net.input_shape(), {}, {}};
  for (const auto& x : oracle::random_inputs(net, 12, 6)) data.push_back(x, 0);
  auto m = TrojanMask::identity(net.input_shape());
  Rng rng(1);
  for (auto& v : m.pattern) v = static_cast<float>(uniform01(rng));
  for (auto& v : m.alpha) v = static_cast<float>(uniform01(rng));
  const auto got = predict_all(net, data, m);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto x = data.sample(i);
    std::vector<double> xm(x.size());
    for (std::size_t d = 0; d < x.size(); ++d) xm[d] = (1 - double(m.alpha[d])) * x[d] + double(m.alpha[d]) * m.pattern[d];
    EXPECT_EQ(got[i], oracle::argmax(oracle::forward<double>(net, xm)));
  }
}
