#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "fedadapt/errors.hpp"
#include "fedadapt/model.hpp"
#include "oracles.hpp"

using namespace fedadapt;

namespace {

Tensor make(std::size_t r, std::size_t c, std::vector<double> v) {
  Tensor t(r, c);
  std::copy(v.begin(), v.end(), t.data().begin());
  return t;
}

}  // namespace

TEST(Layer, PlainLayerMatchesHandComputation) {
  // W = [[1, -2], [0.5, 1]], b = [0.1, -3], x = [2, 1]
  const Tensor w = make(2, 2, {1, -2, 0.5, 1});
  const Tensor b = make(2, 1, {0.1, -3});
  LayerView v{&w, &b, {}, nullptr, nullptr, GateMode::kNone, Activation::kRelu};
  const std::vector<double> x{2, 1};
  const auto y = layer_forward(x, v);
  EXPECT_DOUBLE_EQ(y[0], 0.1);  // 2 - 2 + 0.1
  EXPECT_DOUBLE_EQ(y[1], 0.0);  // relu(1 + 1 - 3)
}

TEST(Layer, UniformGateAveragesBranches) {
  const Tensor w = make(1, 2, {1, 1});
  const Tensor b = make(1, 1, {0});
  const Tensor up = make(1, 1, {2});
  const Tensor down = make(1, 2, {1, -1});
  LayerView v{&w, &b, {{&up, &down}}, nullptr, nullptr, GateMode::kUniform, Activation::kSigmoid};
  LayerTrace t;
  const std::vector<double> x{3, 1};
  const auto y = layer_forward(x, v, &t);
  // common = 4, adapter = 2 * (3 - 1) = 4, fused = 0.5 * 4 + 0.5 * 4
  EXPECT_DOUBLE_EQ(t.fused[0], 4.0);
  EXPECT_DOUBLE_EQ(y[0], 1.0 / (1.0 + std::exp(-4.0)));
}

TEST(Layer, AdaptiveGateMatchesSoftmaxByHand) {
  const Tensor w = make(1, 2, {1, 0});
  const Tensor b = make(1, 1, {0});
  const Tensor up = make(1, 1, {1});
  const Tensor down = make(1, 2, {0, 1});
  const Tensor w1 = make(1, 2, {1, 1});       // h = 1
  const Tensor w2 = make(2, 1, {1, -1});      // z = [s, -s], s = relu(x0 + x1)
  LayerView v{&w, &b, {{&up, &down}}, &w1, &w2, GateMode::kAdaptive, Activation::kRelu};
  LayerTrace t;
  const std::vector<double> x{0.5, 0.25};
  layer_forward(x, v, &t);
  const double s = 0.75;
  const double w0 = std::exp(s) / (std::exp(s) + std::exp(-s));
  EXPECT_NEAR(t.weights[0], w0, 1e-15);
  EXPECT_NEAR(t.fused[0], w0 * 0.5 + (1 - w0) * 0.25, 1e-15);
}

TEST(Layer, ShapeMismatchThrows) {
  const Tensor w = make(1, 3, {1, 1, 1});
  const Tensor b = make(1, 1, {0});
  LayerView v{&w, &b, {}, nullptr, nullptr, GateMode::kNone, Activation::kRelu};
  const std::vector<double> x{1, 2};
  EXPECT_THROW(layer_forward(x, v), ShapeError);
}

TEST(Loss, BceByHand) {
  const std::vector<double> p{0.8, 0.3};
  const std::vector<double> y{1, 0};
  EXPECT_NEAR(bce_loss(p, y), -(std::log(0.8) + std::log(0.7)) / 2, 1e-15);
  const std::vector<double> sat{1.0};
  const std::vector<double> zero{0.0};
  EXPECT_NEAR(bce_loss(sat, zero), -std::log(1.0 - (1.0 - kBceEpsilon)), 1e-12);
  EXPECT_TRUE(std::isfinite(bce_loss(sat, zero)));
}

TEST(Arch, RankCappedByLayerShape) {
  auto a = oracle::small_arch(1, true, GateMode::kAdaptive);
  a.adapter_rank = 4;
  EXPECT_EQ(a.layer_rank(0), 4);
  EXPECT_EQ(a.layer_rank(2), 1);  // output layer has one unit
}

TEST(Arch, InvalidConfigsRejected) {
  auto a = oracle::small_arch(1, true, GateMode::kNone);
  a.gate = GateMode::kNone;
  EXPECT_THROW(a.validate(), ValidationError);
  auto b = oracle::small_arch(0, false, GateMode::kAdaptive);
  b.gate = GateMode::kAdaptive;
  EXPECT_THROW(b.validate(), ValidationError);
  auto c = oracle::small_arch(0, false, GateMode::kNone);
  c.group_attributes = {"nope"};
  c.gate = GateMode::kAdaptive;
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(Init, ZeroAndRandomParts) {
  const Model m(oracle::small_arch(2, true, GateMode::kAdaptive));
  const ParamSet p = m.init_params(3);
  for (const auto& [name, e] : p) {
    const auto v = e.value.data();
    const bool all_zero = std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
    const bool zero_expected = name.ends_with(".w2") || (name.starts_with("lr.") && name.ends_with(".b")) ||
                               (name.starts_with("mlp.") && name.ends_with(".b"));
    EXPECT_EQ(all_zero, zero_expected) << name;
    if (!zero_expected && !name.starts_with("lr.")) {
      const double a = std::sqrt(6.0 / static_cast<double>(e.value.rows() + e.value.cols()));
      for (double x : v) EXPECT_LE(std::abs(x), a) << name;
    }
  }
  EXPECT_TRUE(bit_identical(p, m.init_params(3)));
  EXPECT_FALSE(bit_identical(p, m.init_params(4)));
}

TEST(Init, AdapterUpFactorScale) {
  auto a = oracle::small_arch(0, true, GateMode::kAdaptive);
  a.mlp_hidden = {256, 8};
  a.adapter_rank = 8;
  const Model m(a);
  const ParamSet p = m.init_params(11);
  const auto v = p.get(tensor_names::user_adapter_up(0)).data();
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= v.size();
  EXPECT_NEAR(mean, 0.0, 0.005);
  EXPECT_NEAR(std::sqrt(var), 0.02, 0.002);
}

TEST(CountParams, ClosedForm) {
  // u0(3), u1(4); item_id(5), i0(3); d = 8; MLP 32-32-8-1; r = 2 (1 at the output)
  const Model m(oracle::small_arch(2, true, GateMode::kAdaptive));
  const ParamSet p = m.init_params(0);
  const std::size_t tables = (3 + 4 + 5 + 3) * 8;
  const std::size_t mlp = (32 * 32 + 32) + (8 * 32 + 8) + (1 * 8 + 1);
  const std::size_t adapter = (32 * 2 + 2 * 32) + (8 * 2 + 2 * 32) + (1 * 1 + 1 * 8);
  const std::size_t groups = 3 + 4;
  const std::size_t branches = 1 + 1 + 2;
  const std::size_t gates = (8 * 32 + branches * 8) + (8 * 32 + branches * 8) + (8 * 8 + branches * 8);
  EXPECT_EQ(count_params(p, TagFilter::all()), tables + mlp + adapter * (1 + groups) + gates);
}

// Gradient of the mean BCE against central differences, every trainable scalar.
class Gradient : public ::testing::TestWithParam<std::tuple<int, bool, GateMode, bool>> {};

TEST_P(Gradient, MatchesFiniteDifferences) {
  const auto [groups, user, gate, soft] = GetParam();
  const Model m(oracle::small_arch(groups, user, gate));
  for (std::uint64_t seed : {1, 2}) {
    ParamSet p = m.init_params(seed);
    Rng rng(seed + 100);
    oracle::randomize(p, rng, 0.3);
    const auto batch = oracle::random_examples(m.arch(), 6, rng, soft);
    const auto g = m.backward(p, batch);
    EXPECT_NEAR(g.loss, m.loss(p, batch), 1e-12);
    std::string worst;
    EXPECT_LT(oracle::fd_max_relative_error(m, p, batch, g.grads, 1e-5, &worst), 1e-4) << worst;
  }
}

INSTANTIATE_TEST_SUITE_P(
    Architectures, Gradient,
    ::testing::Values(std::make_tuple(0, false, GateMode::kNone, false),
                      std::make_tuple(2, true, GateMode::kAdaptive, false),
                      std::make_tuple(1, false, GateMode::kAdaptive, false),
                      std::make_tuple(0, true, GateMode::kAdaptive, true),
                      std::make_tuple(2, true, GateMode::kUniform, false),
                      std::make_tuple(2, true, GateMode::kAdaptive, true)));

TEST(Gradient, FrozenTensorsGetNoGradient) {
  const Model m(oracle::small_arch(1, true, GateMode::kAdaptive));
  ParamSet p = m.init_params(0);
  p.set_tag("ie.i0", Tag::kFrozen);
  p.set_tag("mlp.0.w", Tag::kFrozen);
  Rng rng(5);
  const auto g = m.backward(p, oracle::random_examples(m.arch(), 4, rng));
  EXPECT_FALSE(g.grads.contains("ie.i0"));
  EXPECT_FALSE(g.grads.contains("mlp.0.w"));
  EXPECT_TRUE(g.grads.contains("ie.item_id"));
}

TEST(Gradient, ForcedCommonGateMatchesFiniteDifferencesOfBase) {
  // Under a forced one-hot common gate only the base path carries gradient.
  const Model m(oracle::small_arch(2, true, GateMode::kAdaptive));
  ParamSet p = m.init_params(4);
  Rng rng(9);
  oracle::randomize(p, rng, 0.3);
  const auto batch = oracle::random_examples(m.arch(), 5, rng);
  const auto g = m.backward(p, batch, ForwardOptions{true});
  for (const auto& [name, t] : g.grads) {
    if (name.starts_with("lr.") || name.starts_with("gate.")) {
      for (double x : t.data()) EXPECT_EQ(x, 0.0) << name;
    }
  }
  const Model base(m.arch().base_only());
  const auto gb = base.backward(p, batch);
  for (const auto& [name, t] : gb.grads) {
    const auto& other = g.grads.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) EXPECT_NEAR(other[i], t[i], 1e-14) << name;
  }
}

TEST(Gate, WeightsSumToOne) {
  const Model m(oracle::small_arch(2, true, GateMode::kAdaptive));
  ParamSet p = m.init_params(8);
  Rng rng(8);
  oracle::randomize(p, rng, 1.0);
  const auto batch = oracle::random_examples(m.arch(), 50, rng);
  for (const auto& e : batch) {
    std::vector<double> x = m.embed_user(p, e.user_attrs);
    const auto v = m.embed_item(p, e.item_attrs);
    x.insert(x.end(), v.begin(), v.end());
    for (std::size_t l = 0; l < m.arch().layer_count(); ++l) {
      LayerTrace t;
      x = layer_forward(x, m.layer_view(p, l, e.groups), &t);
      const double s = std::accumulate(t.weights.begin(), t.weights.end(), 0.0);
      EXPECT_NEAR(s, 1.0, 1e-12);
      for (double w : t.weights) EXPECT_GE(w, 0.0);
    }
  }
}

TEST(Predict, ForcedCommonGateWithZeroAdaptersIsBaseModel) {
  const Model m(oracle::small_arch(2, true, GateMode::kAdaptive));
  const Model base(m.arch().base_only());
  ParamSet p = m.init_params(2);
  Rng rng(2);
  for (const auto& e : oracle::random_examples(m.arch(), 20, rng)) {
    EXPECT_EQ(m.predict(p, e, ForwardOptions{true}), base.predict(p, e));
  }
}

TEST(Predict, BaseModelMatchesDirectEquations) {
  const Model base(oracle::small_arch(0, false, GateMode::kNone));
  const ParamSet p = base.init_params(6);
  Rng rng(6);
  for (const auto& e : oracle::random_examples(base.arch(), 20, rng)) {
    EXPECT_NEAR(base.predict(p, e), oracle::base_forward(base.arch(), p, e), 1e-14);
  }
}

TEST(Predict, FreshInitScalesEveryPreActivationByOneOverBranches) {
  const Model m(oracle::small_arch(2, true, GateMode::kAdaptive));
  const ParamSet p = m.init_params(12);
  Rng rng(12);
  const double scale = 1.0 / m.arch().branch_count();
  for (const auto& e : oracle::random_examples(m.arch(), 20, rng)) {
    EXPECT_NEAR(m.predict(p, e), oracle::base_forward(m.arch(), p, e, {scale}), 1e-14);
  }
}

TEST(Predict, WrongGroupCountThrows) {
  const Model m(oracle::small_arch(2, true, GateMode::kAdaptive));
  const ParamSet p = m.init_params(0);
  Example e{{0, 0}, {0, 0}, {0}, 1.0};
  EXPECT_THROW(m.predict(p, e), ShapeError);
}

TEST(Training, SgdLowersLossOnFixedBatch) {
  const Model m(oracle::small_arch(2, true, GateMode::kAdaptive));
  ParamSet p = m.init_params(1);
  Rng rng(1);
  oracle::randomize(p, rng, 0.2);
  const auto batch = oracle::random_examples(m.arch(), 16, rng);
  const double before = m.loss(p, batch);
  for (int i = 0; i < 50; ++i) sgd_step(p, m.backward(p, batch).grads, 0.1);
  EXPECT_LT(m.loss(p, batch), before);
}

TEST(Training, SgdStepIsElementwise) {
  ParamSet p;
  p.add("t", make(1, 3, {1, 2, 3}), Tag::kShared);
  GradientSet g;
  g.emplace("t", make(1, 3, {10, 0, -10}));
  sgd_step(p, g, 0.1);
  EXPECT_DOUBLE_EQ(p.get("t")[0], 0.0);
  EXPECT_DOUBLE_EQ(p.get("t")[1], 2.0);
  EXPECT_DOUBLE_EQ(p.get("t")[2], 4.0);
  EXPECT_THROW(sgd_step(p, g, 0.0), ValidationError);
  GradientSet bad;
  bad.emplace("t", make(3, 1, {0, 0, 0}));
  EXPECT_THROW(sgd_step(p, bad, 0.1), ShapeError);
}

TEST(Training, BackwardIsDeterministic) {
  const Model m(oracle::small_arch(2, true, GateMode::kAdaptive));
  ParamSet p = m.init_params(1);
  Rng rng(3);
  oracle::randomize(p, rng, 0.2);
  const auto batch = oracle::random_examples(m.arch(), 10, rng);
  const auto a = m.backward(p, batch);
  const auto b = m.backward(p, batch);
  for (const auto& [name, t] : a.grads) EXPECT_TRUE(bit_identical(t, b.grads.at(name))) << name;
}
