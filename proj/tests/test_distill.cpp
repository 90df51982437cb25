#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>

#include "fedadapt/distill.hpp"
#include "fedadapt/errors.hpp"
#include "fedadapt/rng.hpp"
#include "oracles.hpp"

using namespace fedadapt;

namespace {

struct Teacher {
  ArchConfig arch;
  ParamSet params;
  std::vector<Example> data, holdout;
};

Teacher make_teacher(std::uint64_t seed) {
  Teacher t;
  t.arch = oracle::small_arch(0, false, GateMode::kNone);
  t.params = Model(t.arch).init_params(seed);
  Rng rng(seed);
  oracle::randomize(t.params, rng, 0.8);
  t.data = oracle::random_examples(t.arch, 200, rng);
  t.holdout = oracle::random_examples(t.arch, 50, rng);
  return t;
}

}  // namespace

TEST(Distill, TargetsMixTeacherAndLabels) {
  const Teacher t = make_teacher(1);
  const Model m(t.arch);
  const auto zero = distill_targets(m, t.params, t.data, 0.0);
  for (std::size_t i = 0; i < zero.size(); ++i) EXPECT_EQ(zero[i].label, t.data[i].label);
  const auto mixed = distill_targets(m, t.params, t.data, 0.25);
  for (std::size_t i = 0; i < mixed.size(); ++i) {
    const double soft = oracle::base_forward(t.arch, t.params, t.data[i], {1.0});
    EXPECT_NEAR(mixed[i].label, 0.25 * soft + 0.75 * t.data[i].label, 1e-14);
  }
  EXPECT_THROW(distill_targets(m, t.params, t.data, 1.5), ValidationError);
}

TEST(Distill, AlphaOneNeverReadsLabels) {
  const Teacher t = make_teacher(2);
  const Model m(t.arch);
  DistillConfig cfg;
  cfg.alpha = 1.0;
  cfg.epochs = 3;
  cfg.seed = 2;
  auto poisoned = t.data;
  for (auto& e : poisoned) e.label = std::numeric_limits<double>::quiet_NaN();
  const auto a = distill(m, t.params, t.data, cfg);
  const auto b = distill(m, t.params, poisoned, cfg);
  EXPECT_TRUE(bit_identical(a.params, b.params));
}

TEST(Distill, AlphaZeroIsPlainTrainingOnLabels) {
  const Teacher t = make_teacher(3);
  const Model teacher(t.arch);
  DistillConfig cfg;
  cfg.alpha = 0.0;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.seed = 3;
  const auto r = distill(teacher, t.params, t.data, cfg);

  // Replay: shuffled minibatch SGD on the raw labels.
  const Model student(student_arch(t.arch, cfg));
  ParamSet p = student.init_params(3);
  Rng rng = Rng::stream(3, streams::kDistill, 0);
  std::vector<std::size_t> order(t.data.size());
  for (int e = 0; e < cfg.epochs; ++e) {
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t s = 0; s < order.size(); s += 16) {
      std::vector<Example> batch;
      for (std::size_t i = s; i < std::min(order.size(), s + 16); ++i) batch.push_back(t.data[order[i]]);
      sgd_step(p, student.backward(p, batch).grads, cfg.lr);
    }
  }
  EXPECT_TRUE(bit_identical(r.params, p));
}

TEST(Distill, StudentsAreSmallerBaseModels) {
  const Teacher t = make_teacher(4);
  const Model m(t.arch);
  const auto teacher_count = count_params(t.params, TagFilter::all());
  for (const auto& [d, hidden] : std::vector<std::pair<int, std::vector<int>>>{
           {8, {8}}, {4, {32, 8}}, {4, {8}}}) {
    DistillConfig cfg;
    cfg.embed_dim = d;
    cfg.mlp_hidden = hidden;
    cfg.epochs = 0;
    const auto r = distill(m, t.params, t.data, cfg);
    EXPECT_LT(count_params(r.params, TagFilter::all()), teacher_count);
    EXPECT_EQ(r.arch.branch_count(), 1);
  }
  DistillConfig same;
  same.embed_dim = 8;
  same.mlp_hidden = {32, 8};
  EXPECT_THROW(distill(m, t.params, t.data, same), ValidationError);
}

TEST(Distill, HoldoutErrorFallsAndCompareIsZeroOnSelf) {
  const Teacher t = make_teacher(5);
  const Model m(t.arch);
  DistillConfig cfg;
  cfg.alpha = 1.0;
  cfg.epochs = 20;
  cfg.seed = 5;
  const auto r = distill(m, t.params, t.data, cfg, t.holdout);
  ASSERT_EQ(r.holdout_mse.size(), 21u);
  ASSERT_EQ(r.loss_curve.size(), 21u);
  EXPECT_LT(r.holdout_mse.back(), r.holdout_mse.front());

  auto labelled = t.holdout;
  for (std::size_t i = 0; i < labelled.size(); ++i) labelled[i].label = i % 2;
  const auto d = compare_models(m, t.params, m, t.params, labelled);
  EXPECT_EQ(d.auc, 0.0);
  EXPECT_EQ(d.precision, 0.0);
}
