#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedadapt/model.hpp"

namespace fedadapt {

struct DistillConfig {
  int embed_dim = 4;
  std::vector<int> mlp_hidden{8};
  int epochs = 30;
  double lr = 0.05;
  int batch_size = 32;
  double alpha = 0.5;  // weight of the teacher's soft labels
  std::uint64_t seed = 0;
};

struct DistillResult {
  ArchConfig arch;
  ParamSet params;
  std::vector<double> loss_curve;   // mixed-target BCE before training, then per epoch
  std::vector<double> holdout_mse;  // student vs teacher predictions, same cadence
};

// Base-only student with the teacher's schemas and the configured sizes.
ArchConfig student_arch(const ArchConfig& teacher, const DistillConfig& config);

// Targets alpha * teacher + (1 - alpha) * label. With alpha == 1 the labels
// are never read.
std::vector<Example> distill_targets(const Model& teacher, const ParamSet& teacher_params,
                                     std::span<const Example> data, double alpha);

// Trains a fresh student on the mixed targets. BCE is linear in its target,
// so this is alpha * BCE(student, teacher) + (1 - alpha) * BCE(student, y).
DistillResult distill(const Model& teacher, const ParamSet& teacher_params,
                      std::span<const Example> data, const DistillConfig& config,
                      std::span<const Example> holdout = {});

struct MetricDeltas {
  double auc = 0.0;
  double precision = 0.0;
};

// Pooled metrics of A minus those of B on the same examples.
MetricDeltas compare_models(const Model& a, const ParamSet& params_a, const Model& b,
                            const ParamSet& params_b, std::span<const Example> data);

}  // namespace fedadapt
