#include "fedadapt/distill.hpp"

#include <numeric>

#include "fedadapt/errors.hpp"
#include "fedadapt/metrics.hpp"
#include "fedadapt/rng.hpp"

namespace fedadapt {

ArchConfig student_arch(const ArchConfig& teacher, const DistillConfig& config) {
  ArchConfig a = teacher.base_only();
  a.embed_dim = config.embed_dim;
  a.mlp_hidden = config.mlp_hidden;
  a.validate();
  return a;
}

std::vector<Example> distill_targets(const Model& teacher, const ParamSet& teacher_params,
                                     std::span<const Example> data, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("alpha must lie in [0, 1]");
  std::vector<Example> out(data.begin(), data.end());
  if (alpha == 0.0) return out;
  const auto soft = teacher.predict_batch(teacher_params, data);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].label = alpha == 1.0 ? soft[i] : alpha * soft[i] + (1.0 - alpha) * data[i].label;
  }
  return out;
}

namespace {

double prediction_mse(const Model& student, const ParamSet& params,
                      std::span<const Example> holdout, std::span<const double> reference) {
  const auto p = student.predict_batch(params, holdout);
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - reference[i]) * (p[i] - reference[i]);
  return s / static_cast<double>(p.size());
}

}  // namespace

DistillResult distill(const Model& teacher, const ParamSet& teacher_params,
                      std::span<const Example> data, const DistillConfig& config,
                      std::span<const Example> holdout) {
  if (data.empty()) throw ValidationError("distillation data is empty");
  if (config.epochs < 0) throw ValidationError("epochs must be >= 0");
  if (config.batch_size < 1) throw ValidationError("batch size must be >= 1");
  DistillResult r;
  r.arch = student_arch(teacher.arch(), config);
  const Model student(r.arch);
  r.params = student.init_params(config.seed);
  const auto teacher_count = count_params(teacher_params, TagFilter::all());
  const auto student_count = count_params(r.params, TagFilter::all());
  if (student_count >= teacher_count) {
    throw ValidationError("student has " + std::to_string(student_count) +
                          " parameters, teacher " + std::to_string(teacher_count) +
                          "; the student must be smaller");
  }

  const auto targets = distill_targets(teacher, teacher_params, data, config.alpha);
  std::vector<double> reference;
  if (!holdout.empty()) {
    reference = teacher.predict_batch(teacher_params, holdout);
    r.holdout_mse.push_back(prediction_mse(student, r.params, holdout, reference));
  }
  r.loss_curve.push_back(student.loss(r.params, targets));

  Rng rng = Rng::stream(config.seed, streams::kDistill, 0);
  std::vector<std::size_t> order(targets.size());
  std::vector<Example> batch;
  for (int e = 0; e < config.epochs; ++e) {
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const auto stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      batch.clear();
      for (std::size_t i = start; i < stop; ++i) batch.push_back(targets[order[i]]);
      sgd_step(r.params, student.backward(r.params, batch).grads, config.lr);
    }
    r.loss_curve.push_back(student.loss(r.params, targets));
    if (!holdout.empty()) r.holdout_mse.push_back(prediction_mse(student, r.params, holdout, reference));
  }
  return r;
}

MetricDeltas compare_models(const Model& a, const ParamSet& params_a, const Model& b,
                            const ParamSet& params_b, std::span<const Example> data) {
  std::vector<int> labels;
  labels.reserve(data.size());
  for (const auto& e : data) labels.push_back(e.label > 0.5 ? 1 : 0);
  const auto sa = a.predict_batch(params_a, data);
  const auto sb = b.predict_batch(params_b, data);
  return {auc(sa, labels) - auc(sb, labels), precision(sa, labels) - precision(sb, labels)};
}

}  // namespace fedadapt
