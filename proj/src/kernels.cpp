#include "fedadapt/kernels.hpp"

#include <exception>

#include "fedadapt/errors.hpp"
#include "fedadapt/metrics.hpp"

namespace fedadapt::kernels {
namespace {

Upload train_one(const Model& model, const ParamSet& global, ClientState& client,
                 const LocalTrainConfig& config, const NoiseConfig& noise) {
  Upload upload = client_local_train(client, model, global, config);
  if (noise.enabled && !upload.skip) noise_upload(upload, noise, client.noise_rng);
  return upload;
}

ClientMetrics evaluate_one(const Model& model, const ParamSet& global, const ClientState& client,
                           Split split) {
  ClientMetrics m;
  const auto& examples = client.examples(split);
  if (examples.empty()) return m;
  m.has_data = true;
  const ParamSet params = client_model(global, client);
  std::vector<double> scores = model.predict_batch(params, examples);
  std::vector<int> labels;
  labels.reserve(examples.size());
  for (const auto& e : examples) labels.push_back(e.label > 0.5 ? 1 : 0);
  try {
    m.auc = auc(scores, labels);
  } catch (const MetricError&) {
  }
  try {
    m.precision = precision(scores, labels);
  } catch (const MetricError&) {
  }
  return m;
}

}  // namespace

std::vector<Upload> train_clients_serial(const Model& model, const ParamSet& global,
                                         std::span<ClientState> clients,
                                         std::span<const std::size_t> selected,
                                         const LocalTrainConfig& config,
                                         const NoiseConfig& noise) {
  std::vector<Upload> uploads(selected.size());
  for (std::size_t i = 0; i < selected.size(); ++i) {
    uploads[i] = train_one(model, global, clients[selected[i]], config, noise);
  }
  return uploads;
}

std::vector<Upload> train_clients_parallel(const Model& model, const ParamSet& global,
                                           std::span<ClientState> clients,
                                           std::span<const std::size_t> selected,
                                           const LocalTrainConfig& config,
                                           const NoiseConfig& noise) {
  std::vector<Upload> uploads(selected.size());
  std::exception_ptr failure;
  const auto n = static_cast<long>(selected.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) {
    try {
      uploads[i] = train_one(model, global, clients[selected[i]], config, noise);
    } catch (...) {
#pragma omp critical(fedadapt_kernel_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return uploads;
}

std::vector<ClientMetrics> evaluate_clients_serial(const Model& model, const ParamSet& global,
                                                   std::span<const ClientState> clients,
                                                   Split split) {
  std::vector<ClientMetrics> out(clients.size());
  for (std::size_t i = 0; i < clients.size(); ++i) {
    out[i] = evaluate_one(model, global, clients[i], split);
  }
  return out;
}

std::vector<ClientMetrics> evaluate_clients_parallel(const Model& model, const ParamSet& global,
                                                     std::span<const ClientState> clients,
                                                     Split split) {
  std::vector<ClientMetrics> out(clients.size());
  std::exception_ptr failure;
  const auto n = static_cast<long>(clients.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) {
    try {
      out[i] = evaluate_one(model, global, clients[i], split);
    } catch (...) {
#pragma omp critical(fedadapt_kernel_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace fedadapt::kernels
