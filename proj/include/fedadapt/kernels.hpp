#pragma once

#include <optional>
#include <span>
#include <vector>

#include "fedadapt/federation.hpp"

// Per-round client work. Each kernel has a serial reference and an OpenMP
// version over clients; both produce bit-identical results because every
// client owns its RNG streams and results are collected by index.
namespace fedadapt::kernels {

std::vector<Upload> train_clients_serial(const Model& model, const ParamSet& global,
                                         std::span<ClientState> clients,
                                         std::span<const std::size_t> selected,
                                         const LocalTrainConfig& config,
                                         const NoiseConfig& noise);

std::vector<Upload> train_clients_parallel(const Model& model, const ParamSet& global,
                                           std::span<ClientState> clients,
                                           std::span<const std::size_t> selected,
                                           const LocalTrainConfig& config,
                                           const NoiseConfig& noise);

struct ClientMetrics {
  bool has_data = false;
  std::optional<double> auc;
  std::optional<double> precision;
};

std::vector<ClientMetrics> evaluate_clients_serial(const Model& model, const ParamSet& global,
                                                   std::span<const ClientState> clients,
                                                   Split split);

std::vector<ClientMetrics> evaluate_clients_parallel(const Model& model, const ParamSet& global,
                                                     std::span<const ClientState> clients,
                                                     Split split);

}  // namespace fedadapt::kernels
