#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedadapt/data.hpp"
#include "fedadapt/model.hpp"
#include "fedadapt/privacy.hpp"
#include "fedadapt/upload.hpp"

namespace fedadapt {

// Maps tensor-name patterns to partition tags. A pattern ending in '*' is a
// prefix; anything else must match exactly. Each tensor must match exactly
// one pattern.
struct PartitionPolicy {
  std::string name;
  std::vector<std::pair<std::string, Tag>> patterns;
  bool warm_start = true;

  // "fedpa": item embeddings and MLP frozen, user adapters private, user
  //          embeddings, group adapters and gates shared.
  // "full": everything shared (base model without adapters).
  // "fedpa_no_warm": fedpa tags on a random initialization.
  static PartitionPolicy preset(std::string_view name);

  Tag tag_for(std::string_view tensor) const;
  void apply(ParamSet& params) const;
};

struct ClientState {
  int user_id = 0;
  std::vector<int> groups;
  std::vector<Example> train;
  std::vector<Example> val;
  std::vector<Example> test;
  ParamSet private_params;
  Rng train_rng;
  Rng noise_rng;

  const std::vector<Example>& examples(Split split) const;
};

struct EvalSummary {
  std::optional<double> auc;        // unweighted mean over clients
  std::optional<double> precision;
  std::size_t auc_clients = 0;
  std::size_t auc_excluded = 0;     // single-class split
  std::size_t precision_clients = 0;
  std::size_t precision_excluded = 0;  // no predicted positives
};

struct RoundReport {
  int round = 0;
  std::size_t participants = 0;
  std::size_t skipped = 0;
  EvalSummary val;
  std::size_t uploaded_scalars_per_client = 0;
  double seconds = 0.0;
};

struct ServerState {
  ParamSet global;  // shared + frozen tensors
  int round = 0;
  std::vector<RoundReport> history;
};

struct LocalTrainConfig {
  int epochs = 2;
  double lr = 0.05;
  int batch_size = 32;
  UploadMode upload = UploadMode::kFull;
};

struct FedConfig {
  int rounds = 20;
  double client_fraction = 1.0;
  LocalTrainConfig local;
  bool weighted = false;  // example-count weights instead of 1/n
  bool parallel = true;   // OpenMP over clients within a round
  bool evaluate_rounds = true;
};

struct PretrainConfig {
  int epochs = 30;
  double lr = 0.05;
  int batch_size = 32;
  std::uint64_t seed = 0;
};

struct PretrainResult {
  ParamSet params;
  std::vector<double> loss_curve;  // full-data BCE before training, then after each epoch
};

// Centralized minibatch SGD of a base (adapter-free) model.
PretrainResult pretrain(const Model& base, std::span<const Example> data,
                        const PretrainConfig& config);

// Overlay the client's private tensors on the received global tensors, run
// local SGD and return the shared tensors (or their deltas).
Upload client_local_train(ClientState& client, const Model& model, const ParamSet& global,
                          const LocalTrainConfig& config);

// ceil(fraction * n) distinct client indices, ascending.
std::vector<std::size_t> select_clients(std::size_t n, double fraction, Rng& rng);

// Element-wise mean of shared tensors over participating uploads; group
// adapters only over uploads whose groups include that group. Returns false
// (state untouched) when there is no usable upload.
bool aggregate(std::span<const Upload> uploads, ServerState& server, const ArchConfig& arch,
               bool weighted = false);

// The model a client actually serves: global tensors plus its private ones.
ParamSet client_model(const ParamSet& global, const ClientState& client);

EvalSummary evaluate_global(const Model& model, const ServerState& server,
                            std::span<const ClientState> clients, Split split,
                            bool parallel = true);

struct FederatedRun {
  ServerState server;
  std::vector<ClientState> clients;
  std::vector<RoundReport> reports;
};

using RoundObserver = std::function<void(const RoundReport&, const ServerState&,
                                         std::span<const ClientState>)>;

FederatedRun run_federated(const Model& model, ServerState initial,
                           std::vector<ClientState> clients, const FedConfig& config,
                           const NoiseConfig& noise, std::uint64_t seed,
                           const RoundObserver& observer = {});

// --- setup -----------------------------------------------------------------

// Copies every base tensor (ue/ie/mlp) of `base` into `init`; shapes must match.
ParamSet warm_start(ParamSet init, const ParamSet& base);

// Server keeps everything except private tensors.
ServerState make_server(const ParamSet& tagged);

// Examples of one split over all users. Without native 0-labels each
// positive is followed by `neg_ratio` sampled negatives.
std::vector<Example> split_examples(const Dataset& dataset, const GroupAssignment& groups,
                                    Split split, int neg_ratio, std::uint64_t seed);

// One client per user with federated interactions, ascending user id. Private
// tensors start from the private entries of `tagged`.
std::vector<ClientState> build_clients(const Dataset& dataset, const GroupAssignment& groups,
                                       const ParamSet& tagged, int neg_ratio,
                                       std::uint64_t seed);

void save_checkpoint(const std::filesystem::path& dir, const ServerState& server,
                     std::span<const ClientState> clients);
// Restores the server tensors and each listed client's private tensors.
void load_checkpoint(const std::filesystem::path& dir, ServerState& server,
                     std::span<ClientState> clients);

}  // namespace fedadapt
