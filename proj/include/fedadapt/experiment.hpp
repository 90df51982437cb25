#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fedadapt/config.hpp"
#include "fedadapt/data.hpp"
#include "fedadapt/distill.hpp"
#include "fedadapt/federation.hpp"

namespace fedadapt {

// Everything one CLI invocation needs. Keys (all optional except `seed`):
//   data.source = synth | csv, data.users / data.items / data.interactions,
//   data.pretrain_fraction, data.neg_ratio, data.group_attrs, data.holdout
//   synth.n_users ... synth.seed (the `synth.` prefix may be omitted)
//   arch.embed_dim, arch.mlp_hidden, arch.rank, arch.gate_hidden, arch.adapter_layers
//   pretrain.epochs, pretrain.lr, pretrain.batch
//   fed.policy, fed.rounds, fed.fraction, fed.local_epochs, fed.lr, fed.batch,
//   fed.weighted, fed.upload_mode, fed.parallel, fed.checkpoint_every, fed.init
//   ldp.enabled, ldp.intensity
//   distill.embed_dim, distill.mlp_hidden, distill.epochs, distill.lr,
//   distill.batch, distill.alpha, distill.teacher
//   ablate.arms, ablate.seeds
//   eval.checkpoint, eval.split
//   seed, out
struct ExperimentConfig {
  std::string source = "synth";
  std::filesystem::path users_path, items_path, interactions_path;
  SynthConfig synth;
  bool synth_seed_set = false;
  double pretrain_fraction = 0.5;
  int neg_ratio = 4;
  std::vector<std::string> group_attrs{"u0"};
  double holdout_fraction = 0.2;  // of pretrain examples, for teacher/student evaluation

  int embed_dim = 8;
  std::vector<int> mlp_hidden{32, 8};
  int adapter_rank = 2;
  int gate_hidden = 8;
  AdapterLayers adapter_layers = AdapterLayers::kAll;

  PretrainConfig pretrain;
  std::string policy = "fedpa";
  FedConfig fed;
  int checkpoint_every = 0;
  std::optional<std::filesystem::path> init_path;  // warm-start checkpoint
  NoiseConfig ldp;

  DistillConfig distill;
  std::optional<std::filesystem::path> teacher_path;

  std::vector<std::string> arms{"fedpa", "no_adapter", "user_only", "group_only"};
  int ablate_seeds = 1;

  std::optional<std::filesystem::path> eval_checkpoint;
  Split eval_split = Split::kFedTest;

  std::uint64_t seed = 0;
  std::filesystem::path out = "out";
  bool quiet = false;

  static ExperimentConfig from(const KeyValueConfig& kv);
};

struct PreparedData {
  Dataset dataset;  // both splits assigned
  GroupAssignment groups;
  std::vector<Example> pretrain_train;
  std::vector<Example> pretrain_holdout;
  ChronoSplitReport chrono;
};

PreparedData prepare_data(const ExperimentConfig& config);

inline const std::vector<std::string>& ablation_arms() {
  static const std::vector<std::string> arms{"fedpa",      "no_adapter", "user_only",
                                             "group_only", "no_warm",    "no_gate_uniform"};
  return arms;
}

struct ArmSpec {
  ArchConfig arch;
  PartitionPolicy policy;
};

// Architecture and partition of an ablation arm or of a policy preset name.
ArmSpec arm_spec(const ExperimentConfig& config, const Dataset& dataset, std::string_view arm);

// Base-model architecture implied by the config (no adapters, no gate).
ArchConfig base_arch(const ExperimentConfig& config, const Dataset& dataset);

struct ArmResult {
  std::string arm;
  EvalSummary test;
  std::size_t trainable_params = 0;
  std::size_t uploaded_scalars_per_client = 0;
  FederatedRun run;
};

// Builds the arm's parameters (warm-started from `base` when the policy asks
// for it), runs the federation and evaluates on fed-test.
ArmResult run_arm(const ExperimentConfig& config, const PreparedData& data, std::string_view arm,
                  const ParamSet* base, const RoundObserver& observer = {});

// Subcommands. Each writes its outputs below config.out.
void cmd_synth(const ExperimentConfig& config);
void cmd_pretrain(const ExperimentConfig& config);
void cmd_distill(const ExperimentConfig& config);
void cmd_federate(const ExperimentConfig& config);
void cmd_ablate(const ExperimentConfig& config);
void cmd_eval(const ExperimentConfig& config);

}  // namespace fedadapt
