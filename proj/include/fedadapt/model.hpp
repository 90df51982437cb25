#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedadapt/example.hpp"
#include "fedadapt/param_set.hpp"
#include "fedadapt/schema.hpp"

namespace fedadapt {

enum class Activation { kRelu, kSigmoid };

// kNone: plain layer, only the common branch exists.
// kAdaptive: softmax(W2 relu(W1 x)) picks one scalar weight per branch.
// kUniform: fixed 1/B weights, no gate parameters.
enum class GateMode { kNone, kAdaptive, kUniform };

enum class AdapterLayers { kAll, kHidden };

// Architecture of the two-tower model plus its personalization branches.
// "8-(32, 8, 1)" is embed_dim = 8, mlp_hidden = {32, 8}; the output layer of
// width 1 is implicit.
struct ArchConfig {
  AttributeSchema user_schema;
  AttributeSchema item_schema;
  int embed_dim = 8;
  std::vector<int> mlp_hidden{32, 8};
  int adapter_rank = 2;
  int gate_hidden = 8;
  AdapterLayers adapter_layers = AdapterLayers::kAll;
  bool user_adapter = false;
  std::vector<std::string> group_attributes;  // names from user_schema
  GateMode gate = GateMode::kNone;

  std::size_t layer_count() const { return mlp_hidden.size() + 1; }
  int input_width() const;
  int layer_in(std::size_t l) const;
  int layer_out(std::size_t l) const;
  int branch_count() const;
  bool layer_has_branches(std::size_t l) const;
  // The configured rank, capped at min(in, out) of the layer.
  int layer_rank(std::size_t l) const;
  std::vector<int> group_cardinalities() const;

  // Same embeddings and MLP, no adapters, no gate.
  ArchConfig base_only() const;
  void validate() const;
};

// Tensor naming scheme. Prefixes double as partition-policy patterns.
namespace tensor_names {
std::string user_table(std::string_view attr);   // ue.<attr>
std::string item_table(std::string_view attr);   // ie.<attr>
std::string mlp_weight(std::size_t l);           // mlp.<l>.w
std::string mlp_bias(std::size_t l);             // mlp.<l>.b
std::string user_adapter_up(std::size_t l);      // lr.user.<l>.a   (k x r)
std::string user_adapter_down(std::size_t l);    // lr.user.<l>.b   (r x d)
std::string group_adapter_up(std::string_view attr, int group, std::size_t l);
std::string group_adapter_down(std::string_view attr, int group, std::size_t l);
std::string gate_in(std::size_t l);              // gate.<l>.w1     (h x d)
std::string gate_out(std::size_t l);             // gate.<l>.w2     (B x h)

struct GroupKey {
  std::size_t attribute = 0;  // index into ArchConfig::group_attributes
  int group = 0;
};
// Which group a group-adapter tensor belongs to; nullopt for other tensors.
std::optional<GroupKey> group_of(std::string_view tensor, const ArchConfig& arch);
}  // namespace tensor_names

// Non-owning view of one MLP layer and its branches.
struct AdapterView {
  const Tensor* up = nullptr;    // W_a, k x r
  const Tensor* down = nullptr;  // W_b, r x d
};

struct LayerView {
  const Tensor* weight = nullptr;  // k x d
  const Tensor* bias = nullptr;    // k x 1
  std::vector<AdapterView> adapters;  // user adapter first, then groups
  const Tensor* gate_in = nullptr;    // h x d
  const Tensor* gate_out = nullptr;   // B x h
  GateMode gate = GateMode::kNone;
  Activation activation = Activation::kRelu;

  std::size_t branch_count() const { return 1 + adapters.size(); }
};

// Intermediate values of one layer, kept for the backward pass.
struct LayerTrace {
  std::vector<double> input;
  std::vector<std::vector<double>> adapter_mid;  // W_b x per adapter
  std::vector<std::vector<double>> branches;     // common first
  std::vector<double> gate_pre;                  // W1 x
  std::vector<double> gate_hidden;               // relu(W1 x)
  std::vector<double> weights;                   // length B
  std::vector<double> fused;
  std::vector<double> output;
};

// Fused layer: branches [W x + b, W_a W_b x, ...], weights w (from the gate,
// uniform, or `forced_weights` when non-empty), returns act(sum_j w_j branch_j).
std::vector<double> layer_forward(std::span<const double> x, const LayerView& layer,
                                  LayerTrace* trace = nullptr,
                                  std::span<const double> forced_weights = {});

double sigmoid(double z);

// Clamped at [eps, 1 - eps], eps = 1e-12. Labels may be soft targets.
double bce_loss(std::span<const double> predictions, std::span<const double> labels);
inline constexpr double kBceEpsilon = 1e-12;

struct ForwardOptions {
  // One-hot weight on the common branch in every layer that has branches.
  bool force_common_gate = false;
};

struct BackwardResult {
  double loss = 0.0;
  GradientSet grads;
};

class Model {
 public:
  explicit Model(ArchConfig arch);

  const ArchConfig& arch() const { return arch_; }

  // Embeddings and MLP/gate W1 ~ U(-a, a), a = sqrt(6 / (fan_in + fan_out));
  // biases 0; adapter W_a ~ N(0, 0.02), W_b = 0; gate W2 = 0. All tensors
  // tagged shared; a PartitionPolicy retags them.
  ParamSet init_params(std::uint64_t seed) const;

  std::vector<double> embed_user(const ParamSet& params, std::span<const int> attrs) const;
  std::vector<double> embed_item(const ParamSet& params, std::span<const int> attrs) const;

  LayerView layer_view(const ParamSet& params, std::size_t l, std::span<const int> groups) const;

  double predict(const ParamSet& params, const Example& example, ForwardOptions opts = {}) const;
  std::vector<double> predict_batch(const ParamSet& params, std::span<const Example> batch) const;
  double loss(const ParamSet& params, std::span<const Example> batch) const;

  // Mean BCE over the batch and its exact gradient for every tensor that is
  // not tagged frozen.
  BackwardResult backward(const ParamSet& params, std::span<const Example> batch,
                          ForwardOptions opts = {}) const;

 private:
  std::vector<double> embed(const ParamSet& params, std::span<const int> attrs, bool user) const;

  ArchConfig arch_;
  std::vector<std::string> user_tables_;
  std::vector<std::string> item_tables_;
};

}  // namespace fedadapt
