#include "fedadapt/model.hpp"

#include <charconv>
#include <cmath>

#include "fedadapt/errors.hpp"
#include "fedadapt/rng.hpp"
#include "layer_internal.hpp"

namespace fedadapt {

// ---------------------------------------------------------------------------
// ArchConfig

int ArchConfig::input_width() const {
  return static_cast<int>(user_schema.size() + item_schema.size()) * embed_dim;
}

int ArchConfig::layer_in(std::size_t l) const {
  return l == 0 ? input_width() : mlp_hidden[l - 1];
}

int ArchConfig::layer_out(std::size_t l) const {
  return l < mlp_hidden.size() ? mlp_hidden[l] : 1;
}

int ArchConfig::branch_count() const {
  return 1 + (user_adapter ? 1 : 0) + static_cast<int>(group_attributes.size());
}

bool ArchConfig::layer_has_branches(std::size_t l) const {
  if (branch_count() == 1) return false;
  return adapter_layers == AdapterLayers::kAll || l + 1 < layer_count();
}

int ArchConfig::layer_rank(std::size_t l) const {
  return std::min({adapter_rank, layer_in(l), layer_out(l)});
}

std::vector<int> ArchConfig::group_cardinalities() const {
  std::vector<int> out;
  for (const auto& name : group_attributes) {
    const auto idx = user_schema.index_of(name);
    if (!idx) throw ValidationError("unknown grouping attribute '" + name + "'");
    out.push_back(user_schema[*idx].cardinality);
  }
  return out;
}

ArchConfig ArchConfig::base_only() const {
  ArchConfig base = *this;
  base.user_adapter = false;
  base.group_attributes.clear();
  base.gate = GateMode::kNone;
  return base;
}

void ArchConfig::validate() const {
  if (embed_dim < 1) throw ValidationError("embed_dim must be >= 1");
  if (user_schema.empty() || item_schema.empty()) {
    throw ValidationError("architecture needs at least one user and one item attribute");
  }
  for (int w : mlp_hidden) {
    if (w < 1) throw ValidationError("mlp_hidden widths must be >= 1");
  }
  (void)group_cardinalities();
  if (branch_count() > 1) {
    if (adapter_rank < 1) throw ValidationError("adapter_rank must be >= 1");
    if (gate == GateMode::kNone) throw ValidationError("adapter branches need a gate mode");
    if (gate == GateMode::kAdaptive && gate_hidden < 1) {
      throw ValidationError("gate_hidden must be >= 1");
    }
  } else if (gate != GateMode::kNone) {
    throw ValidationError("a gate needs at least one adapter branch");
  }
}

// ---------------------------------------------------------------------------
// Names

namespace tensor_names {

std::string user_table(std::string_view attr) { return "ue." + std::string(attr); }
std::string item_table(std::string_view attr) { return "ie." + std::string(attr); }
std::string mlp_weight(std::size_t l) { return "mlp." + std::to_string(l) + ".w"; }
std::string mlp_bias(std::size_t l) { return "mlp." + std::to_string(l) + ".b"; }
std::string user_adapter_up(std::size_t l) { return "lr.user." + std::to_string(l) + ".a"; }
std::string user_adapter_down(std::size_t l) { return "lr.user." + std::to_string(l) + ".b"; }
std::string group_adapter_up(std::string_view attr, int group, std::size_t l) {
  return "lr.group." + std::string(attr) + "." + std::to_string(group) + "." +
         std::to_string(l) + ".a";
}
std::string group_adapter_down(std::string_view attr, int group, std::size_t l) {
  return "lr.group." + std::string(attr) + "." + std::to_string(group) + "." +
         std::to_string(l) + ".b";
}
std::string gate_in(std::size_t l) { return "gate." + std::to_string(l) + ".w1"; }
std::string gate_out(std::size_t l) { return "gate." + std::to_string(l) + ".w2"; }

std::optional<GroupKey> group_of(std::string_view tensor, const ArchConfig& arch) {
  constexpr std::string_view prefix = "lr.group.";
  if (!tensor.starts_with(prefix)) return std::nullopt;
  std::string_view rest = tensor.substr(prefix.size());
  const auto dot = rest.find('.');
  if (dot == std::string_view::npos) return std::nullopt;
  const std::string_view attr = rest.substr(0, dot);
  rest = rest.substr(dot + 1);
  const auto dot2 = rest.find('.');
  int group = 0;
  const auto [ptr, ec] = std::from_chars(rest.data(), rest.data() + dot2, group);
  if (ec != std::errc() || ptr != rest.data() + dot2) return std::nullopt;
  for (std::size_t i = 0; i < arch.group_attributes.size(); ++i) {
    if (arch.group_attributes[i] == attr) return GroupKey{i, group};
  }
  return std::nullopt;
}

}  // namespace tensor_names

// ---------------------------------------------------------------------------
// Model

Model::Model(ArchConfig arch) : arch_(std::move(arch)) {
  arch_.validate();
  for (const auto& a : arch_.user_schema) user_tables_.push_back(tensor_names::user_table(a.name));
  for (const auto& a : arch_.item_schema) item_tables_.push_back(tensor_names::item_table(a.name));
}

ParamSet Model::init_params(std::uint64_t seed) const {
  namespace tn = tensor_names;
  ParamSet params;
  // Shapes first; values are drawn below in name order.
  const auto d = static_cast<std::size_t>(arch_.embed_dim);
  for (std::size_t i = 0; i < arch_.user_schema.size(); ++i) {
    params.add(user_tables_[i], Tensor(arch_.user_schema[i].cardinality, d), Tag::kShared);
  }
  for (std::size_t i = 0; i < arch_.item_schema.size(); ++i) {
    params.add(item_tables_[i], Tensor(arch_.item_schema[i].cardinality, d), Tag::kShared);
  }
  const auto cards = arch_.group_cardinalities();
  for (std::size_t l = 0; l < arch_.layer_count(); ++l) {
    const auto in = static_cast<std::size_t>(arch_.layer_in(l));
    const auto out = static_cast<std::size_t>(arch_.layer_out(l));
    params.add(tn::mlp_weight(l), Tensor(out, in), Tag::kShared);
    params.add(tn::mlp_bias(l), Tensor(out, 1), Tag::kShared);
    if (!arch_.layer_has_branches(l)) continue;
    const auto r = static_cast<std::size_t>(arch_.layer_rank(l));
    if (arch_.user_adapter) {
      params.add(tn::user_adapter_up(l), Tensor(out, r), Tag::kShared);
      params.add(tn::user_adapter_down(l), Tensor(r, in), Tag::kShared);
    }
    for (std::size_t g = 0; g < arch_.group_attributes.size(); ++g) {
      for (int v = 0; v < cards[g]; ++v) {
        params.add(tn::group_adapter_up(arch_.group_attributes[g], v, l), Tensor(out, r),
                   Tag::kShared);
        params.add(tn::group_adapter_down(arch_.group_attributes[g], v, l), Tensor(r, in),
                   Tag::kShared);
      }
    }
    if (arch_.gate == GateMode::kAdaptive) {
      const auto h = static_cast<std::size_t>(arch_.gate_hidden);
      params.add(tn::gate_in(l), Tensor(h, in), Tag::kShared);
      params.add(tn::gate_out(l), Tensor(static_cast<std::size_t>(arch_.branch_count()), h),
                 Tag::kShared);
    }
  }

  // Fill in name order so the draw sequence does not depend on insertion.
  Rng rng = Rng::stream(seed, streams::kInit, 0);
  ParamSet filled;
  for (const auto& [name, entry] : params) {
    Tensor t = entry.value;
    const bool is_bias = name.starts_with("mlp.") && name.ends_with(".b");
    const bool is_zero = name.ends_with(".w2") || (name.starts_with("lr.") && name.ends_with(".b"));
    const bool is_adapter_up = name.starts_with("lr.") && name.ends_with(".a");
    if (is_adapter_up) {
      for (auto& v : t.data()) v = rng.normal(0.0, 0.02);
    } else if (!is_bias && !is_zero) {
      const double a = std::sqrt(6.0 / static_cast<double>(t.rows() + t.cols()));
      for (auto& v : t.data()) v = rng.uniform(-a, a);
    }
    filled.add(name, std::move(t), entry.tag);
  }
  return filled;
}

std::vector<double> Model::embed(const ParamSet& params, std::span<const int> attrs,
                                 bool user) const {
  const auto& schema = user ? arch_.user_schema : arch_.item_schema;
  const auto& names = user ? user_tables_ : item_tables_;
  schema.check_values(attrs, user ? "user" : "item");
  const auto d = static_cast<std::size_t>(arch_.embed_dim);
  std::vector<double> out;
  out.reserve(attrs.size() * d);
  for (std::size_t i = 0; i < attrs.size(); ++i) {
    const Tensor& table = params.get(names[i]);
    if (table.cols() != d || table.rows() != static_cast<std::size_t>(schema[i].cardinality)) {
      throw ShapeError("embedding table '" + names[i] + "' has the wrong shape");
    }
    const auto row = table.row(static_cast<std::size_t>(attrs[i]));
    out.insert(out.end(), row.begin(), row.end());
  }
  return out;
}

std::vector<double> Model::embed_user(const ParamSet& params, std::span<const int> attrs) const {
  return embed(params, attrs, true);
}

std::vector<double> Model::embed_item(const ParamSet& params, std::span<const int> attrs) const {
  return embed(params, attrs, false);
}

LayerView Model::layer_view(const ParamSet& params, std::size_t l,
                            std::span<const int> groups) const {
  namespace tn = tensor_names;
  LayerView view;
  view.weight = &params.get(tn::mlp_weight(l));
  view.bias = &params.get(tn::mlp_bias(l));
  view.activation = l + 1 == arch_.layer_count() ? Activation::kSigmoid : Activation::kRelu;
  if (!arch_.layer_has_branches(l)) return view;
  if (groups.size() != arch_.group_attributes.size()) {
    throw ShapeError("expected " + std::to_string(arch_.group_attributes.size()) +
                     " group indices, got " + std::to_string(groups.size()));
  }
  if (arch_.user_adapter) {
    view.adapters.push_back({&params.get(tn::user_adapter_up(l)), &params.get(tn::user_adapter_down(l))});
  }
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& attr = arch_.group_attributes[g];
    const Tensor* up = params.find(tn::group_adapter_up(attr, groups[g], l));
    const Tensor* down = params.find(tn::group_adapter_down(attr, groups[g], l));
    if (!up || !down) {
      throw ValidationError("no adapter for group " + std::to_string(groups[g]) + " of '" + attr + "'");
    }
    view.adapters.push_back({up, down});
  }
  view.gate = arch_.gate;
  if (arch_.gate == GateMode::kAdaptive) {
    view.gate_in = &params.get(tn::gate_in(l));
    view.gate_out = &params.get(tn::gate_out(l));
  }
  return view;
}

double Model::predict(const ParamSet& params, const Example& example, ForwardOptions opts) const {
  std::vector<double> x = embed_user(params, example.user_attrs);
  const auto v = embed_item(params, example.item_attrs);
  x.insert(x.end(), v.begin(), v.end());
  std::vector<double> forced;
  for (std::size_t l = 0; l < arch_.layer_count(); ++l) {
    const LayerView view = layer_view(params, l, example.groups);
    forced.clear();
    if (opts.force_common_gate && view.branch_count() > 1) {
      forced.assign(view.branch_count(), 0.0);
      forced[0] = 1.0;
    }
    x = layer_forward(x, view, nullptr, forced);
  }
  return x[0];
}

std::vector<double> Model::predict_batch(const ParamSet& params,
                                         std::span<const Example> batch) const {
  std::vector<double> out;
  out.reserve(batch.size());
  for (const auto& e : batch) out.push_back(predict(params, e));
  return out;
}

double Model::loss(const ParamSet& params, std::span<const Example> batch) const {
  std::vector<double> labels;
  labels.reserve(batch.size());
  for (const auto& e : batch) labels.push_back(e.label);
  return bce_loss(predict_batch(params, batch), labels);
}

BackwardResult Model::backward(const ParamSet& params, std::span<const Example> batch,
                               ForwardOptions opts) const {
  namespace tn = tensor_names;
  if (batch.empty()) throw ValidationError("backward on an empty batch");
  BackwardResult result;
  for (const auto& [name, entry] : params) {
    if (entry.tag != Tag::kFrozen) {
      result.grads.emplace(name, Tensor(entry.value.rows(), entry.value.cols()));
    }
  }
  auto grad_of = [&](const std::string& name) -> Tensor* {
    const auto it = result.grads.find(name);
    return it == result.grads.end() ? nullptr : &it->second;
  };

  const std::size_t n_layers = arch_.layer_count();
  const double inv_n = 1.0 / static_cast<double>(batch.size());

  // Views and gradient slots depend only on the group vector; examples of one
  // client share it, so cache on the last one seen.
  std::vector<int> cached_groups{-1};
  std::vector<LayerView> views(n_layers);
  std::vector<detail::LayerGrads> layer_grads(n_layers);
  auto refresh = [&](std::span<const int> groups) {
    if (std::equal(groups.begin(), groups.end(), cached_groups.begin(), cached_groups.end())) return;
    cached_groups.assign(groups.begin(), groups.end());
    for (std::size_t l = 0; l < n_layers; ++l) {
      views[l] = layer_view(params, l, groups);
      auto& g = layer_grads[l];
      g = {};
      g.weight = grad_of(tn::mlp_weight(l));
      g.bias = grad_of(tn::mlp_bias(l));
      if (!arch_.layer_has_branches(l)) continue;
      if (arch_.user_adapter) {
        g.adapter_up.push_back(grad_of(tn::user_adapter_up(l)));
        g.adapter_down.push_back(grad_of(tn::user_adapter_down(l)));
      }
      for (std::size_t a = 0; a < groups.size(); ++a) {
        const auto& attr = arch_.group_attributes[a];
        g.adapter_up.push_back(grad_of(tn::group_adapter_up(attr, groups[a], l)));
        g.adapter_down.push_back(grad_of(tn::group_adapter_down(attr, groups[a], l)));
      }
      if (arch_.gate == GateMode::kAdaptive) {
        g.gate_in = grad_of(tn::gate_in(l));
        g.gate_out = grad_of(tn::gate_out(l));
      }
    }
  };

  std::vector<LayerTrace> traces(n_layers);
  std::vector<double> d_fused, d_input, forced;
  const auto d = static_cast<std::size_t>(arch_.embed_dim);
  double loss_sum = 0.0;
  for (const auto& example : batch) {
    refresh(example.groups);
    std::vector<double> x = embed_user(params, example.user_attrs);
    const auto v = embed_item(params, example.item_attrs);
    x.insert(x.end(), v.begin(), v.end());
    for (std::size_t l = 0; l < n_layers; ++l) {
      forced.clear();
      if (opts.force_common_gate && views[l].branch_count() > 1) {
        forced.assign(views[l].branch_count(), 0.0);
        forced[0] = 1.0;
      }
      x = layer_forward(x, views[l], &traces[l], forced);
    }
    const double p = x[0];
    const double y = example.label;
    const double pc = std::clamp(p, kBceEpsilon, 1.0 - kBceEpsilon);
    loss_sum += -(y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc));

    // Sigmoid output with BCE: dL/d(pre-activation) = (p - y) / n.
    d_fused.assign(1, (p - y) * inv_n);
    for (std::size_t l = n_layers; l-- > 0;) {
      const bool fixed = opts.force_common_gate;
      detail::layer_backward(views[l], traces[l], d_fused, fixed, layer_grads[l], &d_input);
      if (l == 0) break;
      const auto& prev = traces[l - 1];
      d_fused.resize(d_input.size());
      for (std::size_t i = 0; i < d_input.size(); ++i) {
        d_fused[i] = prev.fused[i] > 0.0 ? d_input[i] : 0.0;
      }
    }
    // d_input now holds dL/d(concat(u_r, v_r)); scatter into table rows.
    std::size_t offset = 0;
    auto scatter = [&](const std::vector<std::string>& names, const std::vector<int>& attrs) {
      for (std::size_t i = 0; i < attrs.size(); ++i, offset += d) {
        Tensor* g = grad_of(names[i]);
        if (!g) continue;
        auto row = g->row(static_cast<std::size_t>(attrs[i]));
        for (std::size_t c = 0; c < d; ++c) row[c] += d_input[offset + c];
      }
    };
    scatter(user_tables_, example.user_attrs);
    scatter(item_tables_, example.item_attrs);
  }
  result.loss = loss_sum * inv_n;
  return result;
}

}  // namespace fedadapt
