#include "fedadapt/federation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "fedadapt/errors.hpp"
#include "fedadapt/kernels.hpp"

namespace fedadapt {

// ---------------------------------------------------------------------------
// Partition policy

PartitionPolicy PartitionPolicy::preset(std::string_view name) {
  PartitionPolicy p;
  p.name = std::string(name);
  if (name == "fedpa" || name == "fedpa_no_warm") {
    p.patterns = {{"ue.*", Tag::kShared},        {"ie.*", Tag::kFrozen},
                  {"mlp.*", Tag::kFrozen},       {"lr.user.*", Tag::kPrivate},
                  {"lr.group.*", Tag::kShared},  {"gate.*", Tag::kShared}};
    p.warm_start = name == "fedpa";
  } else if (name == "full") {
    p.patterns = {{"ue.*", Tag::kShared},  {"ie.*", Tag::kShared}, {"mlp.*", Tag::kShared},
                  {"lr.*", Tag::kShared},  {"gate.*", Tag::kShared}};
    p.warm_start = true;
  } else {
    throw ConfigError("unknown partition policy '" + std::string(name) + "'");
  }
  return p;
}

Tag PartitionPolicy::tag_for(std::string_view tensor) const {
  std::optional<Tag> found;
  int matches = 0;
  for (const auto& [pattern, tag] : patterns) {
    const bool hit = pattern.ends_with('*')
                         ? tensor.starts_with(std::string_view(pattern).substr(0, pattern.size() - 1))
                         : tensor == pattern;
    if (hit) {
      ++matches;
      found = tag;
    }
  }
  if (matches != 1) {
    throw ValidationError("tensor '" + std::string(tensor) + "' matches " +
                          std::to_string(matches) + " patterns of policy '" + name + "'");
  }
  return *found;
}

void PartitionPolicy::apply(ParamSet& params) const {
  std::vector<std::string> names;
  for (const auto& [n, e] : params) names.push_back(n);
  for (const auto& n : names) params.set_tag(n, tag_for(n));
}

const std::vector<Example>& ClientState::examples(Split split) const {
  switch (split) {
    case Split::kFedTrain: return train;
    case Split::kFedVal: return val;
    case Split::kFedTest: return test;
    default: break;
  }
  throw ValidationError(std::string("clients hold no '") + split_name(split) + "' split");
}

// ---------------------------------------------------------------------------
// Training

namespace {

void train_epochs(const Model& model, ParamSet& params, std::span<const Example> data, int epochs,
                  double lr, int batch_size, Rng& rng) {
  if (batch_size < 1) throw ValidationError("batch size must be >= 1");
  std::vector<std::size_t> order(data.size());
  std::vector<Example> batch;
  for (int e = 0; e < epochs; ++e) {
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
      batch.clear();
      for (std::size_t i = start; i < stop; ++i) batch.push_back(data[order[i]]);
      const auto result = model.backward(params, batch);
      sgd_step(params, result.grads, lr);
    }
  }
}

}  // namespace

PretrainResult pretrain(const Model& base, std::span<const Example> data,
                        const PretrainConfig& config) {
  if (data.empty()) throw ValidationError("pretrain split is empty");
  if (base.arch().branch_count() != 1) {
    throw ValidationError("pretraining runs on the base model only");
  }
  if (config.epochs < 0) throw ValidationError("epochs must be >= 0");
  PretrainResult result;
  result.params = base.init_params(config.seed);
  result.loss_curve.push_back(base.loss(result.params, data));
  Rng rng = Rng::stream(config.seed, streams::kPretrainShuffle, 0);
  for (int e = 0; e < config.epochs; ++e) {
    train_epochs(base, result.params, data, 1, config.lr, config.batch_size, rng);
    result.loss_curve.push_back(base.loss(result.params, data));
  }
  return result;
}

ParamSet client_model(const ParamSet& global, const ClientState& client) {
  ParamSet params = global;
  for (const auto& [name, entry] : client.private_params) params.put(name, entry.value, Tag::kPrivate);
  return params;
}

Upload client_local_train(ClientState& client, const Model& model, const ParamSet& global,
                          const LocalTrainConfig& config) {
  Upload upload;
  upload.client_id = client.user_id;
  upload.groups = client.groups;
  upload.mode = config.upload;
  upload.example_count = client.train.size();
  if (client.train.empty()) {
    upload.skip = true;
    return upload;
  }
  if (config.epochs < 0) throw ValidationError("local epochs must be >= 0");
  ParamSet local = client_model(global, client);
  train_epochs(model, local, client.train, config.epochs, config.lr, config.batch_size,
               client.train_rng);

  for (const auto& [name, entry] : local) {
    if (entry.tag == Tag::kPrivate) {
      client.private_params.put(name, entry.value, Tag::kPrivate);
    } else if (entry.tag == Tag::kShared) {
      Tensor value = entry.value;
      if (config.upload == UploadMode::kDelta) {
        const auto received = global.get(name).data();
        auto v = value.data();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= received[i];
      }
      upload.tensors.add(name, std::move(value), Tag::kShared);
    }
  }
  return upload;
}

std::vector<std::size_t> select_clients(std::size_t n, double fraction, Rng& rng) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ValidationError("client fraction must lie in (0, 1]");
  }
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  const auto m = std::min(n, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9)));
  if (m == n) return all;
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t j = k + rng.below(n - k);
    std::swap(all[k], all[j]);
  }
  all.resize(m);
  std::sort(all.begin(), all.end());
  return all;
}

// ---------------------------------------------------------------------------
// Aggregation

bool aggregate(std::span<const Upload> uploads, ServerState& server, const ArchConfig& arch,
               bool weighted) {
  std::vector<const Upload*> active;
  for (const auto& u : uploads) {
    if (!u.skip) active.push_back(&u);
  }
  if (active.empty()) return false;
  // Summation in client-id order: permuting the uploads changes nothing.
  std::sort(active.begin(), active.end(),
            [](const Upload* a, const Upload* b) { return a->client_id < b->client_id; });
  for (const Upload* u : active) {
    for (const auto& [name, entry] : u->tensors) {
      if (entry.tag != Tag::kShared) {
        throw ValidationError("upload from client " + std::to_string(u->client_id) +
                              " carries non-shared tensor '" + name + "'");
      }
      if (!server.global.contains(name) || server.global.tag(name) != Tag::kShared) {
        throw ValidationError("upload tensor '" + name + "' is not a shared server tensor");
      }
    }
  }

  std::vector<std::string> shared;
  for (const auto& [name, entry] : server.global) {
    if (entry.tag == Tag::kShared) shared.push_back(name);
  }
  std::vector<const Upload*> members;
  for (const auto& name : shared) {
    members.clear();
    const auto key = tensor_names::group_of(name, arch);
    for (const Upload* u : active) {
      if (key && (key->attribute >= u->groups.size() || u->groups[key->attribute] != key->group)) {
        continue;
      }
      members.push_back(u);
    }
    if (members.empty()) continue;

    Tensor& target = server.global.get_mutable(name);
    Tensor sum(target.rows(), target.cols());
    double total_weight = 0.0;
    for (const Upload* u : members) {
      const Tensor* value = u->tensors.find(name);
      if (!value) {
        throw ValidationError("client " + std::to_string(u->client_id) + " did not upload '" + name + "'");
      }
      if (!value->same_shape(target)) throw ShapeError("upload shape mismatch for '" + name + "'");
      const double w = weighted ? static_cast<double>(u->example_count) : 1.0;
      total_weight += w;
      auto s = sum.data();
      const auto v = value->data();
      if (weighted) {
        for (std::size_t i = 0; i < s.size(); ++i) s[i] += w * v[i];
      } else {
        for (std::size_t i = 0; i < s.size(); ++i) s[i] += v[i];
      }
    }
    if (!(total_weight > 0.0)) continue;
    auto s = sum.data();
    for (auto& x : s) x /= total_weight;
    if (members.front()->mode == UploadMode::kDelta) {
      auto t = target.data();
      for (std::size_t i = 0; i < t.size(); ++i) t[i] += s[i];
    } else {
      target = std::move(sum);
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Evaluation and the round loop

EvalSummary evaluate_global(const Model& model, const ServerState& server,
                            std::span<const ClientState> clients, Split split, bool parallel) {
  const auto per_client =
      parallel ? kernels::evaluate_clients_parallel(model, server.global, clients, split)
               : kernels::evaluate_clients_serial(model, server.global, clients, split);
  EvalSummary s;
  double auc_sum = 0.0, precision_sum = 0.0;
  bool any_data = false;
  for (const auto& m : per_client) {
    if (!m.has_data) continue;
    any_data = true;
    if (m.auc) {
      auc_sum += *m.auc;
      ++s.auc_clients;
    } else {
      ++s.auc_excluded;
    }
    if (m.precision) {
      precision_sum += *m.precision;
      ++s.precision_clients;
    } else {
      ++s.precision_excluded;
    }
  }
  if (!any_data) {
    throw ValidationError(std::string("no client has '") + split_name(split) + "' examples");
  }
  if (s.auc_clients == 0 && s.precision_clients == 0) {
    throw MetricError(std::string("every client was excluded on '") + split_name(split) + "'");
  }
  if (s.auc_clients) s.auc = auc_sum / static_cast<double>(s.auc_clients);
  if (s.precision_clients) s.precision = precision_sum / static_cast<double>(s.precision_clients);
  return s;
}

FederatedRun run_federated(const Model& model, ServerState initial,
                           std::vector<ClientState> clients, const FedConfig& config,
                           const NoiseConfig& noise, std::uint64_t seed,
                           const RoundObserver& observer) {
  if (config.rounds < 0) throw ValidationError("rounds must be >= 0");
  FederatedRun run;
  run.server = std::move(initial);
  run.clients = std::move(clients);
  const std::size_t per_client = count_params(run.server.global, TagFilter::only(Tag::kShared));

  for (int r = 0; r < config.rounds; ++r) {
    const auto start = std::chrono::steady_clock::now();
    Rng selection_rng = Rng::stream(seed, streams::kSelection, static_cast<std::uint64_t>(r));
    const auto selected = select_clients(run.clients.size(), config.client_fraction, selection_rng);

    const auto uploads =
        config.parallel
            ? kernels::train_clients_parallel(model, run.server.global, run.clients, selected,
                                              config.local, noise)
            : kernels::train_clients_serial(model, run.server.global, run.clients, selected,
                                            config.local, noise);
    RoundReport report;
    report.round = r + 1;
    report.participants = selected.size();
    report.skipped = static_cast<std::size_t>(
        std::count_if(uploads.begin(), uploads.end(), [](const Upload& u) { return u.skip; }));
    report.uploaded_scalars_per_client = per_client;
    // Barrier: every upload of the round exists before the server mutates.
    aggregate(uploads, run.server, model.arch(), config.weighted);
    run.server.round = r + 1;

    if (config.evaluate_rounds) {
      try {
        report.val = evaluate_global(model, run.server, run.clients, Split::kFedVal, config.parallel);
      } catch (const Error&) {
        report.val = {};
      }
    }
    report.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    run.server.history.push_back(report);
    run.reports.push_back(report);
    if (observer) observer(report, run.server, run.clients);
  }
  return run;
}

// ---------------------------------------------------------------------------
// Setup

ParamSet warm_start(ParamSet init, const ParamSet& base) {
  for (const auto& [name, entry] : base) {
    const bool is_base = name.starts_with("ue.") || name.starts_with("ie.") || name.starts_with("mlp.");
    if (!is_base) continue;
    if (!init.contains(name)) throw ShapeError("warm start: model has no tensor '" + name + "'");
    if (!init.get(name).same_shape(entry.value)) {
      throw ShapeError("warm start: shape mismatch for '" + name + "'");
    }
    init.put(name, entry.value, init.tag(name));
  }
  return init;
}

ServerState make_server(const ParamSet& tagged) {
  ServerState s;
  for (const auto& [name, entry] : tagged) {
    if (entry.tag != Tag::kPrivate) s.global.add(name, entry.value, entry.tag);
  }
  return s;
}

namespace {

std::vector<Example> user_split_examples(const Dataset& dataset, const GroupAssignment& groups,
                                         std::span<const Interaction> log, bool native,
                                         int neg_ratio, const std::vector<int>& universe,
                                         const std::set<int>& interacted, Rng& rng) {
  std::vector<Example> out;
  if (native) {
    for (const auto& x : log) out.push_back(make_example(dataset, groups, x.user, x.item, x.label));
    return out;
  }
  for (const auto& pair : sample_negatives(log, universe, neg_ratio, rng, &interacted)) {
    out.push_back(make_example(dataset, groups, pair.user, pair.item, pair.label));
  }
  return out;
}

}  // namespace

std::vector<Example> split_examples(const Dataset& dataset, const GroupAssignment& groups,
                                    Split split, int neg_ratio, std::uint64_t seed) {
  const bool native = dataset.has_native_negatives();
  const auto universe = dataset.item_ids();
  std::map<int, std::vector<Interaction>> by_user;
  std::map<int, std::set<int>> seen;
  for (const auto& x : dataset.interactions()) {
    seen[x.user].insert(x.item);
    if (x.split == split) by_user[x.user].push_back(x);
  }
  std::vector<Example> out;
  for (const auto& [user, log] : by_user) {
    Rng rng = Rng::stream(seed, streams::kNegatives,
                          static_cast<std::uint64_t>(user) * 8 + static_cast<int>(split));
    auto part = user_split_examples(dataset, groups, log, native, neg_ratio, universe, seen[user], rng);
    out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return out;
}

std::vector<ClientState> build_clients(const Dataset& dataset, const GroupAssignment& groups,
                                       const ParamSet& tagged, int neg_ratio,
                                       std::uint64_t seed) {
  const bool native = dataset.has_native_negatives();
  const auto universe = dataset.item_ids();
  struct Logs {
    std::vector<Interaction> train, val, test;
  };
  std::map<int, Logs> by_user;
  std::map<int, std::set<int>> seen;
  for (const auto& x : dataset.interactions()) {
    seen[x.user].insert(x.item);
    switch (x.split) {
      case Split::kFedTrain: by_user[x.user].train.push_back(x); break;
      case Split::kFedVal: by_user[x.user].val.push_back(x); break;
      case Split::kFedTest: by_user[x.user].test.push_back(x); break;
      default: break;
    }
  }
  const ParamSet private_init = tagged.filtered(TagFilter::only(Tag::kPrivate));
  std::vector<ClientState> clients;
  clients.reserve(by_user.size());
  for (const auto& [user, logs] : by_user) {
    ClientState c;
    c.user_id = user;
    if (groups.total() > 0) c.groups = groups.groups_of(user);
    const auto u = static_cast<std::uint64_t>(user);
    Rng neg = Rng::stream(seed, streams::kNegatives, u);
    c.train = user_split_examples(dataset, groups, logs.train, native, neg_ratio, universe, seen[user], neg);
    c.val = user_split_examples(dataset, groups, logs.val, native, neg_ratio, universe, seen[user], neg);
    c.test = user_split_examples(dataset, groups, logs.test, native, neg_ratio, universe, seen[user], neg);
    c.private_params = private_init;
    c.train_rng = Rng::stream(seed, streams::kClientTrain, u);
    c.noise_rng = Rng::stream(seed, streams::kClientNoise, u);
    clients.push_back(std::move(c));
  }
  return clients;
}

void save_checkpoint(const std::filesystem::path& dir, const ServerState& server,
                     std::span<const ClientState> clients) {
  std::filesystem::create_directories(dir);
  save_params(server.global, dir / "server.params");
  for (const auto& c : clients) {
    save_params(c.private_params, dir / ("client_" + std::to_string(c.user_id) + ".params"));
  }
}

void load_checkpoint(const std::filesystem::path& dir, ServerState& server,
                     std::span<ClientState> clients) {
  server.global = load_params(dir / "server.params");
  for (auto& c : clients) {
    c.private_params = load_params(dir / ("client_" + std::to_string(c.user_id) + ".params"));
  }
}

}  // namespace fedadapt
