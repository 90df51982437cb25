#include "fedadapt/experiment.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>

#include <json.hpp>

#include "fedadapt/errors.hpp"
#include "fedadapt/metrics.hpp"

namespace fedadapt {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

const std::set<std::string, std::less<>>& known_keys() {
  static const std::set<std::string, std::less<>> keys{
      "data.source", "data.users", "data.items", "data.interactions", "data.pretrain_fraction",
      "data.neg_ratio", "data.group_attrs", "data.holdout",
      "synth.n_users", "synth.n_items", "synth.user_attrs", "synth.item_attrs",
      "synth.item_id_attr", "synth.beta", "synth.interactions_per_user", "synth.base_logit",
      "synth.affinity_scale", "synth.popularity_scale", "synth.user_noise", "synth.seed",
      "arch.embed_dim", "arch.mlp_hidden", "arch.rank", "arch.gate_hidden", "arch.adapter_layers",
      "pretrain.epochs", "pretrain.lr", "pretrain.batch",
      "fed.policy", "fed.rounds", "fed.fraction", "fed.local_epochs", "fed.lr", "fed.batch",
      "fed.weighted", "fed.upload_mode", "fed.parallel", "fed.checkpoint_every", "fed.init",
      "ldp.enabled", "ldp.intensity",
      "distill.embed_dim", "distill.mlp_hidden", "distill.epochs", "distill.lr", "distill.batch",
      "distill.alpha", "distill.teacher",
      "ablate.arms", "ablate.seeds", "eval.checkpoint", "eval.split", "seed", "out"};
  return keys;
}

// Synth keys may be written with or without their section.
std::string synth_key(const KeyValueConfig& kv, std::string_view field) {
  std::string bare(field);
  return kv.contains(bare) ? bare : "synth." + bare;
}

void check_synth_key_conflicts(const KeyValueConfig& kv) {
  for (const auto& [key, value] : kv.entries()) {
    if (known_keys().contains(key)) continue;
    if (known_keys().contains("synth." + key)) {
      if (kv.contains("synth." + key)) {
        throw ConfigError("'" + key + "' given both with and without the synth. prefix");
      }
      continue;
    }
    throw ConfigError("unknown key '" + key + "'");
  }
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  return out;
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
}

// Metric values are reported in units of 1e-2.
Json percent(const std::optional<double>& v) {
  return v ? Json(*v * 100.0) : Json(nullptr);
}

Json eval_json(const EvalSummary& s) {
  Json j;
  j["auc"] = percent(s.auc);
  j["precision"] = percent(s.precision);
  j["auc_clients"] = s.auc_clients;
  j["auc_excluded"] = s.auc_excluded;
  j["precision_clients"] = s.precision_clients;
  j["precision_excluded"] = s.precision_excluded;
  return j;
}

void log(const ExperimentConfig& c, const std::string& line) {
  if (!c.quiet) std::cerr << line << '\n';
}

std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

// Pretrained base parameters: a given checkpoint or a fresh pretraining run.
ParamSet obtain_base(const ExperimentConfig& c, const PreparedData& data,
                     const std::optional<fs::path>& path) {
  if (path) return load_params(*path);
  PretrainConfig pc = c.pretrain;
  pc.seed = c.seed;
  return pretrain(Model(base_arch(c, data.dataset)), data.pretrain_train, pc).params;
}

ScoredBatch score(const Model& model, const ParamSet& params, std::span<const Example> data) {
  ScoredBatch b;
  b.scores = model.predict_batch(params, data);
  for (const auto& e : data) b.labels.push_back(e.label > 0.5 ? 1 : 0);
  return b;
}

}  // namespace

ExperimentConfig ExperimentConfig::from(const KeyValueConfig& kv) {
  check_synth_key_conflicts(kv);
  ExperimentConfig c;
  if (!kv.contains("seed")) throw ConfigError("'seed' is required");
  const long long seed = kv.get_int("seed", 0);
  if (seed < 0) throw ConfigError("seed must be >= 0");
  c.seed = static_cast<std::uint64_t>(seed);

  c.source = kv.get_string("data.source", c.source);
  if (c.source != "synth" && c.source != "csv") {
    throw ConfigError("data.source must be 'synth' or 'csv', got '" + c.source + "'");
  }
  if (c.source == "csv") {
    c.users_path = kv.require_string("data.users");
    c.items_path = kv.require_string("data.items");
    c.interactions_path = kv.require_string("data.interactions");
  }
  c.pretrain_fraction = kv.get_double("data.pretrain_fraction", c.pretrain_fraction);
  c.neg_ratio = static_cast<int>(kv.get_int("data.neg_ratio", c.neg_ratio));
  if (c.neg_ratio < 0) throw ConfigError("data.neg_ratio must be >= 0");
  c.group_attrs = kv.get_string_list("data.group_attrs", c.group_attrs);
  c.holdout_fraction = kv.get_double("data.holdout", c.holdout_fraction);
  if (!(c.holdout_fraction >= 0.0 && c.holdout_fraction < 1.0)) {
    throw ConfigError("data.holdout must lie in [0, 1)");
  }

  auto& s = c.synth;
  s.n_users = static_cast<int>(kv.get_int(synth_key(kv, "n_users"), s.n_users));
  s.n_items = static_cast<int>(kv.get_int(synth_key(kv, "n_items"), s.n_items));
  s.user_attrs = kv.get_int_list(synth_key(kv, "user_attrs"), s.user_attrs);
  s.item_attrs = kv.get_int_list(synth_key(kv, "item_attrs"), s.item_attrs);
  s.item_id_attr = kv.get_bool(synth_key(kv, "item_id_attr"), s.item_id_attr);
  s.beta = kv.get_double(synth_key(kv, "beta"), s.beta);
  s.interactions_per_user =
      static_cast<int>(kv.get_int(synth_key(kv, "interactions_per_user"), s.interactions_per_user));
  s.base_logit = kv.get_double(synth_key(kv, "base_logit"), s.base_logit);
  s.affinity_scale = kv.get_double(synth_key(kv, "affinity_scale"), s.affinity_scale);
  s.popularity_scale = kv.get_double(synth_key(kv, "popularity_scale"), s.popularity_scale);
  s.user_noise = kv.get_double(synth_key(kv, "user_noise"), s.user_noise);
  c.synth_seed_set = kv.contains(synth_key(kv, "seed"));
  s.seed = c.synth_seed_set ? static_cast<std::uint64_t>(kv.get_int(synth_key(kv, "seed"), 0)) : c.seed;

  c.embed_dim = static_cast<int>(kv.get_int("arch.embed_dim", c.embed_dim));
  c.mlp_hidden = kv.get_int_list("arch.mlp_hidden", c.mlp_hidden);
  c.adapter_rank = static_cast<int>(kv.get_int("arch.rank", c.adapter_rank));
  c.gate_hidden = static_cast<int>(kv.get_int("arch.gate_hidden", c.gate_hidden));
  const auto layers = kv.get_string("arch.adapter_layers", "all");
  if (layers == "all") {
    c.adapter_layers = AdapterLayers::kAll;
  } else if (layers == "hidden") {
    c.adapter_layers = AdapterLayers::kHidden;
  } else {
    throw ConfigError("arch.adapter_layers must be 'all' or 'hidden'");
  }

  c.pretrain.epochs = static_cast<int>(kv.get_int("pretrain.epochs", c.pretrain.epochs));
  c.pretrain.lr = kv.get_double("pretrain.lr", c.pretrain.lr);
  c.pretrain.batch_size = static_cast<int>(kv.get_int("pretrain.batch", c.pretrain.batch_size));

  c.policy = kv.get_string("fed.policy", c.policy);
  (void)PartitionPolicy::preset(c.policy);
  c.fed.rounds = static_cast<int>(kv.get_int("fed.rounds", c.fed.rounds));
  c.fed.client_fraction = kv.get_double("fed.fraction", c.fed.client_fraction);
  c.fed.local.epochs = static_cast<int>(kv.get_int("fed.local_epochs", c.fed.local.epochs));
  c.fed.local.lr = kv.get_double("fed.lr", c.fed.local.lr);
  c.fed.local.batch_size = static_cast<int>(kv.get_int("fed.batch", c.fed.local.batch_size));
  c.fed.weighted = kv.get_bool("fed.weighted", c.fed.weighted);
  const auto mode = kv.get_string("fed.upload_mode", "full");
  if (mode == "full") {
    c.fed.local.upload = UploadMode::kFull;
  } else if (mode == "delta") {
    c.fed.local.upload = UploadMode::kDelta;
  } else {
    throw ConfigError("fed.upload_mode must be 'full' or 'delta'");
  }
  c.fed.parallel = kv.get_bool("fed.parallel", c.fed.parallel);
  c.checkpoint_every = static_cast<int>(kv.get_int("fed.checkpoint_every", 0));
  if (auto p = kv.find("fed.init")) c.init_path = *p;

  c.ldp.enabled = kv.get_bool("ldp.enabled", false);
  c.ldp.intensity = kv.get_double("ldp.intensity", 0.0);
  if (c.ldp.intensity < 0.0) throw ConfigError("ldp.intensity must be >= 0");

  c.distill.embed_dim = static_cast<int>(kv.get_int("distill.embed_dim", c.distill.embed_dim));
  c.distill.mlp_hidden = kv.get_int_list("distill.mlp_hidden", c.distill.mlp_hidden);
  c.distill.epochs = static_cast<int>(kv.get_int("distill.epochs", c.distill.epochs));
  c.distill.lr = kv.get_double("distill.lr", c.distill.lr);
  c.distill.batch_size = static_cast<int>(kv.get_int("distill.batch", c.distill.batch_size));
  c.distill.alpha = kv.get_double("distill.alpha", c.distill.alpha);
  if (!(c.distill.alpha >= 0.0 && c.distill.alpha <= 1.0)) {
    throw ConfigError("distill.alpha must lie in [0, 1]");
  }
  c.distill.seed = c.seed;
  if (auto p = kv.find("distill.teacher")) c.teacher_path = *p;

  c.arms = kv.get_string_list("ablate.arms", c.arms);
  c.ablate_seeds = static_cast<int>(kv.get_int("ablate.seeds", c.ablate_seeds));
  if (c.ablate_seeds < 1) throw ConfigError("ablate.seeds must be >= 1");

  if (auto p = kv.find("eval.checkpoint")) c.eval_checkpoint = *p;
  const auto split = kv.get_string("eval.split", "test");
  if (split == "test") {
    c.eval_split = Split::kFedTest;
  } else if (split == "val") {
    c.eval_split = Split::kFedVal;
  } else {
    throw ConfigError("eval.split must be 'val' or 'test'");
  }

  c.out = kv.get_string("out", c.out.string());
  return c;
}

PreparedData prepare_data(const ExperimentConfig& c) {
  PreparedData d;
  Dataset raw = c.source == "synth"
                    ? synth_generate(c.synth)
                    : load_dataset(c.users_path, c.items_path, c.interactions_path);
  d.dataset = split_per_user_chronological(split_pretrain_federated(raw, c.pretrain_fraction, c.seed),
                                           &d.chrono);
  d.groups = assign_groups(d.dataset, c.group_attrs);
  auto all = split_examples(d.dataset, d.groups, Split::kPretrain, c.neg_ratio, c.seed);
  if (all.empty()) throw ValidationError("pretrain split is empty");

  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::stream(c.seed, streams::kHoldout, 0);
  rng.shuffle(std::span<std::size_t>(order));
  const auto n_holdout = static_cast<std::size_t>(c.holdout_fraction * static_cast<double>(all.size()));
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_holdout ? d.pretrain_holdout : d.pretrain_train).push_back(std::move(all[order[i]]));
  }
  return d;
}

ArchConfig base_arch(const ExperimentConfig& c, const Dataset& dataset) {
  ArchConfig a;
  a.user_schema = dataset.user_schema();
  a.item_schema = dataset.item_schema();
  a.embed_dim = c.embed_dim;
  a.mlp_hidden = c.mlp_hidden;
  a.adapter_rank = c.adapter_rank;
  a.gate_hidden = c.gate_hidden;
  a.adapter_layers = c.adapter_layers;
  a.validate();
  return a;
}

ArmSpec arm_spec(const ExperimentConfig& c, const Dataset& dataset, std::string_view arm) {
  ArchConfig a = base_arch(c, dataset);
  auto personalized = [&](bool user, bool groups, GateMode gate) {
    a.user_adapter = user;
    if (groups) a.group_attributes = c.group_attrs;
    a.gate = gate;
  };
  std::string policy = "fedpa";
  if (arm == "fedpa") {
    personalized(true, true, GateMode::kAdaptive);
  } else if (arm == "no_warm" || arm == "fedpa_no_warm") {
    personalized(true, true, GateMode::kAdaptive);
    policy = "fedpa_no_warm";
  } else if (arm == "no_adapter" || arm == "full") {
    policy = "full";
  } else if (arm == "user_only") {
    personalized(true, false, GateMode::kAdaptive);
  } else if (arm == "group_only") {
    personalized(false, true, GateMode::kAdaptive);
  } else if (arm == "no_gate_uniform") {
    personalized(true, true, GateMode::kUniform);
  } else {
    throw ConfigError("unknown arm or policy '" + std::string(arm) + "'");
  }
  a.validate();
  return {std::move(a), PartitionPolicy::preset(policy)};
}

ArmResult run_arm(const ExperimentConfig& c, const PreparedData& data, std::string_view arm,
                  const ParamSet* base, const RoundObserver& observer) {
  ArmSpec spec = arm_spec(c, data.dataset, arm);
  const Model model(spec.arch);
  ParamSet params = model.init_params(c.seed);
  if (spec.policy.warm_start) {
    if (!base) throw ValidationError("arm '" + std::string(arm) + "' needs a pretrained model");
    params = warm_start(std::move(params), *base);
  }
  spec.policy.apply(params);

  const GroupAssignment none;
  const GroupAssignment& groups = spec.arch.group_attributes.empty() ? none : data.groups;
  auto clients = build_clients(data.dataset, groups, params, c.neg_ratio, c.seed);
  if (clients.empty()) throw ValidationError("no federated clients");

  ArmResult r;
  r.arm = std::string(arm);
  r.trainable_params = count_params(params, TagFilter::trainable());
  r.uploaded_scalars_per_client = count_params(params, TagFilter::only(Tag::kShared));
  r.run = run_federated(model, make_server(params), std::move(clients), c.fed, c.ldp, c.seed, observer);
  r.test = evaluate_global(model, r.run.server, r.run.clients, Split::kFedTest, c.fed.parallel);
  return r;
}

void cmd_synth(const ExperimentConfig& c) {
  const Dataset d = synth_generate(c.synth);
  make_dirs(c.out);
  save_dataset(d, c.out);
  log(c, "wrote " + std::to_string(d.users().size()) + " users, " +
             std::to_string(d.items().size()) + " items, " +
             std::to_string(d.interactions().size()) + " interactions to " + c.out.string());
}

void cmd_pretrain(const ExperimentConfig& c) {
  const PreparedData data = prepare_data(c);
  const Model model(base_arch(c, data.dataset));
  PretrainConfig pc = c.pretrain;
  pc.seed = c.seed;
  const PretrainResult r = pretrain(model, data.pretrain_train, pc);
  make_dirs(c.out);
  save_params(r.params, c.out / "pretrain.params");
  {
    auto out = open_out(c.out / "pretrain_loss.csv");
    out << "epoch,loss\n";
    for (std::size_t e = 0; e < r.loss_curve.size(); ++e) out << e << ',' << fixed4(r.loss_curve[e]) << '\n';
  }
  Json j;
  j["epochs"] = pc.epochs;
  j["examples"] = data.pretrain_train.size();
  j["params"] = count_params(r.params, TagFilter::all());
  j["initial_loss"] = r.loss_curve.front();
  j["final_loss"] = r.loss_curve.back();
  if (!data.pretrain_holdout.empty()) {
    const auto b = score(model, r.params, data.pretrain_holdout);
    j["holdout_auc"] = auc(b) * 100.0;
  }
  open_out(c.out / "pretrain_summary.json") << j.dump(2) << '\n';
  log(c, "pretrain loss " + fixed4(r.loss_curve.front()) + " -> " + fixed4(r.loss_curve.back()));
}

void cmd_distill(const ExperimentConfig& c) {
  const PreparedData data = prepare_data(c);
  if (data.pretrain_holdout.empty()) throw ConfigError("distillation needs data.holdout > 0");
  const Model teacher(base_arch(c, data.dataset));
  const ParamSet teacher_params = obtain_base(c, data, c.teacher_path);
  const DistillResult r = distill(teacher, teacher_params, data.pretrain_train, c.distill,
                                  data.pretrain_holdout);
  const Model student(r.arch);
  make_dirs(c.out);
  save_params(r.params, c.out / "student.params");
  {
    auto out = open_out(c.out / "distill_curve.csv");
    out << "epoch,loss,holdout_mse\n";
    for (std::size_t e = 0; e < r.loss_curve.size(); ++e) {
      out << e << ',' << fixed4(r.loss_curve[e]) << ',' << r.holdout_mse[e] << '\n';
    }
  }
  const auto t = score(teacher, teacher_params, data.pretrain_holdout);
  const auto s = score(student, r.params, data.pretrain_holdout);
  Json j;
  j["teacher_params"] = count_params(teacher_params, TagFilter::all());
  j["student_params"] = count_params(r.params, TagFilter::all());
  j["student_embed_dim"] = r.arch.embed_dim;
  j["student_mlp_hidden"] = r.arch.mlp_hidden;
  j["alpha"] = c.distill.alpha;
  j["teacher_holdout_auc"] = auc(t) * 100.0;
  j["student_holdout_auc"] = auc(s) * 100.0;
  open_out(c.out / "distill_summary.json") << j.dump(2) << '\n';
  log(c, "student holdout AUC " + fixed4(auc(s) * 100.0) + " vs teacher " + fixed4(auc(t) * 100.0));
}

void cmd_federate(const ExperimentConfig& c) {
  const PreparedData data = prepare_data(c);
  const auto policy = PartitionPolicy::preset(c.policy);
  std::optional<ParamSet> base;
  if (policy.warm_start) base = obtain_base(c, data, c.init_path);

  make_dirs(c.out);
  auto rounds = open_out(c.out / "rounds.jsonl");
  const RoundObserver observer = [&](const RoundReport& r, const ServerState& server,
                                     std::span<const ClientState> clients) {
    Json j;
    j["round"] = r.round;
    j["participants"] = r.participants;
    j["val_auc"] = percent(r.val.auc);
    j["val_precision"] = percent(r.val.precision);
    j["uploaded_scalars_per_client"] = r.uploaded_scalars_per_client;
    j["seconds"] = r.seconds;
    rounds << j.dump() << '\n';
    rounds.flush();
    if (c.checkpoint_every > 0 && r.round % c.checkpoint_every == 0) {
      save_checkpoint(c.out / "checkpoints" / ("round_" + std::to_string(r.round)), server, clients);
    }
    log(c, "round " + std::to_string(r.round) + " val AUC " +
               (r.val.auc ? fixed4(*r.val.auc * 100.0) : std::string("n/a")));
  };
  const ArmResult r = run_arm(c, data, c.policy, base ? &*base : nullptr, observer);
  save_checkpoint(c.out / "final", r.run.server, r.run.clients);

  Json j;
  j["policy"] = c.policy;
  j["seed"] = c.seed;
  j["rounds"] = c.fed.rounds;
  j["clients"] = r.run.clients.size();
  j["dropped_users"] = data.chrono.dropped_users.size();
  j["trainable_params"] = r.trainable_params;
  j["uploaded_scalars_per_client"] = r.uploaded_scalars_per_client;
  j["ldp_intensity"] = c.ldp.enabled ? c.ldp.intensity : 0.0;
  j["test"] = eval_json(r.test);
  open_out(c.out / "summary.json") << j.dump(2) << '\n';
  log(c, "fed-test AUC " + (r.test.auc ? fixed4(*r.test.auc * 100.0) : std::string("n/a")));
}

void cmd_ablate(const ExperimentConfig& c) {
  const auto& valid = ablation_arms();
  for (const auto& arm : c.arms) {
    if (std::find(valid.begin(), valid.end(), arm) == valid.end()) {
      throw ConfigError("unknown arm '" + arm + "'");
    }
  }
  if (c.arms.empty()) throw ConfigError("no ablation arms given");
  struct Sums {
    double auc = 0.0, precision = 0.0;
    int auc_n = 0, precision_n = 0;
    std::size_t trainable = 0, uploaded = 0;
  };
  std::vector<Sums> sums(c.arms.size());
  for (int k = 0; k < c.ablate_seeds; ++k) {
    ExperimentConfig sc = c;
    sc.seed = c.seed + static_cast<std::uint64_t>(k);
    if (!sc.synth_seed_set) sc.synth.seed = sc.seed;
    const PreparedData data = prepare_data(sc);
    std::optional<ParamSet> base;
    for (std::size_t a = 0; a < c.arms.size(); ++a) {
      if (arm_spec(sc, data.dataset, c.arms[a]).policy.warm_start && !base) {
        base = obtain_base(sc, data, sc.init_path);
      }
      const ArmResult r = run_arm(sc, data, c.arms[a], base ? &*base : nullptr);
      if (r.test.auc) {
        sums[a].auc += *r.test.auc;
        ++sums[a].auc_n;
      }
      if (r.test.precision) {
        sums[a].precision += *r.test.precision;
        ++sums[a].precision_n;
      }
      sums[a].trainable = r.trainable_params;
      sums[a].uploaded = r.uploaded_scalars_per_client;
      log(c, "seed " + std::to_string(sc.seed) + " " + c.arms[a] + " AUC " +
                 (r.test.auc ? fixed4(*r.test.auc * 100.0) : std::string("n/a")));
    }
  }
  make_dirs(c.out);
  auto out = open_out(c.out / "ablation.csv");
  out << "arm,auc,precision,trainable_params,uploaded_scalars_per_round\n";
  // A metric undefined on every seed is written as nan.
  auto mean = [](double sum, int n) { return n ? fixed4(sum / n * 100.0) : std::string("nan"); };
  for (std::size_t a = 0; a < c.arms.size(); ++a) {
    out << c.arms[a] << ',' << mean(sums[a].auc, sums[a].auc_n) << ','
        << mean(sums[a].precision, sums[a].precision_n) << ',' << sums[a].trainable << ','
        << sums[a].uploaded << '\n';
  }
}

void cmd_eval(const ExperimentConfig& c) {
  const PreparedData data = prepare_data(c);
  ArmSpec spec = arm_spec(c, data.dataset, c.policy);
  const Model model(spec.arch);
  ParamSet params = model.init_params(c.seed);
  spec.policy.apply(params);
  ServerState server = make_server(params);
  const GroupAssignment none;
  const GroupAssignment& groups = spec.arch.group_attributes.empty() ? none : data.groups;
  auto clients = build_clients(data.dataset, groups, params, c.neg_ratio, c.seed);
  const fs::path dir = c.eval_checkpoint.value_or(c.out / "final");
  load_checkpoint(dir, server, clients);
  const EvalSummary s = evaluate_global(model, server, clients, c.eval_split, c.fed.parallel);
  Json j;
  j["checkpoint"] = dir.string();
  j["split"] = split_name(c.eval_split);
  j["metrics"] = eval_json(s);
  make_dirs(c.out);
  open_out(c.out / "eval.json") << j.dump(2) << '\n';
  if (!c.quiet) std::cout << j.dump() << '\n';
}

}  // namespace fedadapt
