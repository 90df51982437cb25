#include <exception>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedadapt/config.hpp"
#include "fedadapt/errors.hpp"
#include "fedadapt/experiment.hpp"

namespace {

struct Options {
  std::string config;
  std::optional<long long> seed;
  std::optional<std::string> out;
  std::vector<std::string> arms;
  bool quiet = false;
};

fedadapt::ExperimentConfig resolve(const Options& o) {
  auto kv = fedadapt::KeyValueConfig::load(o.config);
  if (o.seed) kv.set("seed", std::to_string(*o.seed));
  if (o.out) kv.set("out", *o.out);
  if (!o.arms.empty()) {
    std::string joined;
    for (const auto& a : o.arms) joined += (joined.empty() ? "" : ",") + a;
    kv.set("ablate.arms", joined);
  }
  auto c = fedadapt::ExperimentConfig::from(kv);
  c.quiet = o.quiet;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated adapter simulator"};
  app.require_subcommand(1);
  Options opts;

  const std::map<std::string, std::function<void(const fedadapt::ExperimentConfig&)>> commands{
      {"synth", fedadapt::cmd_synth},         {"pretrain", fedadapt::cmd_pretrain},
      {"distill", fedadapt::cmd_distill},     {"federate", fedadapt::cmd_federate},
      {"ablate", fedadapt::cmd_ablate},       {"eval", fedadapt::cmd_eval}};
  const std::map<std::string, std::string> help{
      {"synth", "generate a synthetic dataset"},
      {"pretrain", "train the base model on the pretrain users"},
      {"distill", "distill the pretrained model into a smaller student"},
      {"federate", "run federated adaptation"},
      {"ablate", "compare ablation arms"},
      {"eval", "evaluate a federated checkpoint"}};
  for (const auto& [name, fn] : commands) {
    auto* sub = app.add_subcommand(name, help.at(name));
    sub->add_option("--config", opts.config, "key = value config file")->required();
    sub->add_option("--seed", opts.seed, "overrides the config seed");
    sub->add_option("--out", opts.out, "output directory");
    sub->add_flag("--quiet", opts.quiet, "no progress output");
    if (name == "ablate") sub->add_option("--arms", opts.arms, "arms to run")->delimiter(',');
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    for (const auto& [name, fn] : commands) {
      if (app.got_subcommand(name)) fn(resolve(opts));
    }
  } catch (const fedadapt::Error& e) {
    std::cerr << "error: " << e.kind() << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
