// Serial reference vs OpenMP kernels for one federated round on the synthetic
// benchmark (100 federated clients, fedpa architecture).

#include <benchmark/benchmark.h>

#include <numeric>

#include "fedadapt/federation.hpp"
#include "fedadapt/kernels.hpp"

using namespace fedadapt;

namespace {

struct Setup {
  ArchConfig arch;
  ServerState server;
  std::vector<ClientState> clients;
  std::vector<std::size_t> selected;

  Setup() {
    SynthConfig sc;
    sc.seed = 1;
    const Dataset d = split_per_user_chronological(split_pretrain_federated(synth_generate(sc), 0.5, 1));
    const std::vector<std::string> attrs{"u0"};
    const GroupAssignment groups = assign_groups(d, attrs);
    arch.user_schema = d.user_schema();
    arch.item_schema = d.item_schema();
    arch.user_adapter = true;
    arch.group_attributes = attrs;
    arch.gate = GateMode::kAdaptive;
    ParamSet p = Model(arch).init_params(1);
    PartitionPolicy::preset("fedpa").apply(p);
    server = make_server(p);
    clients = build_clients(d, groups, p, 4, 1);
    selected.resize(clients.size());
    std::iota(selected.begin(), selected.end(), 0);
  }
};

Setup& setup() {
  static Setup s;
  return s;
}

template <bool Parallel>
void BM_TrainClients(benchmark::State& state) {
  Setup& s = setup();
  const Model model(s.arch);
  LocalTrainConfig cfg;
  cfg.epochs = 1;
  for (auto _ : state) {
    auto clients = s.clients;
    auto ups = Parallel ? kernels::train_clients_parallel(model, s.server.global, clients, s.selected, cfg, {})
                        : kernels::train_clients_serial(model, s.server.global, clients, s.selected, cfg, {});
    benchmark::DoNotOptimize(ups);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(s.clients.size()));
}

template <bool Parallel>
void BM_EvaluateClients(benchmark::State& state) {
  Setup& s = setup();
  const Model model(s.arch);
  for (auto _ : state) {
    auto m = Parallel ? kernels::evaluate_clients_parallel(model, s.server.global, s.clients, Split::kFedTest)
                      : kernels::evaluate_clients_serial(model, s.server.global, s.clients, Split::kFedTest);
    benchmark::DoNotOptimize(m);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(s.clients.size()));
}

}  // namespace

BENCHMARK(BM_TrainClients<false>)->Name("train_clients/serial")->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_TrainClients<true>)->Name("train_clients/openmp")->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_EvaluateClients<false>)->Name("evaluate_clients/serial")->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_EvaluateClients<true>)->Name("evaluate_clients/openmp")->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
