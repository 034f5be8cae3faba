// Serial references against their OpenMP counterparts. Run with OMP_NUM_THREADS set to
// compare scaling; the pairs produce bit-identical results.

#include <benchmark/benchmark.h>

#include <vector>

#include "esoafl/channel.hpp"
#include "esoafl/jcp.hpp"
#include "esoafl/quantizer.hpp"

namespace {

using namespace esoafl;

std::vector<std::vector<double>> inputs(int k, std::size_t d) {
  auto s = rng::Key(1).stream();
  std::vector<std::vector<double>> out(static_cast<std::size_t>(k), std::vector<double>(d));
  for (auto& x : out)
    for (double& v : x) v = s.normal();
  return out;
}

template <bool Parallel>
void BM_AirAggregate(benchmark::State& state) {
  const auto in = inputs(10, static_cast<std::size_t>(state.range(0)));
  const auto cfg = channel::config_from_targets(1.0, 0.2, 0.77, 15.0);
  const auto pol = channel::make_policy(cfg, 0.5);
  std::uint64_t round = 0;
  for (auto _ : state) {
    const rng::Key key = rng::Key(7).child(round++);
    auto out = Parallel ? channel::air_aggregate(in, cfg, pol, key) : channel::air_aggregate_reference(in, cfg, pol, key);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <bool Parallel>
void BM_Quantize(benchmark::State& state) {
  const auto in = inputs(1, static_cast<std::size_t>(state.range(0)));
  const auto scale = quantizer::fit_common_scale(in, 4);
  std::uint64_t round = 0;
  for (auto _ : state) {
    const auto stream = rng::Key(3).child(round++).stream();
    auto q = Parallel ? quantizer::quantize(in[0], scale, stream) : quantizer::quantize_reference(in[0], scale, stream);
    benchmark::DoNotOptimize(q.indices.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <bool Parallel>
void BM_GridSearch(benchmark::State& state) {
  jcp::JcpProblem prob;
  prob.a0 = 60;
  prob.b0 = 10;
  prob.c0 = 5;
  prob.q = 0.2;
  prob.rho = 0.0523;
  prob.comm_time = 0.17;
  prob.comp_energy = 0.03;
  const auto ps = jcp::probability_grid(prob, 0.001);
  for (auto _ : state) {
    auto r = Parallel ? jcp::grid_search(prob, ps) : jcp::grid_search_reference(prob, ps);
    benchmark::DoNotOptimize(r.objective);
  }
}

}  // namespace

BENCHMARK(BM_AirAggregate<false>)->Name("air_aggregate/serial")->Arg(1 << 14)->Arg(1 << 18);
BENCHMARK(BM_AirAggregate<true>)->Name("air_aggregate/openmp")->Arg(1 << 14)->Arg(1 << 18);
BENCHMARK(BM_Quantize<false>)->Name("quantize/serial")->Arg(1 << 16)->Arg(1 << 20);
BENCHMARK(BM_Quantize<true>)->Name("quantize/openmp")->Arg(1 << 16)->Arg(1 << 20);
BENCHMARK(BM_GridSearch<false>)->Name("grid_search/serial");
BENCHMARK(BM_GridSearch<true>)->Name("grid_search/openmp");

BENCHMARK_MAIN();
