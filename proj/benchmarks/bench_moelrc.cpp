#include "moelrc/compensator.hpp"
#include "moelrc/offload_sim.hpp"
#include "moelrc/moe_engine.hpp"
#include "moelrc/presets.hpp"
#include "moelrc/quantizer.hpp"
#include "moelrc/svd.hpp"
#include "moelrc/synthetic.hpp"

#include <benchmark/benchmark.h>

using namespace moelrc;

static void BM_Quantize(benchmark::State& state) {
  const Matrix w = student_t_matrix(1, state.range(0), state.range(0) * 2, 4.0);
  QuantConfig cfg;
  cfg.hqq_iters = static_cast<int>(state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(quantize(w, cfg));
  state.SetItemsProcessed(state.iterations() * w.size());
}
BENCHMARK(BM_Quantize)->Args({64, 0})->Args({64, 20})->Args({256, 0})->Args({256, 20});

static void BM_TruncatedSvd(benchmark::State& state) {
  const Matrix e = student_t_matrix(2, state.range(0), state.range(0) * 2, kGaussianDof);
  for (auto _ : state) benchmark::DoNotOptimize(truncated_svd(e, state.range(1)));
}
BENCHMARK(BM_TruncatedSvd)->Args({64, 16})->Args({128, 32})->Unit(benchmark::kMillisecond);

static void BM_BuildCompensator(benchmark::State& state) {
  const Matrix w = student_t_matrix(3, 128, 256, 5.0);
  const QuantizedMatrix qm = quantize(w, QuantConfig{});
  for (auto _ : state) benchmark::DoNotOptimize(build_compensator(w, qm, state.range(0)));
}
BENCHMARK(BM_BuildCompensator)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

static void BM_Simulate(benchmark::State& state) {
  const ModelDims dims = dims_preset("mixtral-8x7b");
  const auto gates = gen_synthetic_gates(4, 64, dims.num_layers, dims.num_experts, 1.4);
  ForwardConfig f;
  const RoutingTrace trace = trace_tokens(gates, gen_tokens(5, state.range(0), 64), f);
  TransferPlan p;
  p.expert_bits = 2;
  p.compensated_top_n = 1;
  p.uniform_rank = 32;
  OffloadSimulator sim(dims, SystemConfig{}, p);
  for (auto _ : state) benchmark::DoNotOptimize(sim.simulate(trace, {256, state.range(0), true}));
}
BENCHMARK(BM_Simulate)->Arg(512)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
