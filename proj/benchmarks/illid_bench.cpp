#include <benchmark/benchmark.h>

#include "illid/diagnostics.hpp"
#include "illid/icnn.hpp"
#include "illid/models.hpp"
#include "illid/random.hpp"
#include "illid/tensor.hpp"

namespace {

using namespace illid;

// Forward pass with the Jacobian recursion over a batch of 256 points.
void BM_BrenierForward(benchmark::State& state) {
  const auto l = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const BrenierMap m(IcnnParams::random(l, 2, 10, 1.0, rng));
  const Tensor z = standard_normal(256, l, rng);
  for (auto _ : state) benchmark::DoNotOptimize(m(z));
  state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(BM_BrenierForward)->Arg(2)->Arg(8)->Arg(32);

// One minibatch ELBO plus backward pass on the toy mixture model.
void BM_ElboStep(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  ModelConfig cfg;
  Rng rng(2);
  auto model = make_model(cfg, rng);
  const Tensor x = scale(standard_normal(batch, 2, rng), 7.5);
  const auto params = model->parameters();
  for (auto _ : state) {
    ad::Tape tape;
    for (auto* p : params) tape.watch(*p);
    const auto g = tape.backward(ad::scale(ad::sum(model->elbo(x, rng)), -1.0 / static_cast<double>(batch)));
    benchmark::DoNotOptimize(g.wrt(*params.front()));
    for (auto* p : params) p->detach();
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(BM_ElboStep)->Arg(64)->Arg(256);

// Monte-Carlo relative Fisher divergence at 32 points.
void BM_RelativeFisher(benchmark::State& state) {
  const auto n_z = static_cast<std::size_t>(state.range(0));
  ModelConfig cfg;
  Rng rng(3);
  auto model = make_model(cfg, rng);
  const Tensor xs = scale(standard_normal(32, 2, rng), 7.5);
  for (auto _ : state) benchmark::DoNotOptimize(relative_fisher(*model, xs, n_z, rng));
}
BENCHMARK(BM_RelativeFisher)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
