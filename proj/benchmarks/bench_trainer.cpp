#include "urdg/trainer.hpp"

#include <benchmark/benchmark.h>

namespace {

using namespace urdg;

ExperimentConfig config_for(Method method) {
  ExperimentConfig c;
  c.method = method;
  if (method != Method::base) {
    c.alignment = Alignment::scl;
    c.decoupling = Decoupling::cid;
  }
  c.optimizer.kind = OptimizerKind::adam;
  c.optimizer.lr = 3e-3;
  c.generator.samples_per_class_per_domain = 6;
  return c;
}

void BM_TrainStep(benchmark::State& state) {
  const ExperimentConfig c = config_for(static_cast<Method>(state.range(0)));
  const Dataset data = generate(c.generator);
  const Dataset batch(data.begin(), data.begin() + c.batch_size);
  TrainState s = init_state(c);
  for (auto _ : state) benchmark::DoNotOptimize(train_step(s, batch, c).total);
  state.SetLabel(to_string(c.method));
}
BENCHMARK(BM_TrainStep)
    ->Arg(static_cast<int>(Method::base))
    ->Arg(static_cast<int>(Method::ur_mixup))
    ->Arg(static_cast<int>(Method::ur_jigen))
    ->Unit(benchmark::kMicrosecond);

}  // namespace
