#include <benchmark/benchmark.h>

#include <filesystem>

#include "hsnerf/compositing.hpp"
#include "hsnerf/encoding.hpp"
#include "hsnerf/synthetic.hpp"
#include "hsnerf/trainer.hpp"

namespace hsnerf {
namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor a = random_tensor({n, 64}, rng), b = random_tensor({64, 64}, rng);
  for (auto _ : state) {
    Tape tape;
    Tensor at = a;
    at.requires_grad = true;
    Var x = tape.leaf(at);
    Var y = ad::matmul(x, tape.constant(b));
    tape.backward(ad::sum(y));
    benchmark::DoNotOptimize(tape.grad(x).data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_Matmul)->Arg(1024)->Arg(16384);

void BM_GridEncode(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  ParameterStore store;
  const GridEncoding grid(GridConfig{}, store, "grid", rng);
  const Tensor pos = random_tensor({n, 3}, rng, 0.0, 1.0);
  for (auto _ : state) {
    Tape tape;
    store.zero_grad();
    tape.backward(ad::sum(grid.encode(tape, pos)));
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_GridEncode)->Arg(4096)->Arg(32768);

void BM_Composite(benchmark::State& state) {
  const std::size_t G = 256, K = 48, L = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  const Tensor sigma = random_tensor({G * K, L}, rng, 0.0, 4.0), color = random_tensor({G * K, L}, rng, 0.0, 1.0);
  const std::vector<double> deltas(G * K, 0.05);
  const Tensor bg({L}, 0.0);
  for (auto _ : state) {
    Tape tape;
    Tensor s = sigma;
    s.requires_grad = true;
    Var sv = tape.leaf(s);
    tape.backward(ad::sum(ad::composite(sv, tape.constant(color), deltas, K, bg)));
    benchmark::DoNotOptimize(tape.grad(sv).data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(G * K * L));
}
BENCHMARK(BM_Composite)->Arg(1)->Arg(16);

void BM_TrainStep(benchmark::State& state) {
  namespace fs = std::filesystem;
  static const Dataset data = [] {
    const fs::path dir = fs::temp_directory_path() / "hsnerf_bench_data";
    fs::remove_all(dir);
    SynthOptions o;
    o.ring.count = 8;
    o.width = o.height = 24;
    o.march_steps = 128;
    const SyntheticScene s = three_sphere_scene();
    write_synthetic_dataset(generate_synthetic_dataset(s, o), s, dir);
    return load_dataset(dir);
  }();
  TrainerOptions opts;
  opts.train.rays_per_step = static_cast<int>(state.range(0));
  opts.train.wavelengths_per_step = 4;
  Trainer trainer(data, opts);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.train_step().total);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TrainStep)->Arg(256)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace hsnerf

BENCHMARK_MAIN();
