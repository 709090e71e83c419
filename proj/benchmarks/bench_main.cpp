#include <benchmark/benchmark.h>

#include <random>

#include "clcagan/detect_eval.hpp"
#include "clcagan/replay.hpp"
#include "clcagan/train.hpp"

using namespace clcagan;

namespace {

RowMatrix uniform(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(0, 1);
  RowMatrix m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = d(rng);
  return m;
}

ArchConfig arch_for(std::size_t feature_dim) {
  ArchConfig a;
  a.feature_dim = feature_dim;
  return a;
}

void BM_GeneratorForward(benchmark::State& state) {
  const auto dim = static_cast<std::size_t>(state.range(0));
  const auto net = init_network(arch_for(dim), 1);
  const auto x = uniform(64, static_cast<Eigen::Index>(dim), 2);
  for (auto _ : state) benchmark::DoNotOptimize(generator_forward(net.generator, x));
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_GeneratorForward)->Arg(32)->Arg(64);

void BM_DiscriminatorForward(benchmark::State& state) {
  const auto dim = static_cast<std::size_t>(state.range(0));
  const auto net = init_network(arch_for(dim), 1);
  const auto x = uniform(64, static_cast<Eigen::Index>(dim), 2);
  for (auto _ : state) benchmark::DoNotOptimize(discriminator_forward(net.discriminator, x));
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_DiscriminatorForward)->Arg(32)->Arg(64);

void BM_GeneratorStep(benchmark::State& state) {
  const auto dim = static_cast<std::size_t>(state.range(0));
  auto net = init_network(arch_for(dim), 1);
  const auto x = uniform(64, static_cast<Eigen::Index>(dim), 2);
  for (auto _ : state) {
    Tape tape;
    const auto in = tape.constant_ref(x);
    const auto g = generator_graph(tape, net.generator, in);
    const auto s = discriminator_graph(tape, std::as_const(net.discriminator), g);
    loss_generator(tape, s, loss_reconstruction(tape, g, in));
    for (auto* t : net.generator.tensors()) t->zero_grad();
    benchmark::DoNotOptimize(tape.forward_eval());
    tape.backprop();
  }
}
BENCHMARK(BM_GeneratorStep)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_Roc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> d(0, 1);
  std::vector<double> s(n);
  std::vector<std::uint8_t> l(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = d(rng);
    l[i] = i % 50 == 0;
  }
  for (auto _ : state) benchmark::DoNotOptimize(auc_suite(roc_3d(s, l, 512)));
}
BENCHMARK(BM_Roc)->Arg(4096)->Arg(22500);

void BM_KMeans(benchmark::State& state) {
  const auto x = uniform(state.range(0), 64, 4);
  for (auto _ : state) benchmark::DoNotOptimize(kmeans_cluster(x, 3, 1));
}
BENCHMARK(BM_KMeans)->Arg(1000)->Arg(4000)->Unit(benchmark::kMillisecond);

void BM_Rx(benchmark::State& state) {
  const auto scene = generate_synthetic_scene(7, 64, 64, 32, 5, 0.3);
  for (auto _ : state) benchmark::DoNotOptimize(rx_baseline(scene.cube));
}
BENCHMARK(BM_Rx)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
