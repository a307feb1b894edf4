#include <benchmark/benchmark.h>

#include "eigenprobe/eigenspace.hpp"
#include "eigenprobe/netbox.hpp"
#include "eigenprobe/optimizer.hpp"
#include "eigenprobe/prng.hpp"
#include "eigenprobe/synthetic.hpp"

using namespace eigenprobe;

namespace {

SyntheticFaceModel model(std::uint32_t side) {
  SyntheticFaceModel::Params p;
  p.width = p.height = side;
  return SyntheticFaceModel(p);
}

std::shared_ptr<const SyntheticEmbedder> embedder(std::uint32_t side) {
  return std::make_shared<SyntheticEmbedder>(11, 128, side, side, 3, true);
}

}  // namespace

static void BM_Philox(benchmark::State& state) {
  std::uint64_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(normal_at(1, streams::kMainPhase, i++));
}
BENCHMARK(BM_Philox);

static void BM_Query(benchmark::State& state) {
  const auto side = static_cast<std::uint32_t>(state.range(0));
  const auto gen = model(side);
  auto oracle = make_cosine_oracle(embedder(side), {{TargetId("t"), gen.target(0)}}, std::nullopt);
  const ImageTensor probe = gen.target(1);
  for (auto _ : state) benchmark::DoNotOptimize(oracle->query(probe, TargetId("t")));
}
BENCHMARK(BM_Query)->Arg(16)->Arg(32)->Arg(64);

static void BM_EstimatorStep(benchmark::State& state) {
  const auto gen = model(32);
  const EigenBasis basis = fit_pca(gen.corpus(200), static_cast<std::size_t>(state.range(0)));
  auto oracle = make_cosine_oracle(embedder(32), {{TargetId("t"), gen.target(0)}}, std::nullopt);
  const LatentCoords c = LatentCoords::Zero(static_cast<Eigen::Index>(basis.rank()));
  NormalStream rng(0, streams::kMainPhase);
  for (auto _ : state) benchmark::DoNotOptimize(estimate_gradient(c, basis, *oracle, TargetId("t"), 0.3, rng));
}
BENCHMARK(BM_EstimatorStep)->Arg(16)->Arg(64)->Arg(128);

static void BM_FitPca(benchmark::State& state) {
  const auto corpus = model(32).corpus(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(fit_pca(corpus, 64));
}
BENCHMARK(BM_FitPca)->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);

static void BM_LoopbackQuery(benchmark::State& state) {
  const auto gen = model(32);
  SimilarityServer server(
      std::shared_ptr<SimilarityOracle>(make_cosine_oracle(embedder(32), {{TargetId("t"), gen.target(0)}}, std::nullopt)),
      {});
  server.start();
  RemoteOracle remote(server.address(), TargetId("t"));
  const ImageTensor probe = gen.target(1);
  for (auto _ : state) benchmark::DoNotOptimize(remote.query(probe, TargetId("t")));
  server.stop();
}
BENCHMARK(BM_LoopbackQuery)->Unit(benchmark::kMicrosecond);
BENCHMARK_MAIN();
