#include <vector>

#include <benchmark/benchmark.h>

#include "metacon/episodes.hpp"
#include "metacon/meta.hpp"
#include "metacon/numerics.hpp"

using namespace metacon;

namespace {

MetaConfig bench_config() {
  MetaConfig c;
  c.n_way = 5;
  c.n_shot = 1;
  c.n_query = 15;
  c.n_batch = 4;
  c.n_step = 5;
  c.eta = 0.01;
  return c;
}

}  // namespace

static void BM_EncoderForwardBackward(benchmark::State& state) {
  RngStream rng(1);
  const auto width = static_cast<std::size_t>(state.range(0));
  const auto enc = init_encoder(std::vector<std::size_t>{32, width, 32}, rng);
  const Vector x = draw_gaussian(rng, 32, 0.0, 1.0);
  const Vector up = draw_gaussian(rng, 32, 0.0, 1.0);
  for (auto _ : state) {
    const auto fr = forward(enc, x);
    benchmark::DoNotOptimize(backward(fr.tape, up));
  }
}
BENCHMARK(BM_EncoderForwardBackward)->Arg(64)->Arg(256);

static void BM_OuterUpdate(benchmark::State& state) {
  RngStream rng(2);
  const auto cfg = bench_config();
  const auto bank = make_bank(64, 32, 2.5, 1.0, rng, 8);
  const auto model = init_model(std::vector<std::size_t>{32, 64, 32}, cfg, rng);
  std::vector<Episode> batch;
  for (std::size_t i = 0; i < cfg.n_batch; ++i) batch.push_back(sample_episode(bank, cfg, rng));
  for (auto _ : state) benchmark::DoNotOptimize(outer_update(model, batch, cfg));
}
BENCHMARK(BM_OuterUpdate)->Unit(benchmark::kMillisecond);

static void BM_SomamlHeadGrad(benchmark::State& state) {
  RngStream rng(3);
  const std::size_t nf = 32;
  LinearHead h0{Matrix(nf, 5, draw_gaussian(rng, nf * 5, 0.0, 0.2))};
  std::vector<LabeledFeature> support, query;
  for (std::size_t k = 0; k < 5; ++k) {
    support.push_back({draw_gaussian(rng, nf, 0.0, 1.0), k});
    for (int i = 0; i < 15; ++i) query.push_back({draw_gaussian(rng, nf, 0.0, 1.0), k});
  }
  const auto adapted = adapt_features(h0, support, 1, 0.1);
  for (auto _ : state) benchmark::DoNotOptimize(somaml_head_grad(h0, support, adapted, query, 0.1));
}
BENCHMARK(BM_SomamlHeadGrad);

static void BM_SymmetricEig(benchmark::State& state) {
  RngStream rng(4);
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a(n, n, draw_gaussian(rng, n * n, 0.0, 1.0));
  const Matrix m = a + a.transposed();
  for (auto _ : state) benchmark::DoNotOptimize(symmetric_eig(m));
}
BENCHMARK(BM_SymmetricEig)->Arg(8)->Arg(32)->Arg(64);

BENCHMARK_MAIN();
