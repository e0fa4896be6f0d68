#include <benchmark/benchmark.h>

#include "enf/checks.hpp"
#include "enf/data.hpp"
#include "enf/field.hpp"
#include "enf/fitting.hpp"

namespace {

enf::EnfConfig config(std::optional<std::size_t> k) {
  enf::EnfConfig cfg;
  cfg.kind = enf::BiInvariantKind::RotoTranslation;
  cfg.d_latent = 16;
  cfg.d_hidden = 32;
  cfg.num_heads = 2;
  cfg.rff_dim = 16;
  cfg.sigma_att = 4.0;
  cfg.k_nearest = k;
  return cfg;
}

// Decode a 32x32 grid with N latents, attending to all of them or to the 4 nearest.
void decode(benchmark::State& state, bool knn) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto cfg = config(knn ? std::optional<std::size_t>(4) : std::nullopt);
  const auto params = enf::EnfParams::init(cfg, 1, enf::DType::F64);
  const auto z = enf::random_latents(cfg.kind, n, cfg.d_latent, 2);
  const auto grid = enf::make_grid(32, 32);
  for (auto _ : state) benchmark::DoNotOptimize(enf::field_forward(grid, z, params, cfg));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * grid.rows()));
}

void BM_DecodeFull(benchmark::State& state) { decode(state, false); }
void BM_DecodeKnn(benchmark::State& state) { decode(state, true); }
BENCHMARK(BM_DecodeFull)->Arg(9)->Arg(16)->Arg(36)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_DecodeKnn)->Arg(9)->Arg(16)->Arg(36)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_MetaStep(benchmark::State& state) {
  const auto cfg = config(4);
  enf::MetaLearnConfig meta;
  const auto samples = enf::synth_shapes(8, 16, 1);
  std::vector<enf::Signal> batch;
  for (std::size_t i = 0; i < samples.size(); ++i) batch.push_back(enf::to_signal(samples[i].image, "b", enf::DType::F32));
  auto train = enf::TrainState::create(cfg, 3);
  for (auto _ : state) benchmark::DoNotOptimize(enf::meta_train_step(batch, train, cfg, meta));
}
BENCHMARK(BM_MetaStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
