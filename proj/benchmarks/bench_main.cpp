#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "bicro/co_train.hpp"
#include "bicro/datagen.hpp"
#include "bicro/eval.hpp"
#include "bicro/match_model.hpp"
#include "bicro/mixture.hpp"
#include "bicro/rectify.hpp"

using namespace bicro;

namespace {

GenSpec spec(std::size_t n) {
  GenSpec s;
  s.n_pairs = n;
  s.test_pairs = 0;
  s.noise_ratio = 0.4;
  s.modality_noise_sigma = 0.7;
  s.seed = 1;
  return s;
}

std::vector<double> beta_losses(std::size_t n) {
  std::mt19937_64 rng(3);
  std::gamma_distribution<double> g2(2.0), g8(8.0);
  std::bernoulli_distribution clean(0.6);
  std::vector<double> x(n);
  for (auto& v : x) {
    const double a = clean(rng) ? g2(rng) : g8(rng);
    const double b = clean(rng) ? g8(rng) : g2(rng);
    v = a / (a + b);
  }
  return x;
}

void BM_RecallAtK(benchmark::State& state) {
  const auto n = static_cast<Eigen::Index>(state.range(0));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  Eigen::MatrixXd sim(n, n);
  for (Eigen::Index i = 0; i < sim.size(); ++i) sim.data()[i] = nd(rng);
  for (auto _ : state) benchmark::DoNotOptimize(retrieval_report(sim));
}
BENCHMARK(BM_RecallAtK)->Arg(100)->Arg(1000);

void BM_EmFit(benchmark::State& state) {
  const auto x = beta_losses(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(em_fit(x));
}
BENCHMARK(BM_EmFit)->Arg(2000)->Arg(20000)->Unit(benchmark::kMillisecond);

void BM_GradStep(benchmark::State& state) {
  const auto data = generate(spec(2000));
  const auto table = FeatureTable::from(data);
  auto model = init_model(data.image_dim, data.text_dim, 32, 7);
  const auto batch_size = static_cast<std::size_t>(state.range(0));
  std::vector<std::size_t> batch(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) batch[i] = i;
  const std::vector<double> y(batch_size, 0.7);
  const LossConfig cfg{1.0, 10.0};
  for (auto _ : state) benchmark::DoNotOptimize(grad_step(model, table, batch, y, cfg, 1e-3));
}
BENCHMARK(BM_GradStep)->Arg(100)->Arg(400);

void BM_BicroLabel(benchmark::State& state) {
  const auto data = generate(spec(2000));
  const auto table = FeatureTable::from(data);
  AnchorSet anchors;
  for (std::size_t i = 0; i < static_cast<std::size_t>(state.range(0)); ++i) anchors.indices.push_back(i);
  const AnchorFeatures features(anchors, table);
  std::size_t q = anchors.size();
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        bicro_label(q, table.images.col(static_cast<Eigen::Index>(q)),
                    table.texts.col(static_cast<Eigen::Index>(q)), features, 1e-8));
    if (++q == data.size()) q = anchors.size();
  }
}
BENCHMARK(BM_BicroLabel)->Arg(200)->Arg(1000);

void BM_PerSampleLosses(benchmark::State& state) {
  const auto data = generate(spec(static_cast<std::size_t>(state.range(0))));
  const auto table = FeatureTable::from(data);
  const auto model = init_model(data.image_dim, data.text_dim, 32, 7);
  const LossConfig cfg{1.0, 10.0};
  for (auto _ : state) benchmark::DoNotOptimize(per_sample_losses(model, table, cfg, 100, 5));
}
BENCHMARK(BM_PerSampleLosses)->Arg(2000)->Unit(benchmark::kMillisecond);

void BM_TrainEpoch(benchmark::State& state) {
  const auto data = generate(spec(2000));
  TrainConfig cfg;
  cfg.loss.alpha = 1.0;
  cfg.seed = 1;
  cfg.clean_only_epochs = 0;
  auto trainer = init_state(data, cfg);
  for (auto _ : state) benchmark::DoNotOptimize(train_epoch(trainer, data, cfg));
}
BENCHMARK(BM_TrainEpoch)->Unit(benchmark::kMillisecond)->Iterations(3);

}  // namespace

BENCHMARK_MAIN();
