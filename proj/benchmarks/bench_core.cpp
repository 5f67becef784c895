#include <benchmark/benchmark.h>

#include "twm/analysis/metrics.hpp"
#include "twm/replay/dataset.hpp"
#include "twm/train/trainer.hpp"

using namespace twm;

namespace {

TrainConfig desk_config() {
  TrainConfig c;
  for (const auto& [k, v] : std::vector<std::pair<std::string, std::string>>{
           {"raw_size", "32"}, {"frame_size", "16"}, {"batch_size", "16"}, {"seq_len", "8"}, {"imag_batch", "64"},
           {"horizon", "10"}, {"latent_vars", "8"}, {"latent_classes", "8"}, {"enc_channels", "16"},
           {"enc_stages", "2"}, {"xl_layers", "2"}, {"xl_dim", "64"}, {"xl_heads", "2"}, {"xl_head_dim", "32"},
           {"xl_ff", "256"}, {"latent_units", "128"}, {"latent_layers", "2"}, {"reward_units", "128"},
           {"reward_layers", "2"}, {"discount_units", "128"}, {"discount_layers", "2"}, {"actor_units", "128"},
           {"actor_layers", "2"}, {"critic_units", "128"}, {"critic_layers", "2"}, {"prefill_steps", "256"}})
    c.set(k, v);
  return c;
}

Tensor<float> one_hot_latents(std::int64_t m, const DynamicsConfig& d, Rng& rng) {
  std::vector<float> z(static_cast<std::size_t>(m * d.latent_size()), 0.0f);
  for (std::int64_t i = 0; i < m * d.latent_vars; ++i) z[i * d.latent_classes + rng.index(d.latent_classes)] = 1.0f;
  return Tensor<float>::from({m, d.latent_size()}, z);
}

// args: mode (0 cached, 1 vanilla), full-size model (0/1)
void BM_Imagine(benchmark::State& state) {
  const auto mode = state.range(0) == 0 ? ImagineMode::kCached : ImagineMode::kVanilla;
  const auto cfg = state.range(1) ? TrainConfig{} : desk_config();
  Rng rng(1);
  DynamicsModel<float> model(cfg.dynamics(), rng);
  const std::int64_t m = 64, h = state.range(1) ? 15 : 10;
  const auto z0 = one_hot_latents(m, model.config(), rng);
  NoGradGuard ng;
  const int actions = model.config().actions;
  ImaginationPolicy<float> policy = [&](const Tensor<float>& z, const Tensor<float>&) {
    std::vector<std::int64_t> a(static_cast<std::size_t>(z.dim(0)));
    for (auto& x : a) x = rng.index(actions);
    return a;
  };
  for (auto _ : state) benchmark::DoNotOptimize(model.imagine(z0, policy, h, rng, mode));
  state.SetItemsProcessed(state.iterations() * m * h);
}
BENCHMARK(BM_Imagine)->Args({0, 0})->Args({1, 0})->Args({0, 1})->Args({1, 1})->Unit(benchmark::kMillisecond);

void BM_WorldModelStep(benchmark::State& state) {
  Trainer t(desk_config());
  t.collect(256, true);
  for (auto _ : state) benchmark::DoNotOptimize(t.train_world_model());
}
BENCHMARK(BM_WorldModelStep)->Unit(benchmark::kMillisecond);

void BM_AgentStep(benchmark::State& state) {
  Trainer t(desk_config());
  t.collect(256, true);
  const auto wm = t.train_world_model();
  for (auto _ : state) benchmark::DoNotOptimize(t.train_agent(wm));
}
BENCHMARK(BM_AgentStep)->Unit(benchmark::kMillisecond);

void BM_SampleStarts(benchmark::State& state) {
  BalancedSampler s(20.0);
  for (std::int64_t i = 0; i < state.range(0); ++i) s.add_entry();
  Rng rng(2);
  for (auto _ : state) benchmark::DoNotOptimize(s.sample_starts(100, 16, rng));
}
BENCHMARK(BM_SampleStarts)->Arg(10000)->Arg(100000);

void BM_Bootstrap(benchmark::State& state) {
  analysis::ScoreTable t;
  Rng rng(3);
  for (int g = 0; g < 26; ++g) {
    const auto name = "g" + std::to_string(g);
    t.references[name] = {0.0, 1.0};
    for (int r = 0; r < 5; ++r) t.rows.push_back({name, r, rng.normal(0.5, 0.3)});
  }
  for (auto _ : state) benchmark::DoNotOptimize(analysis::aggregates(t, 1000, 1));
}
BENCHMARK(BM_Bootstrap)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
