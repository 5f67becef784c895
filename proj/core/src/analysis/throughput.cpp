#include "twm/analysis/throughput.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

namespace twm::analysis {

ThroughputReport throughput_bench(const ThroughputConfig& config, const std::vector<ImagineMode>& modes) {
  if (config.batch < 1 || config.horizon < 1 || config.repeats < 1) throw ConfigError("invalid throughput config");
  Rng init(config.seed);
  DynamicsModel<float> model(config.model, init);
  NoGradGuard no_grad;
  const auto& mc = model.config();
  Rng zr(config.seed + 1);
  std::vector<float> z0(static_cast<std::size_t>(config.batch * mc.latent_size()), 0.0f);
  for (std::int64_t i = 0; i < config.batch * mc.latent_vars; ++i)
    z0[static_cast<std::size_t>(i * mc.latent_classes + zr.index(mc.latent_classes))] = 1.0f;
  const auto initial = Tensor<float>::from({config.batch, mc.latent_size()}, z0);

  auto policy_for = [&](Rng& rng) {
    return ImaginationPolicy<float>([&rng, &mc](const Tensor<float>& z, const Tensor<float>&) {
      std::vector<std::int64_t> a(static_cast<std::size_t>(z.dim(0)));
      for (auto& x : a) x = rng.index(mc.actions);
      return a;
    });
  };

  ThroughputReport report;
  for (auto mode : modes) {
    ThroughputResult r;
    r.mode = mode;
    r.seconds = INFINITY;
    for (int rep = 0; rep < config.repeats; ++rep) {
      Rng rng(config.seed + 2);
      const auto t0 = std::chrono::steady_clock::now();
      auto batch = model.imagine(initial, policy_for(rng), config.horizon, rng, mode);
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      r.seconds = std::min(r.seconds, s);
      if (mode == ImagineMode::kCached && rep == 0) {
        // teacher-forced check: the same tokens in one full pass
        const std::int64_t m = config.batch, h = config.horizon, ks = mc.latent_size();
        auto z = permute(reshape(slice(batch.z, 0, 0, h), {h, m, ks}), {1, 0, 2});
        std::vector<std::int64_t> acts(static_cast<std::size_t>(m * h));
        for (std::int64_t t = 0; t < h; ++t)
          for (std::int64_t i = 0; i < m; ++i) acts[i * h + t] = batch.actions[t * m + i];
        auto rew = h > 1 ? permute(slice(batch.rewards, 0, 0, h - 1), {1, 0}) : Tensor<float>::zeros({m, 0});
        auto full = model.aggregate(z, acts, rew);
        auto cached = permute(batch.h, {1, 0, 2});
        const auto a = full.data(), b = cached.data();
        for (std::size_t i = 0; i < a.size(); ++i)
          report.max_abs_diff = std::max(report.max_abs_diff, static_cast<double>(std::abs(a[i] - b[i])));
      }
    }
    r.samples_per_second = static_cast<double>(config.batch * config.horizon) / r.seconds;
    report.results.push_back(r);
  }
  const ThroughputResult *cached = nullptr, *vanilla = nullptr;
  for (const auto& r : report.results) (r.mode == ImagineMode::kCached ? cached : vanilla) = &r;
  if (cached && vanilla) report.ratio = cached->samples_per_second / vanilla->samples_per_second;
  return report;
}

void write_throughput_csv(const std::filesystem::path& path, const ThroughputConfig& config,
                          const ThroughputReport& report) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "mode,batch,horizon,seconds,samples_per_second\n";
  for (const auto& r : report.results)
    out << (r.mode == ImagineMode::kCached ? "cached" : "vanilla") << ',' << config.batch << ',' << config.horizon
        << ',' << r.seconds << ',' << r.samples_per_second << '\n';
  out << "# ratio_cached_over_vanilla," << report.ratio << '\n';
  out << "# max_abs_diff_cached_vs_full," << report.max_abs_diff << '\n';
}

}  // namespace twm::analysis
