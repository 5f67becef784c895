// Acceptance run: one PASS/FAIL line per criterion, tolerances fixed below.
#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "twm/agent/actor_critic.hpp"
#include "twm/analysis/throughput.hpp"
#include "twm/dynamics/dynamics_model.hpp"
#include "twm/envs/builtin.hpp"
#include "twm/observation/observation_model.hpp"
#include "twm/replay/dataset.hpp"
#include "twm/train/trainer.hpp"
#include "twm/verify/kl_equivalence.hpp"

namespace fs = std::filesystem;
using namespace twm;
using twm::testing::grad_check;
using twm::testing::random_tensor;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void progress(const std::string& s) {
  std::fprintf(stderr, "  .. %s\n", s.c_str());
  std::fflush(stderr);
}

// ---- 1, 2: the metrics subcommand on the bundled tables

std::map<std::string, double> run_metrics(const fs::path& twm, const fs::path& scores, const fs::path& refs,
                                          const fs::path& out) {
  const std::string cmd = "\"" + twm.string() + "\" metrics --scores \"" + scores.string() + "\" --refs \"" +
                          refs.string() + "\" --out \"" + out.string() + "\" > /dev/null";
  if (std::system(cmd.c_str()) != 0) throw std::runtime_error("metrics failed: " + cmd);
  std::ifstream in(out);
  std::map<std::string, double> rows;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string key, value;
    std::getline(ss, key, ',');
    std::getline(ss, value, ',');
    rows[key] = std::stod(value);
  }
  return rows;
}

Outcome criterion1(const fs::path& twm, const fs::path& data, const fs::path& work) {
  const auto refs = data / "atari100k_refs.csv";
  const auto t0 = Clock::now();
  auto a = run_metrics(twm, data / "scores_twm.csv", refs, work / "c1_twm.csv");
  auto b = run_metrics(twm, data / "scores_spr.csv", refs, work / "c1_spr.csv");
  const double secs = since(t0) / 2;
  const double tol = 1e-3;
  const bool ok = std::abs(a["normalized_mean"] - 0.956) <= tol && std::abs(a["normalized_median"] - 0.505) <= tol &&
                  std::abs(b["normalized_mean"] - 0.616) <= tol && std::abs(b["normalized_median"] - 0.396) <= tol &&
                  secs < 1.0;
  return {ok, fmt("twm mean %.4f median %.4f (0.956/0.505), spr %.4f/%.4f (0.616/0.396), tol 0.001; %.2fs per call "
                  "(< 1s)",
                  a["normalized_mean"], a["normalized_median"], b["normalized_mean"], b["normalized_median"], secs)};
}

Outcome criterion2(const fs::path& twm, const fs::path& data, const fs::path& work) {
  const auto refs = data / "atari100k_refs.csv";
  auto a = run_metrics(twm, data / "scores_twm_50k.csv", refs, work / "c2_50k.csv");
  auto b = run_metrics(twm, data / "scores_twm_100k.csv", refs, work / "c2_100k.csv");
  const bool ok = std::abs(a["normalized_mean"] - 0.624) <= 1e-3 && std::abs(b["normalized_mean"] - 0.956) <= 1e-3;
  return {ok, fmt("50K mean %.4f (0.624), 100K mean %.4f (0.956), tol 0.001", a["normalized_mean"],
                  b["normalized_mean"])};
}

// ---- 3: KL / cross-entropy gradient identity

Outcome criterion3() {
  const auto t0 = Clock::now();
  const auto r = verify::verify_kl(200, 7, 1e-6);
  const double secs = since(t0);
  return {r.passed && r.trials.size() >= 100 && secs < 30,
          fmt("%zu trials, max rel error identity %.2g, vs finite differences %.2g (tol 1e-6); %.2fs (< 30s)",
              r.trials.size(), r.max_identity_error, r.max_fd_error, secs)};
}

// ---- 4: gradient suite

ObservationConfig tiny_observation() {
  ObservationConfig c;
  c.height = 8;
  c.width = 8;
  c.stack = 2;
  c.latent_vars = 3;
  c.latent_classes = 4;
  c.base_channels = 2;
  c.stages = 2;
  return c;
}

DynamicsConfig tiny_dynamics(int seq_len) {
  DynamicsConfig c;
  c.latent_vars = 2;
  c.latent_classes = 3;
  c.actions = 3;
  c.seq_len = seq_len;
  c.transformer = {2, 8, 2, 4, 16, 0};
  c.latent_units = c.reward_units = c.discount_units = 8;
  c.latent_layers = c.reward_layers = c.discount_layers = 1;
  return c;
}

AgentConfig tiny_agent(PolicyInput in) {
  AgentConfig c;
  c.actions = 3;
  c.latent_size = 6;
  c.hidden_size = 4;
  c.policy_input = in;
  c.actor_units = c.critic_units = 8;
  c.actor_layers = c.critic_layers = 1;
  return c;
}

template <typename T>
Tensor<T> one_hot(Shape shape, Rng& rng) {
  const auto classes = shape.back();
  std::vector<T> v(static_cast<std::size_t>(shape_numel(shape)), T(0));
  for (std::int64_t i = 0; i < shape_numel(shape) / classes; ++i) v[i * classes + rng.index(classes)] = T(1);
  return Tensor<T>::from(std::move(shape), std::move(v));
}

std::vector<std::int64_t> random_actions(std::int64_t n, int m, Rng& rng) {
  std::vector<std::int64_t> a(static_cast<std::size_t>(n));
  for (auto& x : a) x = rng.index(m);
  return a;
}

ImaginedBatch<double> random_imagined(std::int64_t hzn, std::int64_t m, Rng& rng) {
  ImaginedBatch<double> b;
  b.horizon = hzn;
  b.m = m;
  b.z = reshape(one_hot<double>({hzn + 1, m, 2, 3}, rng), {hzn + 1, m, 6});
  b.h_prev = random_tensor({hzn + 1, m, 4}, rng);
  b.h = random_tensor({hzn, m, 4}, rng);
  b.actions = random_actions(hzn * m, 3, rng);
  b.rewards = random_tensor({hzn, m}, rng);
  std::vector<double> g(static_cast<std::size_t>(hzn * m));
  for (auto& x : g) x = 0.99 * rng.uniform();
  b.discounts = Tensor<double>::from({hzn, m}, g);
  return b;
}

Outcome criterion4() {
  const auto t0 = Clock::now();
  std::map<std::string, double> worst;
  const int seeds = 20;
  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    {
      Rng rng(seed);
      const auto oc = tiny_observation();
      ObservationModel<double> m(oc, rng);
      const std::int64_t b = 2, t = 2;
      std::vector<double> px(static_cast<std::size_t>(b * t * oc.stack * oc.height * oc.width));
      for (auto& x : px) x = rng.uniform();
      auto o = Tensor<double>::from({b * t, oc.stack, oc.height, oc.width}, px);
      auto prior = CategoricalVector<double>(random_tensor({b, t - 1, 3, 4}, rng)).log_probs();
      auto f = [&] {
        auto d = m.posterior(o);
        return observation_loss(o, m.decode(d.probs()), d, prior, b, t, 5.0, 0.01);
      };
      worst["observation"] =
          std::max(worst["observation"], grad_check(testing::leaves_of(m.params()), f, rng, 60).max_rel_error);
    }
    {
      Rng rng(seed);
      DynamicsModel<double> m(tiny_dynamics(3), rng);
      const std::int64_t b = 2, t = 3;
      DynamicsBatch<double> batch;
      batch.z = one_hot<double>({b, t, 2, 3}, rng);
      batch.posterior_probs = CategoricalVector<double>(random_tensor({b, t, 2, 3}, rng)).probs();
      batch.actions = random_actions(b * t, 3, rng);
      batch.rewards = random_tensor({b, t}, rng);
      batch.continues = Tensor<double>::from({b, t}, {1, 1, 0, 1, 1, 1});
      auto f = [&] { return dynamics_loss(m, batch, 10.0, 50.0); };
      worst["dynamics"] =
          std::max(worst["dynamics"], grad_check(testing::leaves_of(m.params()), f, rng, 60).max_rel_error);
    }
    {
      Rng rng(seed);
      ActorCritic<double> net(tiny_agent(seed % 2 ? PolicyInput::kZAndH : PolicyInput::kZ), rng);
      auto b = random_imagined(3, 2, rng);
      const auto tg = net.targets(b);
      auto fa = [&] { return net.losses(b, tg).actor; };
      auto fc = [&] { return net.losses(b, tg).critic; };
      worst["actor"] = std::max(worst["actor"], grad_check(testing::leaves_of(net.actor_params()), fa, rng).max_rel_error);
      worst["critic"] =
          std::max(worst["critic"], grad_check(testing::leaves_of(net.critic_params()), fc, rng).max_rel_error);
    }
    {
      // low-entropy logits so the threshold is active
      Rng rng(seed);
      auto logits = random_tensor({5, 4}, rng, 6.0, true);
      auto f = [&] { return thresholded_entropy_loss(softmax_last(logits), log_softmax_last(logits), 0.5); };
      worst["entropy"] = std::max(worst["entropy"], grad_check({logits}, f, rng, 20).max_rel_error);
    }
  }
  const double secs = since(t0);
  bool ok = secs < 300;
  std::string detail;
  for (const auto& [k, v] : worst) {
    ok = ok && v < 1e-4;
    detail += fmt("%s %.1e, ", k.c_str(), v);
  }
  return {ok, detail + fmt("%d seeds, tol 1e-4; %.1fs (< 300s)", seeds, secs)};
}

// ---- 5: cache equivalence and causality

Outcome criterion5() {
  const auto t0 = Clock::now();
  DynamicsConfig dc;
  dc.latent_vars = 4;
  dc.latent_classes = 4;
  dc.actions = 3;
  dc.seq_len = 16;
  dc.transformer = {2, 32, 2, 16, 64, 0};
  dc.latent_units = dc.reward_units = dc.discount_units = 32;
  dc.latent_layers = dc.reward_layers = dc.discount_layers = 1;
  Rng init(5);
  DynamicsModel<float> m(dc, init);
  const std::int64_t steps = 64, batch = 3, lat = dc.latent_size();
  Rng pr(6);
  ImaginationPolicy<float> policy = [&](const Tensor<float>& z, const Tensor<float>&) {
    return random_actions(z.dim(0), 3, pr);
  };
  NoGradGuard ng;
  Rng zr(7), ir(8);
  auto z0 = one_hot<float>({batch, 4, 4}, zr);
  auto x = m.imagine(z0, policy, steps, ir, ImagineMode::kCached);
  // full recomputation of the recorded token sequence in one pass
  auto zseq = permute(reshape(slice(x.z, 0, 0, steps), {steps, batch, lat}), {1, 0, 2});
  auto rseq = permute(slice(x.rewards, 0, 0, steps - 1), {1, 0});
  std::vector<std::int64_t> acts(static_cast<std::size_t>(batch * steps));
  for (std::int64_t t = 0; t < steps; ++t)
    for (std::int64_t i = 0; i < batch; ++i) acts[i * steps + t] = x.actions[t * batch + i];
  auto full = permute(m.aggregate(zseq, acts, rseq), {1, 0, 2});
  double diff = 0;
  for (std::int64_t i = 0; i < full.numel(); ++i) diff = std::max(diff, double(std::abs(full.at(i) - x.h.at(i))));

  // perturb every future token in turn; all earlier outputs must be bit-identical
  auto emb = m.embed(slice(zseq, 0, 0, 1), std::vector<std::int64_t>(acts.begin(), acts.begin() + steps),
                     slice(rseq, 0, 0, 1));
  auto base = m.transformer().forward(emb);
  const std::int64_t n = emb.dim(1), d = dc.transformer.model_dim;
  double past_change = 0;
  bool future_moves = true;
  for (std::int64_t j = 1; j < n; j += 5) {
    auto v = emb.to_vector();
    for (std::int64_t c = 0; c < d; ++c) v[j * d + c] += 2.5f;
    auto pert = m.transformer().forward(Tensor<float>::from(emb.shape(), v));
    for (std::int64_t i = 0; i < j * d; ++i) past_change = std::max(past_change, double(std::abs(pert.at(i) - base.at(i))));
    bool moved = false;
    for (std::int64_t i = j * d; i < n * d; ++i) moved |= pert.at(i) != base.at(i);
    future_moves = future_moves && moved;
  }
  const double secs = since(t0);
  return {diff < 1e-5 && past_change == 0.0 && future_moves && secs < 60,
          fmt("cached vs full max |dh| %.2g over %lld steps (< 1e-5, float32); past change under future perturbation "
              "%.1g (== 0); %.1fs (< 60s)",
              diff, static_cast<long long>(steps), past_change, secs)};
}

// ---- 6: cached vs vanilla imagination throughput

Outcome criterion6() {
  const auto t0 = Clock::now();
  analysis::ThroughputConfig bc;
  bc.model = TrainConfig{}.dynamics();
  const auto r = analysis::throughput_bench(bc, {ImagineMode::kCached, ImagineMode::kVanilla});
  const double secs = since(t0);
  return {r.ratio >= 1.5 && r.max_abs_diff < 1e-5 && secs < 300,
          fmt("l=%d H=%lld M=%lld: cached %.1f samples/s, vanilla %.1f, ratio %.2f (>= 1.5); %.0fs (< 300s)",
              bc.model.seq_len, static_cast<long long>(bc.horizon), static_cast<long long>(bc.batch),
              r.results[0].samples_per_second, r.results[1].samples_per_second, r.ratio, secs)};
}

// ---- 7: sampler laws

Outcome criterion7() {
  const auto t0 = Clock::now();
  Rng rng(11);
  const int n = 500;
  BalancedSampler hot(1e12), uni(kUniformTemperature), s(20.0);
  for (int i = 0; i < n; ++i) {
    hot.add_entry();
    uni.add_entry();
    s.add_entry();
  }
  for (int i = 0; i < n; ++i) hot.mutable_counts()[i] = uni.mutable_counts()[i] = s.mutable_counts()[i] = rng.index(1000);
  const auto ph = hot.start_probabilities(1), pu = uni.start_probabilities(1), ps = s.start_probabilities(1);
  double tv = 0;
  for (int i = 0; i < n; ++i) tv += 0.5 * std::abs(ph[i] - pu[i]);
  bool monotone = true;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (s.counts()[i] < s.counts()[j]) monotone = monotone && ps[i] > ps[j];
  GrowthSimulationConfig gc;
  gc.temperature = 20.0;
  const auto curve = time_on_prefix(simulate_growing_dataset(gc));
  const double half = curve[curve.size() / 2];
  const double secs = since(t0);
  return {tv < 1e-6 && monotone && std::abs(half - 0.5) <= 0.05 && secs < 60,
          fmt("TV(tau=1e12, uniform) %.1e (< 1e-6); monotone %s; tau=20 first-half mass %.3f (0.50 +- 0.05); %.1fs",
              tv, monotone ? "yes" : "no", half, secs)};
}

// ---- 8: token arithmetic

Outcome criterion8() {
  bool ok = true;
  std::string detail;
  for (int l : {1, 4, 16}) {
    auto dc = tiny_dynamics(l);
    Rng rng(l);
    DynamicsModel<float> m(dc, rng);
    auto z = one_hot<float>({1, l, 2, 3}, rng);
    const auto a = random_actions(l, 3, rng);
    NoGradGuard ng;
    const auto with = m.embed(z, a, l > 1 ? Tensor<float>::zeros({1, l - 1}) : Tensor<float>()).dim(1);
    dc.reward_tokens = false;
    DynamicsModel<float> nr(dc, rng);
    const auto without = nr.embed(z, a, Tensor<float>()).dim(1);
    ok = ok && with == 3 * l - 1 && without == 2 * l && dc.tokens_for(l) == 2 * l;
    detail += fmt("l=%d: %lld (3l-1=%d), no-reward %lld (2l=%d); ", l, static_cast<long long>(with), 3 * l - 1,
                  static_cast<long long>(without), 2 * l);
  }
  return {ok, detail};
}

// ---- 9, 10: desk-scale runs

struct DeskRun {
  double seconds = 0;
  double eval_score = 0;
  double trained_ce = 0, untrained_ce = 0;
  double heldout_dyn_loss = 0;
  double second_half_min_entropy = 0;
};

double random_policy_mean(const TrainConfig& cfg, std::int64_t episodes, std::uint64_t seed) {
  auto env = envs::make_environment(cfg.env, cfg.raw_size, cfg.preprocess());
  Rng rng(seed);
  double total = 0;
  for (std::int64_t e = 0; e < episodes; ++e) {
    env->reset(seed + static_cast<std::uint64_t>(e));
    double score = 0;
    while (!env->done()) score += env->step(static_cast<int>(rng.index(cfg.action_count()))).reward;
    total += score;
  }
  return total / static_cast<double>(episodes);
}

DeskRun desk_run(TrainConfig cfg, std::uint64_t seed, std::uint64_t eval_seed, const std::string& label) {
  cfg.seed = seed;
  cfg.validate();
  DeskRun out;
  const auto t0 = Clock::now();
  Trainer trainer(cfg);
  trainer.run([&](const LogRow& r) {
    progress(fmt("%s: %lld steps, dyn %.3f, entropy %.3f, recent score %.2f, %.0fs", label.c_str(),
                 static_cast<long long>(r.counters.env_steps), r.wm.dynamics.total, r.agent.normalized_entropy,
                 r.recent_score, r.elapsed_seconds));
  });
  const auto& m = trainer.models();
  const bool needs_h = cfg.policy_input == "z_and_h";
  out.eval_score = evaluate_policy(cfg, m.observation, m.agent, needs_h ? &m.dynamics : nullptr, 100, eval_seed).mean();
  const auto held = collect_episodes(m, 10, eval_seed + 500);
  const auto trained = evaluate_dynamics(m.observation, m.dynamics, held, cfg.beta1, cfg.beta2, seed);
  Rng fresh_rng = stream(seed + 1, kInit);
  DynamicsModel<float> fresh(cfg.dynamics(), fresh_rng);
  out.trained_ce = trained.latent;
  out.untrained_ce = evaluate_dynamics(m.observation, fresh, held, cfg.beta1, cfg.beta2, seed).latent;
  out.heldout_dyn_loss = trained.total;
  out.second_half_min_entropy = 1.0;
  for (const auto& [step, h] : trainer.entropy_history())
    if (2 * step >= cfg.env_steps) out.second_half_min_entropy = std::min(out.second_half_min_entropy, h);
  out.seconds = since(t0);
  progress(fmt("%s done: eval %.2f, latent CE %.3f vs untrained %.3f, held-out dyn loss %.3f, min entropy %.3f, %.0fs",
               label.c_str(), out.eval_score, out.trained_ce, out.untrained_ce, out.heldout_dyn_loss,
               out.second_half_min_entropy, out.seconds));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string twm_path, data_dir = TWM_DATA_DIR, config_path = TWM_DESK_CONFIG, work_dir = "acceptance_work";
  std::vector<int> only;
  int seeds = 3;
  app.add_option("--twm", twm_path, "path to the twm tool")->required();
  app.add_option("--data", data_dir, "bundled score tables");
  app.add_option("--desk-config", config_path, "desk config for criteria 9 and 10");
  app.add_option("--work", work_dir, "scratch directory");
  app.add_option("--only", only, "run only these criteria");
  app.add_option("--seeds", seeds, "desk seeds")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);

  const std::set<int> selected(only.begin(), only.end());
  auto want = [&](int c) { return selected.empty() || selected.count(c) > 0; };
  fs::create_directories(work_dir);
  std::map<int, Outcome> results;
  auto guarded = [&](int c, const std::string& name, auto fn) {
    if (!want(c)) return;
    progress("criterion " + std::to_string(c) + ": " + name);
    try {
      results[c] = fn();
    } catch (const std::exception& e) {
      results[c] = {false, std::string("error: ") + e.what()};
    }
    results[c].detail = name + ": " + results[c].detail;
  };

  guarded(1, "metrics reproduction", [&] { return criterion1(twm_path, data_dir, work_dir); });
  guarded(2, "sample-efficiency rows", [&] { return criterion2(twm_path, data_dir, work_dir); });
  guarded(3, "KL / cross-entropy gradient identity", criterion3);
  guarded(4, "gradient suite", criterion4);
  guarded(5, "cache equivalence and causality", criterion5);
  guarded(6, "cached imagination throughput", criterion6);
  guarded(7, "sampler laws", criterion7);
  guarded(8, "token arithmetic", criterion8);

  if (want(9) || want(10)) {
    const auto base = TrainConfig::load(config_path);
    const std::uint64_t eval_seed = 900000;
    std::vector<DeskRun> balanced, uniform, ent_off;
    double random_mean = 0;
    try {
      random_mean = random_policy_mean(base, 100, eval_seed);
      for (int s = 0; s < seeds; ++s) {
        balanced.push_back(desk_run(base, s, eval_seed, fmt("seed %d balanced", s)));
        if (want(10)) {
          auto u = base;
          u.uniform_sampling = true;
          uniform.push_back(desk_run(u, s, eval_seed, fmt("seed %d uniform", s)));
          auto off = base;
          off.entropy_threshold_off = true;
          ent_off.push_back(desk_run(off, s, eval_seed, fmt("seed %d entropy-off", s)));
        }
      }
    } catch (const std::exception& e) {
      if (want(9)) results[9] = {false, std::string("desk-scale learning: error: ") + e.what()};
      if (want(10)) results[10] = {false, std::string("ablation directions: error: ") + e.what()};
    }
    const int need = (seeds * 2 + 2) / 3;  // 2 of 3
    if (want(9) && !results.count(9)) {
      int good = 0;
      std::string detail = fmt("random policy %.2f; ", random_mean);
      for (std::size_t i = 0; i < balanced.size(); ++i) {
        const auto& r = balanced[i];
        const bool ok = r.eval_score >= random_mean + 1.0 && r.trained_ce <= 0.7 * r.untrained_ce && r.seconds <= 2700;
        good += ok;
        detail += fmt("seed %zu: score %.2f, CE %.3f vs untrained %.3f (%.0f%% lower), %.0fs [%s]; ", i, r.eval_score,
                      r.trained_ce, r.untrained_ce, 100 * (1 - r.trained_ce / r.untrained_ce), r.seconds,
                      ok ? "ok" : "no");
      }
      results[9] = {good >= need, "desk-scale learning: " + detail +
                                      fmt("need score >= random + 1.0, CE >= 30%% lower, <= 45 min, %d of %d seeds",
                                          need, seeds)};
    }
    if (want(10) && !results.count(10)) {
      int sampler_good = 0, entropy_good = 0;
      std::string detail;
      for (std::size_t i = 0; i < balanced.size(); ++i) {
        const bool s_ok = balanced[i].heldout_dyn_loss <= uniform[i].heldout_dyn_loss;
        const bool e_ok = balanced[i].second_half_min_entropy > 0.02;
        sampler_good += s_ok;
        entropy_good += e_ok;
        detail += fmt("seed %zu: dyn loss balanced %.3f vs uniform %.3f [%s], min entropy thresholded %.3f [%s] "
                      "(off: %.3f); ",
                      i, balanced[i].heldout_dyn_loss, uniform[i].heldout_dyn_loss, s_ok ? "ok" : "no",
                      balanced[i].second_half_min_entropy, e_ok ? "ok" : "no", ent_off[i].second_half_min_entropy);
      }
      results[10] = {sampler_good >= need && entropy_good >= need,
                     "ablation directions: " + detail + fmt("%d of %d seeds each", need, seeds)};
    }
  }

  int failed = 0;
  for (const auto& [c, r] : results) {
    std::printf("criterion %2d %s  %s\n", c, r.pass ? "PASS" : "FAIL", r.detail.c_str());
    failed += !r.pass;
  }
  std::fflush(stdout);
  return failed == 0 ? 0 : 1;
}
