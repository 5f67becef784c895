#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "twm/analysis/metrics.hpp"
#include "twm/analysis/rollout.hpp"
#include "twm/analysis/throughput.hpp"
#include "twm/analysis/visualize.hpp"
#include "twm/envs/builtin.hpp"
#include "twm/train/checkpoint.hpp"
#include "twm/verify/kl_equivalence.hpp"

namespace fs = std::filesystem;
using namespace twm;

namespace {

void write_eval_csv(const fs::path& path, const EvalResult& r) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "episode,score,length\n";
  for (std::size_t i = 0; i < r.scores.size(); ++i) out << i << ',' << r.scores[i] << ',' << r.lengths[i] << '\n';
}

void apply_sets(TrainConfig& config, const std::vector<std::string>& sets) {
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    config.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& sets, const fs::path& out_dir) {
  auto config = config_path.empty() ? TrainConfig{} : TrainConfig::load(config_path);
  apply_sets(config, sets);
  config.validate();
  fs::create_directories(out_dir);
  {
    std::ofstream cfg(out_dir / "config.cfg");
    cfg << config.annotated_text();
  }

  Trainer trainer(config);
  std::ofstream metrics(out_dir / "metrics.csv");
  metrics << "iteration,env_steps,episodes,wm_updates,agent_updates,obs_loss,decoder_nll,encoder_entropy,consistency,"
             "dyn_loss,latent_ce,reward_loss,discount_loss,actor_loss,critic_loss,entropy_norm,return_mean,"
             "imagined_reward,recent_score,elapsed_s\n";
  trainer.run([&](const LogRow& r) {
    const auto& c = r.counters;
    metrics << c.iterations << ',' << c.env_steps << ',' << c.episodes << ',' << c.wm_updates << ','
            << c.agent_updates << ',' << r.wm.observation.total << ',' << r.wm.observation.decoder_nll << ','
            << r.wm.observation.entropy << ',' << r.wm.observation.consistency << ',' << r.wm.dynamics.total << ','
            << r.wm.dynamics.latent << ',' << r.wm.dynamics.reward << ',' << r.wm.dynamics.discount << ','
            << r.agent.terms.actor << ',' << r.agent.terms.critic << ',' << r.agent.normalized_entropy << ','
            << r.agent.terms.return_mean << ',' << r.agent.imagined_reward << ',' << r.recent_score << ','
            << r.elapsed_seconds << '\n';
    metrics.flush();
    std::fprintf(stderr, "[%lld steps] dyn %.3f obs %.2f ent %.3f score %.2f (%.0fs)\n",
                 static_cast<long long>(c.env_steps), r.wm.dynamics.total, r.wm.observation.total,
                 r.agent.normalized_entropy, r.recent_score, r.elapsed_seconds);
  });

  {
    std::ofstream eps(out_dir / "episodes.csv");
    eps << "episode,end_step,score,length\n";
    for (std::size_t i = 0; i < trainer.episodes().size(); ++i) {
      const auto& e = trainer.episodes()[i];
      eps << i << ',' << e.end_step << ',' << e.score << ',' << e.length << '\n';
    }
    std::ofstream ent(out_dir / "entropy.csv");
    ent << "env_steps,entropy_norm\n";
    for (const auto& [s, h] : trainer.entropy_history()) ent << s << ',' << h << '\n';
  }
  save_checkpoint(out_dir / "checkpoint.twm", trainer.models(), trainer.counters());
  trainer.dataset().save(out_dir / "dataset.twmd");
  if (config.eval_episodes > 0) {
    const auto& m = trainer.models();
    auto r = evaluate_policy(config, m.observation, m.agent, &m.dynamics, config.eval_episodes, config.seed + 1000003);
    write_eval_csv(out_dir / "eval.csv", r);
    std::printf("eval mean score %.4f over %zu episodes\n", r.mean(), r.scores.size());
  }
  return 0;
}

int cmd_eval(const fs::path& ckpt, std::int64_t episodes, std::uint64_t seed, const std::string& out) {
  const auto config = read_checkpoint_config(ckpt);
  const bool needs_h = config.policy_input == "z_and_h";
  auto ck = load_checkpoint(ckpt, needs_h ? CheckpointParts::kAll : CheckpointParts::kEncoderActor);
  const auto& m = *ck.models;
  auto r = evaluate_policy(config, m.observation, m.agent, needs_h ? &m.dynamics : nullptr, episodes, seed);
  if (!out.empty()) write_eval_csv(out, r);
  std::printf("mean %.4f episodes %zu\n", r.mean(), r.scores.size());
  return 0;
}

int cmd_metrics(const fs::path& scores, const fs::path& refs, const fs::path& out, std::int64_t resamples,
                std::uint64_t seed, const std::string& fractions_out) {
  analysis::ScoreTable table{analysis::load_scores_csv(scores), analysis::load_references_csv(refs)};
  const auto a = analysis::aggregates(table, resamples, seed);
  analysis::write_aggregates_csv(out, a);
  if (!fractions_out.empty()) {
    std::vector<double> thresholds;
    for (int i = 0; i <= 80; ++i) thresholds.push_back(i * 0.025);
    analysis::write_fraction_above_csv(fractions_out, thresholds,
                                       analysis::fraction_above(analysis::normalized_runs(table), thresholds));
  }
  std::printf("games %lld runs %lld\n", static_cast<long long>(a.games), static_cast<long long>(a.runs));
  std::printf("normalized_mean %.4f [%.4f, %.4f]\n", a.mean, a.mean_ci.lo, a.mean_ci.hi);
  std::printf("normalized_median %.4f [%.4f, %.4f]\n", a.median, a.median_ci.lo, a.median_ci.hi);
  std::printf("iqm %.4f [%.4f, %.4f]\n", a.iqm, a.iqm_ci.lo, a.iqm_ci.hi);
  std::printf("optimality_gap %.4f [%.4f, %.4f]\n", a.optimality_gap, a.gap_ci.lo, a.gap_ci.hi);
  return 0;
}

// encodes observations and samples latents with the posterior
Tensor<float> encode_observations(const Models& m, const std::vector<Tensor<float>>& obs, std::uint64_t seed) {
  const auto& c = m.config;
  const auto n = static_cast<std::int64_t>(obs.size());
  NoGradGuard ng;
  Rng rng = stream(seed, kLatent);
  auto z = m.observation.posterior(concat<float>(obs, 0)).sample(rng);
  return reshape(z, {1, n, c.latent_vars * c.latent_classes});
}

int cmd_attn(const fs::path& ckpt, const std::string& traj, std::int64_t start, std::int64_t steps,
             std::uint64_t seed, const fs::path& out) {
  auto ck = load_checkpoint(ckpt, CheckpointParts::kAll);
  const auto& m = *ck.models;
  if (steps <= 0) steps = m.config.seq_len;
  std::vector<Tensor<float>> obs;
  std::vector<std::int64_t> actions;
  std::vector<float> rewards;
  if (traj == "live") {
    auto env = envs::make_environment(m.config.env, m.config.raw_size, m.config.preprocess());
    PolicyRunner runner(m.observation, m.agent, &m.dynamics);
    Rng latent_rng = stream(seed, kLatent), policy_rng = stream(seed, kPolicy);
    auto o = env->reset(seed);
    runner.begin_episode();
    while (static_cast<std::int64_t>(obs.size()) < steps && !env->done()) {
      obs.push_back(observation_tensor(o));
      const auto a = runner.act(o, latent_rng, policy_rng);
      auto st = env->step(static_cast<int>(a));
      runner.observe(st.reward);
      actions.push_back(a);
      rewards.push_back(st.reward);
      o = std::move(st.observation);
    }
  } else {
    const auto data = ExperienceDataset::load(traj, INFINITY);
    if (start < 0) start = std::max<std::int64_t>(0, data.size() - steps);
    if (start + steps > data.size()) throw UsageError("trajectory window exceeds the dataset");
    for (std::int64_t i = start; i < start + steps; ++i) {
      const auto& c = m.config;
      obs.push_back(frames_to_tensor<float>(data.observation(i), 1, c.frame_stack, c.frame_size, c.frame_size));
      actions.push_back(data.action(i));
      rewards.push_back(data.reward(i));
    }
  }
  const auto t = static_cast<std::int64_t>(obs.size());
  if (t < 1) throw UsageError("empty trajectory");
  auto z = encode_observations(m, obs, seed);
  auto r = t > 1 ? Tensor<float>::from({1, t - 1}, std::vector<float>(rewards.begin(), rewards.end() - 1))
                 : Tensor<float>::zeros({1, 0});
  const auto rollout = analysis::trajectory_rollout(m.dynamics, z, actions, r);
  fs::create_directories(out);
  analysis::write_rollout(out, rollout);
  std::printf("attention rollout over %lld tokens written to %s\n", static_cast<long long>(rollout.rollout.n),
              out.string().c_str());
  return 0;
}

int cmd_imagine(const fs::path& ckpt, const std::string& env_id, std::int64_t steps, std::int64_t samples,
                std::uint64_t seed, std::int64_t warmup, const fs::path& out) {
  auto ck = load_checkpoint(ckpt, CheckpointParts::kAll);
  const auto& m = *ck.models;
  const std::string id = env_id.empty() ? m.config.env : env_id;
  auto env = envs::make_environment(id, m.config.raw_size, m.config.preprocess());
  if (env->spec().action_count != m.config.action_count())
    throw ConfigError("environment '" + id + "' does not match the checkpoint's action space");
  auto obs = env->reset(seed);
  Rng warm(seed);
  for (std::int64_t i = 0; i < warmup && !env->done(); ++i)
    obs = env->step(static_cast<int>(warm.index(env->spec().action_count))).observation;
  const auto ts = analysis::imagine_trajectories(m, obs, steps, samples, seed);
  fs::create_directories(out);
  const auto& c = m.config;
  analysis::write_trajectories(out, ts, c.frame_stack, c.frame_size, c.frame_size);
  std::printf("%lld imagined trajectories of %lld steps written to %s\n", static_cast<long long>(samples),
              static_cast<long long>(steps), out.string().c_str());
  return 0;
}

int cmd_bench(const std::string& mode, const std::vector<std::string>& sets, std::int64_t batch,
              std::int64_t horizon, int repeats, const fs::path& out) {
  TrainConfig config;
  apply_sets(config, sets);
  config.validate();
  analysis::ThroughputConfig bc;
  bc.model = config.dynamics();
  bc.batch = batch;
  bc.horizon = horizon;
  bc.repeats = repeats;
  bc.seed = config.seed;
  std::vector<ImagineMode> modes;
  if (mode == "cached" || mode == "both") modes.push_back(ImagineMode::kCached);
  if (mode == "vanilla" || mode == "both") modes.push_back(ImagineMode::kVanilla);
  const auto report = analysis::throughput_bench(bc, modes);
  analysis::write_throughput_csv(out, bc, report);
  for (const auto& r : report.results)
    std::printf("%s: %.1f samples/s (%.3fs)\n", r.mode == ImagineMode::kCached ? "cached" : "vanilla",
                r.samples_per_second, r.seconds);
  if (report.ratio > 0) std::printf("ratio cached/vanilla %.3f\n", report.ratio);
  std::printf("max |h_cached - h_full| %.3g\n", report.max_abs_diff);
  return 0;
}

int cmd_verify_kl(int trials, std::uint64_t seed) {
  const auto r = verify::verify_kl(trials, seed);
  std::printf("%s: %zu trials, max relative error identity %.3g, finite differences %.3g (tolerance %.0e)\n",
              r.passed ? "PASS" : "FAIL", r.trials.size(), r.max_identity_error, r.max_fd_error, r.tolerance);
  return r.passed ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transformer world model: training, evaluation and analysis"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> sets;
  std::string out_dir;
  auto* train = app.add_subcommand("train", "train an agent and its world model");
  train->add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
  train->add_option("--set", sets, "override, key=value (repeatable)");
  train->add_option("--out", out_dir, "output directory")->required();

  std::string ckpt, eval_out;
  std::int64_t episodes = 100;
  std::uint64_t eval_seed = 12345;
  auto* eval = app.add_subcommand("eval", "evaluate the stochastic policy of a checkpoint");
  eval->add_option("--ckpt", ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--episodes", episodes, "episodes")->check(CLI::NonNegativeNumber);
  eval->add_option("--seed", eval_seed, "first environment seed");
  eval->add_option("--out", eval_out, "per-episode CSV");

  std::string scores, refs, agg_out, fractions_out;
  std::int64_t resamples = 10000;
  std::uint64_t boot_seed = 0;
  auto* metrics = app.add_subcommand("metrics", "human-normalized aggregates with bootstrap intervals");
  metrics->add_option("--scores", scores, "CSV game,run,score")->required()->check(CLI::ExistingFile);
  metrics->add_option("--refs", refs, "CSV game,random,human")->required()->check(CLI::ExistingFile);
  metrics->add_option("--out", agg_out, "aggregate CSV")->required();
  metrics->add_option("--fractions", fractions_out, "score-distribution CSV (fraction of runs above x)");
  metrics->add_option("--resamples", resamples, "bootstrap resamples")->check(CLI::NonNegativeNumber);
  metrics->add_option("--seed", boot_seed, "bootstrap seed");

  std::string attn_ckpt, traj, attn_out;
  std::int64_t attn_start = -1, attn_steps = 0;
  std::uint64_t attn_seed = 0;
  auto* attn = app.add_subcommand("attn", "attention rollout over a trajectory");
  attn->add_option("--ckpt", attn_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  attn->add_option("--traj", traj, "dataset file (.twmd) or 'live'")->required();
  attn->add_option("--out", attn_out, "output directory")->required();
  attn->add_option("--start", attn_start, "first dataset index (default: last window)");
  attn->add_option("--steps", attn_steps, "trajectory length (default: l)");
  attn->add_option("--seed", attn_seed, "env and latent seed");

  std::string im_ckpt, im_env, im_out;
  std::int64_t im_steps = 0, im_samples = 1, im_warmup = 8;
  std::uint64_t im_seed = 0;
  auto* imagine = app.add_subcommand("imagine", "decode imagined trajectories from a real start state");
  imagine->add_option("--ckpt", im_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  imagine->add_option("--env", im_env, "environment id (default: the checkpoint's)");
  imagine->add_option("--steps", im_steps, "imagined steps")->required()->check(CLI::NonNegativeNumber);
  imagine->add_option("--samples", im_samples, "samples from the same start")->check(CLI::PositiveNumber);
  imagine->add_option("--seed", im_seed, "env reset and imagination seed");
  imagine->add_option("--warmup", im_warmup, "random env steps before the start state")->check(CLI::NonNegativeNumber);
  imagine->add_option("--out", im_out, "output directory")->required();

  std::string bench_mode = "both", bench_out;
  std::vector<std::string> bench_sets;
  std::int64_t bench_batch = 64, bench_horizon = 15;
  int bench_repeats = 2;
  auto* bench = app.add_subcommand("bench", "cached vs vanilla imagination throughput");
  bench->add_option("--mode", bench_mode, "cached|vanilla|both")
      ->check(CLI::IsMember({"cached", "vanilla", "both"}));
  bench->add_option("--out", bench_out, "report CSV")->required();
  bench->add_option("--set", bench_sets, "model config override, key=value (repeatable)");
  bench->add_option("--batch", bench_batch, "imagined trajectories per rollout")->check(CLI::PositiveNumber);
  bench->add_option("--horizon", bench_horizon, "imagination horizon")->check(CLI::PositiveNumber);
  bench->add_option("--repeats", bench_repeats, "timed repeats, best kept")->check(CLI::PositiveNumber);

  int kl_trials = 100;
  std::uint64_t kl_seed = 0;
  auto* verify_kl = app.add_subcommand("verify-kl", "check the balanced KL / cross-entropy gradient identity");
  verify_kl->add_option("--trials", kl_trials, "random trials")->check(CLI::PositiveNumber);
  verify_kl->add_option("--seed", kl_seed, "seed");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(config_path, sets, out_dir);
    if (*eval) return cmd_eval(ckpt, episodes, eval_seed, eval_out);
    if (*metrics) return cmd_metrics(scores, refs, agg_out, resamples, boot_seed, fractions_out);
    if (*attn) return cmd_attn(attn_ckpt, traj, attn_start, attn_steps, attn_seed, attn_out);
    if (*imagine) return cmd_imagine(im_ckpt, im_env, im_steps, im_samples, im_seed, im_warmup, im_out);
    if (*bench) return cmd_bench(bench_mode, bench_sets, bench_batch, bench_horizon, bench_repeats, bench_out);
    if (*verify_kl) return cmd_verify_kl(kl_trials, kl_seed);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
