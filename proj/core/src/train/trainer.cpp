#include "twm/train/trainer.hpp"

#include <cmath>
#include <numeric>

namespace twm {

namespace {

Tensor<float> make_row(const std::vector<float>& v, std::int64_t b, std::int64_t t) { return Tensor<float>::from({b, t}, v); }

}  // namespace

Models::Models(const TrainConfig& cfg) : Models(cfg, stream(cfg.seed, kInit)) {}

Models::Models(const TrainConfig& cfg, Rng init_rng)
    : config(cfg),
      observation(cfg.observation(), init_rng),
      dynamics(cfg.dynamics(), init_rng),
      agent(cfg.agent(), init_rng) {}

Tensor<float> observation_tensor(const envs::Observation& obs) {
  const std::size_t hw = static_cast<std::size_t>(obs.height) * obs.width;
  std::vector<float> v(hw * obs.stack);
  for (int s = 0; s < obs.stack; ++s)
    for (std::size_t i = 0; i < hw; ++i) v[s * hw + i] = obs.values[i * obs.stack + s];
  return Tensor<float>::from({1, obs.stack, obs.height, obs.width}, std::move(v));
}

// ---- PolicyRunner

PolicyRunner::PolicyRunner(const ObservationModel<float>& observation, const ActorCritic<float>& agent,
                           const DynamicsModel<float>* dynamics)
    : observation_(observation),
      agent_(agent),
      dynamics_(agent.config().policy_input == PolicyInput::kZAndH ? dynamics : nullptr) {
  if (agent.config().policy_input == PolicyInput::kZAndH && !dynamics)
    throw UsageError("a policy on z_and_h needs the dynamics model");
  begin_episode();
}

void PolicyRunner::begin_episode() {
  first_ = true;
  if (dynamics_) {
    memory_ = dynamics_->transformer().new_memory(1);
    h_prev_ = Tensor<float>::zeros({1, dynamics_->hidden_size()});
  }
}

void PolicyRunner::encode(const envs::Observation& obs, Rng& latent_rng) {
  NoGradGuard no_grad;
  z_ = reshape(observation_.posterior(observation_tensor(obs)).sample(latent_rng), {1, agent_.config().latent_size});
}

void PolicyRunner::record(const envs::Observation& obs, Rng& latent_rng, std::int64_t action) {
  if (!dynamics_) return;
  encode(obs, latent_rng);
  action_ = action;
}

std::int64_t PolicyRunner::act(const envs::Observation& obs, Rng& latent_rng, Rng& policy_rng) {
  encode(obs, latent_rng);
  NoGradGuard no_grad;
  const auto h = dynamics_ ? h_prev_ : Tensor<float>::zeros({1, 1});
  action_ = agent_.act(agent_.policy_state(z_, h), policy_rng).at(0);
  return action_;
}

void PolicyRunner::observe(double reward) {
  if (!dynamics_) return;
  NoGradGuard no_grad;
  const std::int64_t a[1] = {action_};
  h_prev_ = dynamics_->step(z_, a, first_ ? nullptr : &prev_reward_, memory_);
  prev_reward_ = Tensor<float>::from({1}, {static_cast<float>(reward)});
  first_ = false;
}

// ---- Trainer

Trainer::Trainer(TrainConfig config)
    : dataset_(config.frame_size, config.frame_size, config.frame_stack, std::max<std::int64_t>(config.env_steps, 1),
               config.sampling_temperature()),
      env_rng_(stream(config.seed, kEnv)),
      sampler_rng_(stream(config.seed, kSampler)),
      latent_rng_(stream(config.seed, kLatent)),
      policy_rng_(stream(config.seed, kPolicy)),
      imagine_rng_(stream(config.seed, kImagine)) {
  config.validate();
  models_ = std::make_unique<Models>(config);
  env_ = envs::make_environment(config.env, config.raw_size, config.preprocess());
  runner_ = std::make_unique<PolicyRunner>(models_->observation, models_->agent, &models_->dynamics);
}

void Trainer::start_episode() {
  current_ = env_->reset(env_rng_.next_u64());
  episode_score_ = 0;
  runner_->begin_episode();
}

void Trainer::collect(std::int64_t steps, bool random_policy) {
  const int m = models_->config.action_count();
  for (std::int64_t i = 0; i < steps; ++i) {
    if (env_->done()) start_episode();
    std::int64_t action;
    if (random_policy) {
      action = policy_rng_.index(m);
      runner_->record(current_, latent_rng_, action);
    } else {
      action = runner_->act(current_, latent_rng_, policy_rng_);
    }
    const auto frame = env_->latest_frame();
    auto st = env_->step(static_cast<int>(action));
    dataset_.append(frame, action, static_cast<float>(st.reward), st.done);
    runner_->observe(st.reward);
    episode_score_ += st.reward;
    current_ = std::move(st.observation);
    ++counters_.env_steps;
    if (st.done) {
      episodes_.push_back({counters_.env_steps, episode_score_, env_->episode_steps()});
      ++counters_.episodes;
    }
  }
}

WorldModelStep Trainer::train_world_model() {
  const auto& cfg = models_->config;
  auto& obs_model = models_->observation;
  auto& dyn = models_->dynamics;
  const std::int64_t n = cfg.batch_size, l = cfg.seq_len, k = cfg.latent_vars, c = cfg.latent_classes;
  if (dataset_.size() < l) throw DataError("dataset holds fewer entries than one sequence");

  auto batch = dataset_.sample_sequences(n, l, sampler_rng_);
  auto obs = frames_to_tensor<float>(batch.frames, n * l, cfg.frame_stack, cfg.frame_size, cfg.frame_size);
  auto latent = obs_model.encode(obs, latent_rng_, true);

  DynamicsBatch<float> db;
  db.z = reshape(latent.sample.detach(), {n, l, k, c});
  db.posterior_probs = reshape(latent.dist.probs().detach(), {n, l, k, c});
  db.actions = batch.actions;
  std::vector<float> cont(batch.dones.size());
  for (std::size_t i = 0; i < cont.size(); ++i) cont[i] = batch.dones[i] ? 0.0f : 1.0f;
  db.rewards = make_row(batch.rewards, n, l);
  db.continues = make_row(cont, n, l);

  WorldModelStep out;
  DynamicsOutputs<float> outputs;
  auto dyn_loss = dynamics_loss(dyn, db, cfg.beta1, cfg.beta2, &out.dynamics, &outputs);
  Tensor<float> prior;
  if (l > 1) prior = slice(outputs.latent.log_probs(), 1, 0, l - 1).detach();
  auto recon = obs_model.decode(latent.sample);
  auto obs_loss = observation_loss(obs, recon, latent.dist, prior, n, l, cfg.alpha1, cfg.alpha2, &out.observation);

  obs_model.params().zero_grad();
  dyn.params().zero_grad();
  add(obs_loss, dyn_loss).backward();
  out.observation_grad_norm = adam_.step(obs_model.params(), cfg.lr_obs, cfg.clip_norm);
  out.dynamics_grad_norm = adam_.step(dyn.params(), cfg.lr_dyn, cfg.clip_norm);
  out.latents = reshape(db.z, {n * l, k * c});
  ++counters_.wm_updates;
  return out;
}

AgentStep Trainer::train_agent(const WorldModelStep& wm) {
  const auto& cfg = models_->config;
  auto& agent = models_->agent;
  const std::int64_t total = wm.latents.dim(0), m = cfg.imag_batch;
  if (m > total) throw UsageError("imag_batch exceeds the number of world-model latents");

  // M distinct starts: partial Fisher-Yates
  std::vector<std::int64_t> idx(total);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::int64_t i = 0; i < m; ++i) std::swap(idx[i], idx[i + imagine_rng_.index(total - i)]);
  idx.resize(m);

  ImaginedBatch<float> batch;
  ActorCriticTargets targets;
  {
    NoGradGuard no_grad;
    auto z0 = index_select(wm.latents, 0, idx);
    ImaginationPolicy<float> policy = [&](const Tensor<float>& z, const Tensor<float>& h_prev) {
      return agent.act(agent.policy_state(z, h_prev), policy_rng_);
    };
    batch = models_->dynamics.imagine(z0, policy, cfg.horizon, imagine_rng_, cfg.imagine());
    targets = agent.targets(batch);
  }
  auto losses = agent.losses(batch, targets);
  agent.actor_params().zero_grad();
  agent.critic_params().zero_grad();
  losses.actor.backward();
  losses.critic.backward();
  adam_.step(agent.actor_params(), cfg.lr_actor, cfg.clip_norm);
  adam_.step(agent.critic_params(), cfg.lr_critic, cfg.clip_norm);

  AgentStep out;
  out.terms = losses.terms;
  out.normalized_entropy = losses.terms.entropy / std::log(static_cast<double>(agent.config().actions));
  out.imagined_reward = static_cast<double>(mean(batch.rewards).item());
  out.imagined_discount = static_cast<double>(mean(batch.discounts).item());
  ++counters_.agent_updates;
  entropy_history_.emplace_back(counters_.env_steps, out.normalized_entropy);
  return out;
}

void Trainer::pretrain(std::int64_t updates) {
  for (std::int64_t i = 0; i < updates; ++i) train_world_model();
}

void Trainer::run(const std::function<void(const LogRow&)>& on_log) {
  const auto& cfg = models_->config;
  const auto start = std::chrono::steady_clock::now();
  collect(cfg.prefill_steps, true);
  pretrain(cfg.pretrain_steps);
  while (counters_.env_steps < cfg.env_steps) {
    collect(std::min(cfg.train_every, cfg.env_steps - counters_.env_steps), false);
    LogRow row;
    for (int u = 0; u < cfg.wm_updates; ++u) {
      row.wm = train_world_model();
      for (int a = 0; a < cfg.agent_updates; ++a) row.agent = train_agent(row.wm);
    }
    ++counters_.iterations;
    if (on_log && (counters_.iterations % cfg.log_every == 0 || counters_.env_steps >= cfg.env_steps)) {
      row.counters = counters_;
      row.recent_score = std::nan("");
      if (!episodes_.empty()) {
        const std::size_t k = std::min<std::size_t>(10, episodes_.size());
        double s = 0;
        for (std::size_t i = episodes_.size() - k; i < episodes_.size(); ++i) s += episodes_[i].score;
        row.recent_score = s / static_cast<double>(k);
      }
      row.elapsed_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      on_log(row);
    }
  }
}

// ---- evaluation

double EvalResult::mean() const {
  if (scores.empty()) return std::nan("");
  return std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
}

EvalResult evaluate_policy(const TrainConfig& config, const ObservationModel<float>& observation,
                           const ActorCritic<float>& agent, const DynamicsModel<float>* dynamics,
                           std::int64_t episodes, std::uint64_t seed) {
  if (episodes < 0) throw UsageError("episode count must be >= 0");
  auto env = envs::make_environment(config.env, config.raw_size, config.preprocess());
  PolicyRunner runner(observation, agent, dynamics);
  Rng latent_rng = stream(seed, kLatent), policy_rng = stream(seed, kPolicy);
  EvalResult out;
  for (std::int64_t e = 0; e < episodes; ++e) {
    auto obs = env->reset(seed + static_cast<std::uint64_t>(e));
    runner.begin_episode();
    double score = 0;
    while (!env->done()) {
      auto st = env->step(static_cast<int>(runner.act(obs, latent_rng, policy_rng)));
      runner.observe(st.reward);
      score += st.reward;
      obs = std::move(st.observation);
    }
    out.scores.push_back(score);
    out.lengths.push_back(env->episode_steps());
  }
  return out;
}

ExperienceDataset collect_episodes(const Models& models, std::int64_t episodes, std::uint64_t seed) {
  const auto& cfg = models.config;
  auto env = envs::make_environment(cfg.env, cfg.raw_size, cfg.preprocess());
  PolicyRunner runner(models.observation, models.agent, &models.dynamics);
  Rng latent_rng = stream(seed, kLatent), policy_rng = stream(seed, kPolicy);
  const auto cap = episodes * env->spec().max_episode_steps;
  ExperienceDataset data(cfg.frame_size, cfg.frame_size, cfg.frame_stack, std::max<std::int64_t>(cap, 1), cfg.tau);
  for (std::int64_t e = 0; e < episodes; ++e) {
    auto obs = env->reset(seed + static_cast<std::uint64_t>(e));
    runner.begin_episode();
    while (!env->done()) {
      const auto a = runner.act(obs, latent_rng, policy_rng);
      const auto frame = env->latest_frame();
      auto st = env->step(static_cast<int>(a));
      data.append(frame, a, static_cast<float>(st.reward), st.done);
      runner.observe(st.reward);
      obs = std::move(st.observation);
    }
  }
  return data;
}

DynamicsLossTerms evaluate_dynamics(const ObservationModel<float>& observation, const DynamicsModel<float>& dynamics,
                                    const ExperienceDataset& data, double beta1, double beta2, std::uint64_t seed) {
  NoGradGuard no_grad;
  const auto& dc = dynamics.config();
  const std::int64_t l = dc.seq_len, k = dc.latent_vars, c = dc.latent_classes;
  const std::int64_t windows = data.size() / l;
  if (windows < 1) throw UsageError("evaluate_dynamics: dataset shorter than one sequence");
  Rng rng = stream(seed, kLatent);
  DynamicsLossTerms acc;
  constexpr std::int64_t kChunk = 32;
  for (std::int64_t w0 = 0; w0 < windows; w0 += kChunk) {
    const std::int64_t n = std::min(kChunk, windows - w0);
    std::vector<std::int64_t> starts(n);
    for (std::int64_t i = 0; i < n; ++i) starts[i] = (w0 + i) * l;
    auto batch = data.gather(starts, l);
    const auto& oc = observation.config();
    auto latent = observation.encode(frames_to_tensor<float>(batch.frames, n * l, oc.stack, oc.height, oc.width), rng);
    DynamicsBatch<float> db;
    db.z = reshape(latent.sample, {n, l, k, c});
    db.posterior_probs = reshape(latent.dist.probs(), {n, l, k, c});
    db.actions = batch.actions;
    std::vector<float> cont(batch.dones.size());
    for (std::size_t i = 0; i < cont.size(); ++i) cont[i] = batch.dones[i] ? 0.0f : 1.0f;
    db.rewards = make_row(batch.rewards, n, l);
    db.continues = make_row(cont, n, l);
    DynamicsLossTerms t;
    dynamics_loss(dynamics, db, beta1, beta2, &t);
    const double wgt = static_cast<double>(n) / static_cast<double>(windows);
    acc.total += wgt * t.total;
    acc.latent += wgt * t.latent;
    acc.reward += wgt * t.reward;
    acc.discount += wgt * t.discount;
  }
  return acc;
}

}  // namespace twm
