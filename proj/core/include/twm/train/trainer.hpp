#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <optional>

#include "twm/agent/actor_critic.hpp"
#include "twm/dynamics/dynamics_model.hpp"
#include "twm/envs/preprocess.hpp"
#include "twm/numerics/optim.hpp"
#include "twm/observation/observation_model.hpp"
#include "twm/replay/dataset.hpp"
#include "twm/train/config.hpp"

namespace twm {

/// Independent RNG streams derived from one run seed.
enum Stream : std::uint64_t { kInit = 1, kEnv, kSampler, kLatent, kPolicy, kImagine };

inline Rng stream(std::uint64_t seed, Stream s) { return Rng(seed).split(s); }

struct RunCounters {
  std::int64_t env_steps = 0;
  std::int64_t episodes = 0;
  std::int64_t wm_updates = 0;
  std::int64_t agent_updates = 0;
  std::int64_t iterations = 0;
};

/// Encoder, dynamics model and actor-critic of one run.
struct Models {
  explicit Models(const TrainConfig& config);
  Models(const TrainConfig& config, Rng init_rng);

  TrainConfig config;
  ObservationModel<float> observation;
  DynamicsModel<float> dynamics;
  ActorCritic<float> agent;
};

/// Observation (H x W x S) as a [1, S, H, W] tensor.
Tensor<float> observation_tensor(const envs::Observation& obs);

/// Acts in the real environment from pixels: encode, optionally track h_t
/// with a rolling transformer memory (policy input z_and_h), sample.
class PolicyRunner {
 public:
  /// `dynamics` may be null when the policy reads z only.
  PolicyRunner(const ObservationModel<float>& observation, const ActorCritic<float>& agent,
               const DynamicsModel<float>* dynamics);

  void begin_episode();
  /// Chooses a_t for o_t.
  std::int64_t act(const envs::Observation& obs, Rng& latent_rng, Rng& policy_rng);
  /// Registers an action chosen elsewhere (random prefill) so the memory
  /// stays in step; no-op for a policy on z.
  void record(const envs::Observation& obs, Rng& latent_rng, std::int64_t action);
  /// Advances the memory with (r_{t-1}, z_t, a_t) for a policy on z_and_h.
  /// Call after the environment step with the reward it returned.
  void observe(double reward);
  bool uses_hidden() const { return dynamics_ != nullptr; }

 private:
  void encode(const envs::Observation& obs, Rng& latent_rng);

  const ObservationModel<float>& observation_;
  const ActorCritic<float>& agent_;
  const DynamicsModel<float>* dynamics_;
  XLMemory<float> memory_;
  Tensor<float> z_, h_prev_, prev_reward_;
  std::int64_t action_ = 0;
  bool first_ = true;
};

struct WorldModelStep {
  Tensor<float> latents;  // [N*l, K*C] posterior samples, detached
  ObservationLossTerms observation;
  DynamicsLossTerms dynamics;
  double observation_grad_norm = 0, dynamics_grad_norm = 0;
};

struct AgentStep {
  ActorCriticTerms terms;
  double normalized_entropy = 0;  // mean policy entropy / ln m over imagined states
  double imagined_reward = 0;
  double imagined_discount = 0;
};

struct EpisodeRecord {
  std::int64_t end_step = 0;  // env steps taken when the episode ended
  double score = 0;           // undiscounted, untransformed return
  std::int64_t length = 0;
};

struct LogRow {
  RunCounters counters;
  WorldModelStep wm;
  AgentStep agent;
  double recent_score = 0;  // mean of the last 10 episodes, NaN before the first
  double elapsed_seconds = 0;
};

/// One training run: real-environment collection, world-model updates on
/// replayed sequences and actor-critic updates in imagination.
class Trainer {
 public:
  explicit Trainer(TrainConfig config);

  const TrainConfig& config() const { return models_->config; }
  Models& models() { return *models_; }
  const Models& models() const { return *models_; }
  ExperienceDataset& dataset() { return dataset_; }
  const RunCounters& counters() const { return counters_; }
  RunCounters& mutable_counters() { return counters_; }
  const std::vector<EpisodeRecord>& episodes() const { return episodes_; }
  /// (env step, normalized entropy) after every agent update.
  const std::vector<std::pair<std::int64_t, double>>& entropy_history() const { return entropy_history_; }

  /// Takes `steps` environment steps, storing every transition.
  void collect(std::int64_t steps, bool random_policy);
  WorldModelStep train_world_model();
  /// Imagines from M distinct latents of the given world-model batch.
  AgentStep train_agent(const WorldModelStep& wm);
  void pretrain(std::int64_t updates);
  /// Prefill, pretraining, then alternating collection and updates until
  /// the env-step budget is spent. `on_log` sees every log_every-th iteration.
  void run(const std::function<void(const LogRow&)>& on_log = {});

 private:
  void start_episode();

  std::unique_ptr<Models> models_;
  ExperienceDataset dataset_;
  Adam adam_;
  Rng env_rng_, sampler_rng_, latent_rng_, policy_rng_, imagine_rng_;
  std::unique_ptr<envs::PixelEnvironment> env_;
  std::unique_ptr<PolicyRunner> runner_;
  envs::Observation current_;
  double episode_score_ = 0;
  RunCounters counters_;
  std::vector<EpisodeRecord> episodes_;
  std::vector<std::pair<std::int64_t, double>> entropy_history_;
};

struct EvalResult {
  std::vector<double> scores;
  std::vector<std::int64_t> lengths;
  double mean() const;
};

/// Runs the stochastic policy for `episodes` episodes on fresh environments
/// seeded seed, seed+1, ...; needs only the encoder and the actor unless the
/// policy reads h.
EvalResult evaluate_policy(const TrainConfig& config, const ObservationModel<float>& observation,
                           const ActorCritic<float>& agent, const DynamicsModel<float>* dynamics,
                           std::int64_t episodes, std::uint64_t seed);

/// Dataset of `episodes` complete episodes played by the policy, for
/// held-out world-model measurements.
ExperienceDataset collect_episodes(const Models& models, std::int64_t episodes, std::uint64_t seed);

/// Dynamics loss terms averaged over consecutive non-overlapping windows of
/// length l covering the dataset, with targets from the given encoder.
DynamicsLossTerms evaluate_dynamics(const ObservationModel<float>& observation, const DynamicsModel<float>& dynamics,
                                    const ExperienceDataset& data, double beta1, double beta2, std::uint64_t seed);

}  // namespace twm
