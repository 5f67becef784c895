#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "twm/agent/actor_critic.hpp"
#include "twm/dynamics/dynamics_model.hpp"
#include "twm/envs/preprocess.hpp"
#include "twm/observation/observation_model.hpp"

namespace twm {

/// Every knob of a run. Defaults are the full-size values; desk configs
/// override them from a key = value file.
struct TrainConfig {
  // environment
  std::string env = "minipong";
  int raw_size = 64;
  int frame_size = 64;
  int frame_stack = 4;
  int frame_skip = 4;
  std::int64_t max_episode_steps = 0;  // 0 keeps the environment's own limit
  bool terminate_on_life_loss = true;
  int max_noops = 30;
  std::string reward_transform = "none";

  // schedule
  std::uint64_t seed = 0;
  std::int64_t env_steps = 100000;
  std::int64_t prefill_steps = 5000;
  std::int64_t pretrain_steps = 1000;
  std::int64_t train_every = 16;  // env steps per training iteration
  int wm_updates = 1;             // world-model updates per iteration
  int agent_updates = 1;          // agent updates per world-model update
  std::int64_t eval_episodes = 100;
  std::int64_t log_every = 50;

  // Table 10
  double tau = 20.0;
  double gamma = 0.99;
  double lambda = 0.95;
  int batch_size = 100;  // N
  int seq_len = 16;      // l
  int imag_batch = 400;  // M
  int horizon = 15;      // H
  double alpha1 = 5.0;
  double alpha2 = 0.01;
  double beta1 = 10.0;
  double beta2 = 50.0;
  double eta = 0.01;
  double entropy_threshold = 0.1;  // Gamma
  double lr_obs = 1e-4;
  double lr_dyn = 1e-4;
  double lr_actor = 1e-4;
  double lr_critic = 1e-5;
  double clip_norm = 100.0;
  double unimix = 0.01;

  // networks
  int latent_vars = 32;
  int latent_classes = 32;
  int enc_channels = 28;
  int enc_stages = 4;
  int xl_layers = 10;
  int xl_dim = 256;
  int xl_heads = 4;
  int xl_head_dim = 64;
  int xl_ff = 1024;
  int mem_len = 0;  // 0 selects 3l - 1
  int latent_units = 512, latent_layers = 4;
  int reward_units = 256, reward_layers = 4;
  int discount_units = 256, discount_layers = 4;
  int actor_units = 512, actor_layers = 4;
  int critic_units = 512, critic_layers = 4;

  // ablations
  bool uniform_sampling = false;
  bool no_reward_tokens = false;
  std::string policy_input = "z";
  bool entropy_threshold_off = false;
  bool weights_include_gamma = false;
  std::string imagine_mode = "cached";

  void validate() const;

  /// Canonical "key = value" text, one line per field in a fixed order.
  std::string canonical_text() const;
  /// Same keys with a comment line per field (symbols and meaning).
  std::string annotated_text() const;

  /// Applies one "key = value" assignment.
  void set(const std::string& key, const std::string& value);
  /// Parses key = value text; '#' starts a comment.
  static TrainConfig parse(const std::string& text);
  static TrainConfig load(const std::filesystem::path& path);
  static std::vector<std::string> keys();

  // derived settings
  int action_count() const;
  envs::PreprocessConfig preprocess() const;
  ObservationConfig observation() const;
  DynamicsConfig dynamics() const;
  AgentConfig agent() const;
  /// tau, or infinity under uniform sampling.
  double sampling_temperature() const;
  ImagineMode imagine() const;
};

}  // namespace twm
