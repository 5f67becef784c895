#pragma once

#include "twm/dynamics/dynamics_model.hpp"
#include "twm/numerics/nn.hpp"

namespace twm {

enum class PolicyInput { kZ, kZAndH };

struct AgentConfig {
  int actions = 2;                 // m
  std::int64_t latent_size = 1024; // K*C
  std::int64_t hidden_size = 256;  // D, only read for PolicyInput::kZAndH
  PolicyInput policy_input = PolicyInput::kZ;
  int actor_units = 512, actor_layers = 4;
  int critic_units = 512, critic_layers = 4;
  double gamma = 0.99;
  double lambda = 0.95;
  double entropy_coef = 0.01;       // eta
  double entropy_threshold = 0.1;   // Gamma
  /// Loss weights prod_{k<t} gamma^_k instead of prod_{k<t} gamma^_k / gamma.
  bool weights_include_gamma = false;

  std::int64_t input_size() const { return policy_input == PolicyInput::kZ ? latent_size : latent_size + hidden_size; }
  void validate() const;
};

struct GaeResult {
  std::vector<double> advantages;  // H
  std::vector<double> returns;     // H
};

/// One trajectory: rewards and discounts of length H, values of length H+1.
GaeResult gae(std::span<const double> rewards, std::span<const double> values, std::span<const double> discounts,
              double lambda);

/// max(0, Gamma - H / ln m) with H the mean entropy of the given action
/// distributions (probs [N, m], log_probs [N, m]).
template <typename T>
Tensor<T> thresholded_entropy_loss(const Tensor<T>& probs, const Tensor<T>& log_probs, double threshold);

struct ActorCriticTerms {
  double actor = 0, critic = 0, entropy_penalty = 0, entropy = 0, advantage_mean = 0, return_mean = 0;
};

/// Constants derived from an imagined batch; time-major, H*M entries.
struct ActorCriticTargets {
  std::vector<double> advantages, returns, weights;
  double advantage_mean = 0, return_mean = 0;
};

template <typename T>
struct ActorCriticLosses {
  Tensor<T> actor;
  Tensor<T> critic;
  ActorCriticTerms terms;
};

/// Policy and value networks over z (or [z, h_{t-1}]).
template <typename T>
class ActorCritic {
 public:
  ActorCritic(const AgentConfig& config, Rng& init_rng);

  const AgentConfig& config() const { return config_; }
  ParameterSet<T>& actor_params() { return actor_params_; }
  ParameterSet<T>& critic_params() { return critic_params_; }
  const ParameterSet<T>& actor_params() const { return actor_params_; }
  const ParameterSet<T>& critic_params() const { return critic_params_; }

  /// Builds the network input from z [N, K*C] and h_{t-1} [N, D].
  Tensor<T> policy_state(const Tensor<T>& z, const Tensor<T>& h_prev) const;
  Tensor<T> logits(const Tensor<T>& state) const { return actor_(state); }
  Tensor<T> value(const Tensor<T>& state) const;  // [N]

  /// Samples one action per row from the stochastic policy.
  std::vector<std::int64_t> act(const Tensor<T>& state, Rng& rng) const;

  /// GAE advantages, lambda-returns and discount weights under the current critic.
  ActorCriticTargets targets(const ImaginedBatch<T>& batch) const;
  /// Losses on an imagined batch; advantages and returns are constants.
  ActorCriticLosses<T> losses(const ImaginedBatch<T>& batch) const { return losses(batch, targets(batch)); }
  ActorCriticLosses<T> losses(const ImaginedBatch<T>& batch, const ActorCriticTargets& targets) const;

 private:
  Tensor<T> states(const ImaginedBatch<T>& batch) const;

  AgentConfig config_;
  ParameterSet<T> actor_params_, critic_params_;
  nn::Mlp<T> actor_, critic_;
};

}  // namespace twm
