#pragma once

#include <functional>

#include "twm/dynamics/transformer.hpp"
#include "twm/numerics/distributions.hpp"

namespace twm {

struct DynamicsConfig {
  int latent_vars = 32;     // K
  int latent_classes = 32;  // C
  int actions = 2;          // m
  int seq_len = 16;         // l
  TransformerConfig transformer;  // mem_len <= 0 selects 3l - 1
  int latent_units = 512, latent_layers = 4;
  int reward_units = 256, reward_layers = 4;
  int discount_units = 256, discount_layers = 4;
  double gamma = 0.99;
  double unimix = kDefaultUnimix;
  bool reward_tokens = true;

  std::int64_t latent_size() const { return static_cast<std::int64_t>(latent_vars) * latent_classes; }
  /// Tokens for l steps: 3l - 1, or 2l without reward tokens.
  std::int64_t tokens_for(std::int64_t steps) const { return reward_tokens ? 3 * steps - 1 : 2 * steps; }
  void validate() const;
};

/// One training window of already-encoded steps. All tensors are constants.
template <typename T>
struct DynamicsBatch {
  Tensor<T> z;                      // [B, T, K, C] posterior samples
  Tensor<T> posterior_probs;        // [B, T, K, C]
  std::vector<std::int64_t> actions;  // B*T
  Tensor<T> rewards;                // [B, T]
  Tensor<T> continues;              // [B, T], 0 where the episode ended
};

template <typename T>
struct DynamicsOutputs {
  Tensor<T> h;                      // [B, T, D]
  CategoricalVector<T> latent;      // next-latent prior, [B, T, K, C]
  Tensor<T> reward;                 // [B, T]
  Tensor<T> discount_logit;         // [B, T]
};

struct DynamicsLossTerms {
  double total = 0, latent = 0, reward = 0, discount = 0;
};

enum class ImagineMode { kCached, kVanilla };

/// Imagined rollout of M trajectories with H transitions.
template <typename T>
struct ImaginedBatch {
  std::int64_t m = 0, horizon = 0;
  Tensor<T> z;       // [H+1, M, K*C]
  Tensor<T> h_prev;  // [H+1, M, D]; entry t is h_{t-1}, zeros at t = 0
  Tensor<T> h;       // [H, M, D]
  std::vector<std::int64_t> actions;  // H*M, time-major
  Tensor<T> rewards;                  // [H, M] predicted means
  Tensor<T> discounts;                // [H, M] gamma * p(continue)
};

/// Chooses an action per row from z [M, K*C] and h_{t-1} [M, D].
template <typename T>
using ImaginationPolicy = std::function<std::vector<std::int64_t>(const Tensor<T>& z, const Tensor<T>& h_prev)>;

/// Aggregation model over interleaved (z, a, r) tokens and the latent,
/// reward and discount heads.
template <typename T>
class DynamicsModel {
 public:
  DynamicsModel(const DynamicsConfig& config, Rng& init_rng);

  const DynamicsConfig& config() const { return config_; }
  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }
  const TransformerXL<T>& transformer() const { return transformer_; }
  std::int64_t hidden_size() const { return config_.transformer.model_dim; }

  /// Embeds z [B,T,K*C] (or [B,T,K,C]), actions (B*T) and rewards [B,T-1]
  /// into the interleaved token sequence [B, tokens, D].
  Tensor<T> embed(const Tensor<T>& z, std::span<const std::int64_t> actions, const Tensor<T>& rewards) const;
  /// Hidden states at the action tokens, [B, T, D]. Without a memory the
  /// window starts at position 0.
  Tensor<T> aggregate(const Tensor<T>& z, std::span<const std::int64_t> actions, const Tensor<T>& rewards,
                      XLMemory<T>* memory = nullptr, std::vector<Tensor<T>>* attention = nullptr) const;
  /// Heads applied to h [..., D].
  DynamicsOutputs<T> predict(const Tensor<T>& h) const;
  /// gamma * sigmoid(logit).
  Tensor<T> discount(const Tensor<T>& logit) const;

  /// One cached step: tokens ([r_{t-1}], z_t, a_t) through `memory`; returns
  /// h_t [M, D]. Pass no reward on the first step of a sequence.
  Tensor<T> step(const Tensor<T>& z, std::span<const std::int64_t> actions, const Tensor<T>* prev_reward,
                 XLMemory<T>& memory) const;

  /// Runs the rollout. Must be called without gradient recording.
  ImaginedBatch<T> imagine(const Tensor<T>& initial_z, const ImaginationPolicy<T>& policy, std::int64_t horizon,
                           Rng& rng, ImagineMode mode = ImagineMode::kCached) const;

  /// Token indices of the action tokens for T steps.
  std::vector<std::int64_t> action_token_positions(std::int64_t steps) const;

 private:
  Tensor<T> embed_step(const Tensor<T>& z, std::span<const std::int64_t> actions, const Tensor<T>* reward) const;

  DynamicsConfig config_;
  ParameterSet<T> params_;
  nn::Linear<T> z_embed_, r_embed_;
  Tensor<T> a_embed_;  // [m, D]
  TransformerXL<T> transformer_;
  nn::Mlp<T> latent_head_, reward_head_, discount_head_;
};

/// Mean over B*T of CE(sg(q_{t+1}), p_t) + beta1 * 0.5 (r_t - r^_t)^2 +
/// beta2 * BernoulliNLL(continue_t). The final step has no next posterior and
/// contributes no latent term.
template <typename T>
Tensor<T> dynamics_loss(const DynamicsModel<T>& model, const DynamicsBatch<T>& batch, double beta1, double beta2,
                        DynamicsLossTerms* terms = nullptr, DynamicsOutputs<T>* outputs = nullptr);

}  // namespace twm
