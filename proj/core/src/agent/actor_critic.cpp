#include "twm/agent/actor_critic.hpp"

#include <cmath>

namespace twm {

void AgentConfig::validate() const {
  if (actions < 2) throw ConfigError("agent needs m >= 2 actions");
  if (latent_size <= 0) throw ConfigError("latent size must be positive");
  if (policy_input == PolicyInput::kZAndH && hidden_size <= 0) throw ConfigError("hidden size must be positive");
  if (lambda < 0.0 || lambda > 1.0) throw ConfigError("lambda must be in [0, 1]");
  if (gamma <= 0.0 || gamma > 1.0) throw ConfigError("gamma must be in (0, 1]");
  if (entropy_threshold < 0.0 || entropy_threshold > 1.0) throw ConfigError("entropy threshold must be in [0, 1]");
  if (entropy_coef < 0.0) throw ConfigError("entropy coefficient must be >= 0");
}

GaeResult gae(std::span<const double> rewards, std::span<const double> values, std::span<const double> discounts,
              double lambda) {
  const std::size_t h = rewards.size();
  if (discounts.size() != h || values.size() != h + 1)
    throw UsageError("gae: need H rewards, H discounts and H+1 values");
  GaeResult out{std::vector<double>(h), std::vector<double>(h)};
  double next = 0.0;
  for (std::size_t i = h; i-- > 0;) {
    const double delta = rewards[i] + discounts[i] * values[i + 1] - values[i];
    next = delta + discounts[i] * lambda * next;
    out.advantages[i] = next;
    out.returns[i] = next + values[i];
  }
  return out;
}

template <typename T>
Tensor<T> thresholded_entropy_loss(const Tensor<T>& probs, const Tensor<T>& log_probs, double threshold) {
  const auto m = probs.dim(-1);
  if (m < 2) throw ConfigError("thresholded entropy needs m >= 2");
  const auto n = probs.numel() / m;
  auto h = scale(neg(sum(mul(probs, log_probs))), static_cast<T>(1.0 / static_cast<double>(n)));
  return relu(add_scalar(neg(scale(h, static_cast<T>(1.0 / std::log(static_cast<double>(m))))),
                         static_cast<T>(threshold)));
}

template <typename T>
ActorCritic<T>::ActorCritic(const AgentConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  actor_ = nn::Mlp<T>(actor_params_, "actor", config_.input_size(), config_.actor_units, config_.actor_layers,
                      config_.actions, rng);
  critic_ = nn::Mlp<T>(critic_params_, "critic", config_.input_size(), config_.critic_units, config_.critic_layers,
                       1, rng);
}

template <typename T>
Tensor<T> ActorCritic<T>::policy_state(const Tensor<T>& z, const Tensor<T>& h_prev) const {
  const auto n = z.dim(0);
  auto zf = reshape(z, {n, config_.latent_size});
  if (config_.policy_input == PolicyInput::kZ) return zf;
  if (!h_prev.defined() || h_prev.numel() != n * config_.hidden_size)
    throw UsageError("policy input [z, h] needs h of shape [N, " + std::to_string(config_.hidden_size) + "]");
  return concat<T>({zf, reshape(h_prev, {n, config_.hidden_size})}, 1);
}

template <typename T>
Tensor<T> ActorCritic<T>::value(const Tensor<T>& state) const {
  return reshape(critic_(state), {state.dim(0)});
}

template <typename T>
std::vector<std::int64_t> ActorCritic<T>::act(const Tensor<T>& state, Rng& rng) const {
  NoGradGuard ng;
  auto p = softmax_last(logits(state));
  const auto m = config_.actions;
  std::vector<std::int64_t> out(static_cast<std::size_t>(state.dim(0)));
  std::vector<double> w(static_cast<std::size_t>(m));
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (int a = 0; a < m; ++a) w[a] = static_cast<double>(p.at(static_cast<std::int64_t>(i) * m + a));
    out[i] = sample_discrete(w, rng);
  }
  return out;
}

template <typename T>
Tensor<T> ActorCritic<T>::states(const ImaginedBatch<T>& batch) const {
  const std::int64_t rows = (batch.horizon + 1) * batch.m;
  if (static_cast<std::int64_t>(batch.actions.size()) != batch.horizon * batch.m)
    throw UsageError("imagined batch is inconsistent");
  return policy_state(reshape(batch.z, {rows, config_.latent_size}),
                      config_.policy_input == PolicyInput::kZ ? Tensor<T>()
                                                               : reshape(batch.h_prev, {rows, config_.hidden_size}));
}

template <typename T>
ActorCriticTargets ActorCritic<T>::targets(const ImaginedBatch<T>& batch) const {
  const std::int64_t hzn = batch.horizon, m = batch.m;
  NoGradGuard ng;
  auto values = value(states(batch));  // [(H+1) M], time-major
  const auto v = values.data();
  const auto r = batch.rewards.data();
  const auto g = batch.discounts.data();
  ActorCriticTargets out;
  out.advantages.resize(static_cast<std::size_t>(hzn * m));
  out.returns.resize(out.advantages.size());
  out.weights.resize(out.advantages.size());
  std::vector<double> rr(hzn), vv(hzn + 1), gg(hzn);
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t t = 0; t < hzn; ++t) {
      rr[t] = r[t * m + i];
      gg[t] = g[t * m + i];
    }
    for (std::int64_t t = 0; t <= hzn; ++t) vv[t] = v[t * m + i];
    auto res = gae(rr, vv, gg, config_.lambda);
    double w = 1.0;
    for (std::int64_t t = 0; t < hzn; ++t) {
      out.advantages[t * m + i] = res.advantages[t];
      out.returns[t * m + i] = res.returns[t];
      out.weights[t * m + i] = w;
      w *= config_.weights_include_gamma ? gg[t] : gg[t] / config_.gamma;
      out.advantage_mean += res.advantages[t];
      out.return_mean += res.returns[t];
    }
  }
  out.advantage_mean /= static_cast<double>(hzn * m);
  out.return_mean /= static_cast<double>(hzn * m);
  return out;
}

template <typename T>
ActorCriticLosses<T> ActorCritic<T>::losses(const ImaginedBatch<T>& batch, const ActorCriticTargets& targets) const {
  const std::int64_t n = batch.horizon * batch.m;
  if (static_cast<std::int64_t>(targets.advantages.size()) != n) throw UsageError("targets do not match the batch");
  auto to_tensor = [n](const std::vector<double>& x) {
    return Tensor<T>::from({n}, std::vector<T>(x.begin(), x.end()));
  };
  auto act_states = slice(states(batch), 0, 0, n);
  auto logits_t = logits(act_states);
  auto logp = log_softmax_last(logits_t);
  auto probs = softmax_last(logits_t);
  auto chosen = gather_last(logp, batch.actions);  // [H M]
  auto w = to_tensor(targets.weights);
  auto pg = neg(mean(mul(mul(chosen, to_tensor(targets.advantages)), w)));
  auto ent_pen = thresholded_entropy_loss(probs, logp, config_.entropy_threshold);
  ActorCriticLosses<T> out;
  out.actor = add(pg, scale(ent_pen, static_cast<T>(config_.entropy_coef)));
  auto diff = sub(value(act_states), to_tensor(targets.returns));
  out.critic = mean(mul(scale(square(diff), T(0.5)), w));

  auto& terms = out.terms;
  terms.actor = static_cast<double>(out.actor.item());
  terms.critic = static_cast<double>(out.critic.item());
  terms.entropy_penalty = static_cast<double>(ent_pen.item());
  terms.advantage_mean = targets.advantage_mean;
  terms.return_mean = targets.return_mean;
  {
    NoGradGuard ng;
    terms.entropy = static_cast<double>(neg(sum(mul(probs, logp))).item()) / static_cast<double>(n);
  }
  return out;
}

template class ActorCritic<float>;
template class ActorCritic<double>;
template Tensor<float> thresholded_entropy_loss(const Tensor<float>&, const Tensor<float>&, double);
template Tensor<double> thresholded_entropy_loss(const Tensor<double>&, const Tensor<double>&, double);

}  // namespace twm
