#include "twm/dynamics/dynamics_model.hpp"

namespace twm {

void DynamicsConfig::validate() const {
  if (latent_vars <= 0 || latent_classes < 2) throw ConfigError("latent needs K >= 1 and C >= 2");
  if (actions < 2) throw ConfigError("need at least 2 actions");
  if (seq_len < 1) throw ConfigError("sequence length must be >= 1");
  if (gamma <= 0.0 || gamma > 1.0) throw ConfigError("gamma must be in (0, 1]");
  if (latent_units <= 0 || reward_units <= 0 || discount_units <= 0) throw ConfigError("head units must be positive");
  if (latent_layers < 0 || reward_layers < 0 || discount_layers < 0) throw ConfigError("head layers must be >= 0");
  transformer.validate();
}

template <typename T>
DynamicsModel<T>::DynamicsModel(const DynamicsConfig& config, Rng& rng) : config_(config) {
  if (config_.transformer.mem_len <= 0) config_.transformer.mem_len = static_cast<int>(3 * config_.seq_len - 1);
  config_.validate();
  const std::int64_t d = config_.transformer.model_dim;
  z_embed_ = nn::Linear<T>(params_, "dyn.z_embed", config_.latent_size(), d, rng);
  a_embed_ = params_.add("dyn.a_embed", {config_.actions, d}, nn::uniform_values<T>(config_.actions * d, 1.0, rng));
  r_embed_ = nn::Linear<T>(params_, "dyn.r_embed", 1, d, rng);
  transformer_ = TransformerXL<T>(params_, "dyn.xl", config_.transformer, rng);
  latent_head_ = nn::Mlp<T>(params_, "dyn.latent_head", d, config_.latent_units, config_.latent_layers,
                            config_.latent_size(), rng);
  reward_head_ = nn::Mlp<T>(params_, "dyn.reward_head", d, config_.reward_units, config_.reward_layers, 1, rng);
  discount_head_ =
      nn::Mlp<T>(params_, "dyn.discount_head", d, config_.discount_units, config_.discount_layers, 1, rng);
}

template <typename T>
std::vector<std::int64_t> DynamicsModel<T>::action_token_positions(std::int64_t steps) const {
  std::vector<std::int64_t> pos(static_cast<std::size_t>(steps));
  const std::int64_t stride = config_.reward_tokens ? 3 : 2;
  for (std::int64_t k = 0; k < steps; ++k) pos[k] = stride * k + 1;
  return pos;
}

template <typename T>
Tensor<T> DynamicsModel<T>::embed(const Tensor<T>& z, std::span<const std::int64_t> actions,
                                  const Tensor<T>& rewards) const {
  const std::int64_t b = z.dim(0), t = z.dim(1), d = hidden_size(), ks = config_.latent_size();
  if (z.numel() != b * t * ks) throw UsageError("embed: latent shape " + shape_str(z.shape()));
  if (static_cast<std::int64_t>(actions.size()) != b * t) throw UsageError("embed: actions and latents misaligned");
  for (auto a : actions)
    if (a < 0 || a >= config_.actions) throw UsageError("embed: action out of range");
  auto ze = z_embed_(reshape(z, {b, t, ks}));
  auto ae = reshape(index_select(a_embed_, 0, actions), {b, t, d});
  std::vector<Tensor<T>> parts{ze, ae};
  const bool with_r = config_.reward_tokens && t > 1;
  if (with_r) {
    if (!rewards.defined() || rewards.numel() != b * (t - 1))
      throw UsageError("embed: expected " + std::to_string(t - 1) + " rewards per sequence");
    parts.push_back(r_embed_(reshape(rewards, {b, t - 1, 1})));
  }
  auto all = concat<T>(parts, 1);
  std::vector<std::int64_t> order;
  for (std::int64_t k = 0; k < t; ++k) {
    order.push_back(k);
    order.push_back(t + k);
    if (config_.reward_tokens && k + 1 < t) order.push_back(2 * t + k);
  }
  return index_select(all, 1, order);
}

template <typename T>
Tensor<T> DynamicsModel<T>::aggregate(const Tensor<T>& z, std::span<const std::int64_t> actions,
                                      const Tensor<T>& rewards, XLMemory<T>* memory,
                                      std::vector<Tensor<T>>* attention) const {
  auto out = transformer_.forward(embed(z, actions, rewards), memory, attention);
  return index_select(out, 1, action_token_positions(z.dim(1)));
}

template <typename T>
Tensor<T> DynamicsModel<T>::discount(const Tensor<T>& logit) const {
  return scale(sigmoid(logit), static_cast<T>(config_.gamma));
}

template <typename T>
DynamicsOutputs<T> DynamicsModel<T>::predict(const Tensor<T>& h) const {
  Shape lead(h.shape().begin(), h.shape().end() - 1);
  Shape lat = lead;
  lat.push_back(config_.latent_vars);
  lat.push_back(config_.latent_classes);
  DynamicsOutputs<T> o{h, CategoricalVector<T>(reshape(latent_head_(h), lat), config_.unimix),
                       reshape(reward_head_(h), lead), reshape(discount_head_(h), lead)};
  return o;
}

template <typename T>
Tensor<T> DynamicsModel<T>::embed_step(const Tensor<T>& z, std::span<const std::int64_t> actions,
                                       const Tensor<T>* reward) const {
  const std::int64_t m = z.dim(0), d = hidden_size();
  std::vector<Tensor<T>> parts;
  if (reward && config_.reward_tokens) parts.push_back(r_embed_(reshape(*reward, {m, 1, 1})));
  parts.push_back(z_embed_(reshape(z, {m, 1, config_.latent_size()})));
  parts.push_back(reshape(index_select(a_embed_, 0, actions), {m, 1, d}));
  return concat<T>(parts, 1);
}

template <typename T>
Tensor<T> DynamicsModel<T>::step(const Tensor<T>& z, std::span<const std::int64_t> actions, const Tensor<T>* prev_reward,
                                 XLMemory<T>& memory) const {
  const std::int64_t m = z.dim(0);
  if (static_cast<std::int64_t>(actions.size()) != m) throw UsageError("step: one action per row expected");
  auto y = transformer_.forward(embed_step(z, actions, prev_reward), &memory);
  return reshape(slice(y, 1, y.dim(1) - 1, 1), {m, hidden_size()});
}

template <typename T>
ImaginedBatch<T> DynamicsModel<T>::imagine(const Tensor<T>& initial_z, const ImaginationPolicy<T>& policy,
                                           std::int64_t horizon, Rng& rng, ImagineMode mode) const {
  if (grad_enabled()) throw UsageError("imagine() must run under NoGradGuard");
  if (horizon < 1) throw UsageError("imagination horizon must be >= 1");
  const std::int64_t m = initial_z.dim(0), ks = config_.latent_size(), d = hidden_size();
  if (initial_z.numel() != m * ks) throw UsageError("imagine: initial latent shape " + shape_str(initial_z.shape()));

  ImaginedBatch<T> out;
  out.m = m;
  out.horizon = horizon;
  std::vector<Tensor<T>> zs{reshape(initial_z, {m, ks})}, hs, hp{Tensor<T>::zeros({m, d})}, rs, gs;
  XLMemory<T> memory = transformer_.new_memory(m);
  std::vector<Tensor<T>> tokens;  // vanilla mode keeps every token embedding
  Tensor<T> last_reward;
  for (std::int64_t t = 0; t < horizon; ++t) {
    auto actions = policy(zs.back(), hp.back());
    if (static_cast<std::int64_t>(actions.size()) != m) throw UsageError("policy returned wrong number of actions");
    for (auto a : actions)
      if (a < 0 || a >= config_.actions) throw UsageError("policy returned an out-of-range action");
    out.actions.insert(out.actions.end(), actions.begin(), actions.end());
    auto step_tokens = embed_step(zs.back(), actions, t > 0 ? &last_reward : nullptr);
    Tensor<T> y;
    if (mode == ImagineMode::kCached) {
      y = transformer_.forward(step_tokens, &memory);
    } else {
      tokens.push_back(step_tokens);
      y = transformer_.forward(concat<T>(tokens, 1));
    }
    auto h = reshape(slice(y, 1, y.dim(1) - 1, 1), {m, d});
    auto pred = predict(h);
    hs.push_back(h);
    hp.push_back(h);
    rs.push_back(pred.reward);
    gs.push_back(discount(pred.discount_logit));
    zs.push_back(reshape(pred.latent.sample(rng), {m, ks}));
    last_reward = pred.reward;
  }
  auto stack = [](const std::vector<Tensor<T>>& xs, Shape shape) {
    std::vector<Tensor<T>> flat;
    for (const auto& x : xs) flat.push_back(reshape(x, {1, x.numel()}));
    return reshape(concat<T>(flat, 0), std::move(shape));
  };
  out.z = stack(zs, {horizon + 1, m, ks});
  out.h_prev = stack(hp, {horizon + 1, m, d});
  out.h = stack(hs, {horizon, m, d});
  out.rewards = stack(rs, {horizon, m});
  out.discounts = stack(gs, {horizon, m});
  return out;
}

template <typename T>
Tensor<T> dynamics_loss(const DynamicsModel<T>& model, const DynamicsBatch<T>& batch, double beta1, double beta2,
                        DynamicsLossTerms* terms, DynamicsOutputs<T>* outputs) {
  const auto& cfg = model.config();
  if (batch.z.ndim() != 4) throw UsageError("dynamics_loss: z must be [B, T, K, C]");
  const std::int64_t b = batch.z.dim(0), t = batch.z.dim(1), k = cfg.latent_vars, c = cfg.latent_classes;
  if (batch.z.shape() != Shape{b, t, k, c} || batch.posterior_probs.shape() != batch.z.shape())
    throw UsageError("dynamics_loss: latent shapes do not match the model");
  if (batch.rewards.shape() != Shape{b, t} || batch.continues.shape() != Shape{b, t})
    throw UsageError("dynamics_loss: rewards/continues must be [B, T]");

  Tensor<T> r_in;
  if (t > 1) r_in = slice(batch.rewards, 1, 0, t - 1);
  auto h = model.aggregate(batch.z.detach(), batch.actions, r_in);
  auto out = model.predict(h);
  const T inv = T(1) / static_cast<T>(b * t);

  Tensor<T> latent_sum = Tensor<T>::scalar(T(0));
  if (t > 1) {
    auto target = slice(batch.posterior_probs.detach(), 1, 1, t - 1);
    auto logp = slice(out.latent.log_probs(), 1, 0, t - 1);
    latent_sum = sum(categorical_cross_entropy(target, logp));
  }
  auto reward_sum = scale(sum(square(sub(batch.rewards, out.reward))), T(0.5));
  auto discount_sum = sum(bernoulli_nll(out.discount_logit, batch.continues));
  auto total = scale(add(add(latent_sum, scale(reward_sum, static_cast<T>(beta1))),
                         scale(discount_sum, static_cast<T>(beta2))),
                     inv);
  if (terms) {
    terms->total = static_cast<double>(total.item());
    terms->latent = static_cast<double>(latent_sum.item()) * inv;
    terms->reward = static_cast<double>(reward_sum.item()) * inv;
    terms->discount = static_cast<double>(discount_sum.item()) * inv;
  }
  if (outputs) *outputs = out;
  return total;
}

template class DynamicsModel<float>;
template class DynamicsModel<double>;
template Tensor<float> dynamics_loss(const DynamicsModel<float>&, const DynamicsBatch<float>&, double, double,
                                     DynamicsLossTerms*, DynamicsOutputs<float>*);
template Tensor<double> dynamics_loss(const DynamicsModel<double>&, const DynamicsBatch<double>&, double, double,
                                      DynamicsLossTerms*, DynamicsOutputs<double>*);

}  // namespace twm
