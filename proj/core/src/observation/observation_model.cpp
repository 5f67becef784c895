#include "twm/observation/observation_model.hpp"

namespace twm {

void ObservationConfig::validate() const {
  if (height <= 0 || width <= 0 || stack <= 0) throw ConfigError("observation shape must be positive");
  if (latent_vars <= 0 || latent_classes < 2) throw ConfigError("latent needs K >= 1 and C >= 2");
  if (base_channels <= 0 || stages <= 0) throw ConfigError("encoder width and stage count must be positive");
  const int f = 1 << stages;
  if (height % f != 0 || width % f != 0)
    throw ConfigError("observation size must be divisible by 2^stages (" + std::to_string(f) + ")");
}

std::int64_t observation_parameter_count(const ObservationConfig& c) {
  c.validate();
  std::int64_t n = 0, ch = c.stack;
  for (int s = 0; s < c.stages; ++s) {
    const std::int64_t out = static_cast<std::int64_t>(c.base_channels) << s;
    n += 2 * (ch * out * 16) + out + ch;  // conv + mirrored deconv with biases
    ch = out;
  }
  const std::int64_t flat = ch * (c.height >> c.stages) * (c.width >> c.stages);
  n += flat * c.latent_size() + c.latent_size();  // encoder head
  n += c.latent_size() * flat + flat;             // decoder input
  return n;
}

template <typename T>
ObservationModel<T>::ObservationModel(const ObservationConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  std::int64_t ch = config_.stack;
  for (int s = 0; s < config_.stages; ++s) {
    const std::int64_t out = static_cast<std::int64_t>(config_.base_channels) << s;
    enc_.emplace_back(params_, "enc.conv" + std::to_string(s), ch, out, 4, 2, 1, rng);
    ch = out;
  }
  top_channels_ = ch;
  top_h_ = config_.height >> config_.stages;
  top_w_ = config_.width >> config_.stages;
  const std::int64_t flat = top_channels_ * top_h_ * top_w_;
  enc_out_ = nn::Linear<T>(params_, "enc.out", flat, config_.latent_size(), rng);
  dec_in_ = nn::Linear<T>(params_, "dec.in", config_.latent_size(), flat, rng);
  for (int s = config_.stages - 1; s >= 0; --s) {
    const std::int64_t out = s == 0 ? config_.stack : static_cast<std::int64_t>(config_.base_channels) << (s - 1);
    dec_.emplace_back(params_, "dec.deconv" + std::to_string(config_.stages - 1 - s), ch, out, 4, 2, 1, rng);
    ch = out;
  }
}

template <typename T>
void ObservationModel<T>::check_obs(const Tensor<T>& obs) const {
  if (obs.ndim() != 4 || obs.dim(1) != config_.stack || obs.dim(2) != config_.height || obs.dim(3) != config_.width)
    throw ConfigError("observation shape " + shape_str(obs.shape()) + " does not match [N," +
                      std::to_string(config_.stack) + "," + std::to_string(config_.height) + "," +
                      std::to_string(config_.width) + "]");
}

template <typename T>
CategoricalVector<T> ObservationModel<T>::posterior(const Tensor<T>& obs) const {
  check_obs(obs);
  const auto n = obs.dim(0);
  Tensor<T> h = add_scalar(obs, T(-0.5));
  for (const auto& conv : enc_) h = silu(conv(h));
  auto logits = enc_out_(reshape(h, {n, top_channels_ * top_h_ * top_w_}));
  return CategoricalVector<T>(reshape(logits, {n, config_.latent_vars, config_.latent_classes}), config_.unimix);
}

template <typename T>
LatentState<T> ObservationModel<T>::encode(const Tensor<T>& obs, Rng& rng, bool straight_through) const {
  auto dist = posterior(obs);
  auto sample = straight_through ? dist.sample_straight_through(rng) : dist.sample(rng);
  return {sample, dist};
}

template <typename T>
Tensor<T> ObservationModel<T>::decode(const Tensor<T>& z) const {
  const auto n = z.dim(0);
  if (z.numel() != n * config_.latent_size()) throw ConfigError("decode: latent shape " + shape_str(z.shape()));
  auto h = reshape(dec_in_(reshape(z, {n, config_.latent_size()})), {n, top_channels_, top_h_, top_w_});
  for (std::size_t i = 0; i < dec_.size(); ++i) {
    h = dec_[i](h);
    if (i + 1 < dec_.size()) h = silu(h);
  }
  return h;
}

template <typename T>
Tensor<T> observation_loss(const Tensor<T>& obs, const Tensor<T>& recon, const CategoricalVector<T>& posterior,
                           const Tensor<T>& prior_log_probs, std::int64_t batch, std::int64_t time, double alpha1,
                           double alpha2, ObservationLossTerms* terms) {
  const std::int64_t n = batch * time;
  if (batch <= 0 || time <= 0) throw UsageError("observation_loss: empty batch");
  if (obs.dim(0) != n || recon.shape() != obs.shape() || posterior.probs().dim(0) != n)
    throw UsageError("observation_loss: sequence lengths do not match");
  const auto k = posterior.variables(), c = posterior.categories();
  const T inv = T(1) / static_cast<T>(n);

  auto nll = sum(normal_nll(obs, recon, 3));
  auto ent = sum(posterior.entropy());
  auto total = sub(nll, scale(ent, static_cast<T>(alpha1)));
  double ce_value = 0;
  if (prior_log_probs.defined() && time > 1) {
    if (prior_log_probs.shape() != Shape{batch, time - 1, k, c})
      throw UsageError("observation_loss: prior shape " + shape_str(prior_log_probs.shape()));
    auto q = slice(reshape(posterior.probs(), {batch, time, k, c}), 1, 1, time - 1);
    auto ce = sum(categorical_cross_entropy(q, prior_log_probs.detach()));
    ce_value = static_cast<double>(ce.item());
    total = add(total, scale(ce, static_cast<T>(alpha2)));
  }
  total = scale(total, inv);
  if (terms) {
    terms->total = static_cast<double>(total.item());
    terms->decoder_nll = static_cast<double>(nll.item()) / n;
    terms->entropy = static_cast<double>(ent.item()) / n;
    terms->consistency = time > 1 ? ce_value / (batch * (time - 1)) : 0.0;
  }
  return total;
}

template <typename T>
Tensor<T> frames_to_tensor(const std::vector<std::uint8_t>& frames, std::int64_t n, int stack, int height, int width) {
  const std::size_t per = static_cast<std::size_t>(stack) * height * width;
  if (frames.size() != per * n) throw ConfigError("frames_to_tensor: size mismatch");
  std::vector<T> v(frames.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(frames[i]) / T(255);
  return Tensor<T>::from({n, stack, height, width}, std::move(v));
}

template class ObservationModel<float>;
template class ObservationModel<double>;
template Tensor<float> observation_loss(const Tensor<float>&, const Tensor<float>&, const CategoricalVector<float>&,
                                        const Tensor<float>&, std::int64_t, std::int64_t, double, double,
                                        ObservationLossTerms*);
template Tensor<double> observation_loss(const Tensor<double>&, const Tensor<double>&,
                                         const CategoricalVector<double>&, const Tensor<double>&, std::int64_t,
                                         std::int64_t, double, double, ObservationLossTerms*);
template Tensor<float> frames_to_tensor<float>(const std::vector<std::uint8_t>&, std::int64_t, int, int, int);
template Tensor<double> frames_to_tensor<double>(const std::vector<std::uint8_t>&, std::int64_t, int, int, int);

}  // namespace twm
