#include "twm/numerics/nn.hpp"

#include <cmath>

namespace twm::nn {

template <typename T>
std::vector<T> uniform_values(std::int64_t n, double bound, Rng& rng) {
  std::vector<T> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return v;
}

template <typename T>
Linear<T>::Linear(ParameterSet<T>& params, const std::string& name, std::int64_t in, std::int64_t out, Rng& rng,
                  bool bias, double init_scale) {
  if (in <= 0 || out <= 0) throw ConfigError("Linear '" + name + "' needs positive sizes");
  const double bound = init_scale / std::sqrt(static_cast<double>(in));
  weight_ = params.add(name + ".weight", {in, out}, uniform_values<T>(in * out, bound, rng));
  if (bias) bias_ = params.add(name + ".bias", {out}, std::vector<T>(static_cast<std::size_t>(out), T(0)));
}

template <typename T>
LayerNorm<T>::LayerNorm(ParameterSet<T>& params, const std::string& name, std::int64_t features) {
  gain_ = params.add(name + ".gain", {features}, std::vector<T>(static_cast<std::size_t>(features), T(1)));
  bias_ = params.add(name + ".bias", {features}, std::vector<T>(static_cast<std::size_t>(features), T(0)));
}

template <typename T>
Mlp<T>::Mlp(ParameterSet<T>& params, const std::string& name, std::int64_t in, std::int64_t hidden, int layers,
            std::int64_t out, Rng& rng, double out_init_scale) {
  std::int64_t width = in;
  for (int i = 0; i < layers; ++i) {
    hidden_.emplace_back(params, name + ".fc" + std::to_string(i), width, hidden, rng, /*bias=*/false);
    norms_.emplace_back(params, name + ".norm" + std::to_string(i), hidden);
    width = hidden;
  }
  out_ = Linear<T>(params, name + ".out", width, out, rng, true, out_init_scale);
}

template <typename T>
Tensor<T> Mlp<T>::operator()(const Tensor<T>& x) const {
  Tensor<T> h = x;
  for (std::size_t i = 0; i < hidden_.size(); ++i) h = silu(norms_[i](hidden_[i](h)));
  return out_(h);
}

template <typename T>
Conv2d<T>::Conv2d(ParameterSet<T>& params, const std::string& name, std::int64_t in_channels,
                  std::int64_t out_channels, int kernel, int stride, int padding, Rng& rng)
    : stride_(stride), padding_(padding) {
  const auto fan_in = in_channels * kernel * kernel;
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  weight_ = params.add(name + ".weight", {out_channels, in_channels, kernel, kernel},
                       uniform_values<T>(out_channels * fan_in, bound, rng));
  bias_ = params.add(name + ".bias", {out_channels}, std::vector<T>(static_cast<std::size_t>(out_channels), T(0)));
}

template <typename T>
ConvTranspose2d<T>::ConvTranspose2d(ParameterSet<T>& params, const std::string& name, std::int64_t in_channels,
                                    std::int64_t out_channels, int kernel, int stride, int padding, Rng& rng)
    : stride_(stride), padding_(padding) {
  // Each output pixel receives about in_channels * (kernel/stride)^2 terms.
  const double fan_in = static_cast<double>(in_channels) * kernel * kernel / (stride * stride);
  const double bound = 1.0 / std::sqrt(fan_in);
  weight_ = params.add(name + ".weight", {in_channels, out_channels, kernel, kernel},
                       uniform_values<T>(in_channels * out_channels * kernel * kernel, bound, rng));
  bias_ = params.add(name + ".bias", {out_channels}, std::vector<T>(static_cast<std::size_t>(out_channels), T(0)));
}

template std::vector<float> uniform_values<float>(std::int64_t, double, Rng&);
template std::vector<double> uniform_values<double>(std::int64_t, double, Rng&);
template class Linear<float>;
template class Linear<double>;
template class LayerNorm<float>;
template class LayerNorm<double>;
template class Mlp<float>;
template class Mlp<double>;
template class Conv2d<float>;
template class Conv2d<double>;
template class ConvTranspose2d<float>;
template class ConvTranspose2d<double>;

}  // namespace twm::nn
