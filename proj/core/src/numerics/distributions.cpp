#include "twm/numerics/distributions.hpp"

#include <cmath>
#include <numbers>

namespace twm {

template <typename T>
CategoricalVector<T>::CategoricalVector(Tensor<T> logits, double unimix) : logits_(std::move(logits)), unimix_(unimix) {
  if (logits_.ndim() < 2) throw ConfigError("categorical logits need shape [..., K, C]");
  if (unimix_ < 0.0 || unimix_ >= 1.0) throw ConfigError("unimix must be in [0, 1)");
  if (unimix_ == 0.0) {
    probs_ = softmax_last(logits_);
    log_probs_ = log_softmax_last(logits_);
  } else {
    const T c = static_cast<T>(logits_.dim(-1));
    probs_ = add_scalar(scale(softmax_last(logits_), static_cast<T>(1.0 - unimix_)), static_cast<T>(unimix_) / c);
    log_probs_ = log(probs_);
  }
}

template <typename T>
Tensor<T> CategoricalVector<T>::entropy() const {
  return categorical_entropy(probs_, log_probs_);
}

template <typename T>
Tensor<T> CategoricalVector<T>::sample(Rng& rng) const {
  const auto c = categories();
  const auto rows = probs_.numel() / c;
  auto p = probs_.data();
  std::vector<T> out(static_cast<std::size_t>(probs_.numel()), T(0));
  std::vector<double> w(static_cast<std::size_t>(c));
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t k = 0; k < c; ++k) w[k] = static_cast<double>(p[r * c + k]);
    out[r * c + sample_discrete(w, rng)] = T(1);
  }
  return Tensor<T>::from(probs_.shape(), std::move(out));
}

template <typename T>
CategoricalVector<T> CategoricalVector<T>::detach() const {
  CategoricalVector d;
  d.logits_ = logits_.detach();
  d.probs_ = probs_.detach();
  d.log_probs_ = log_probs_.detach();
  d.unimix_ = unimix_;
  return d;
}

template <typename T>
Tensor<T> categorical_cross_entropy(const Tensor<T>& q_probs, const Tensor<T>& p_log_probs) {
  auto per_var = sum_last(mul(q_probs, p_log_probs));  // [..., K]
  return neg(sum_last(per_var));
}

template <typename T>
Tensor<T> categorical_entropy(const Tensor<T>& probs, const Tensor<T>& log_probs) {
  return categorical_cross_entropy(probs, log_probs);
}

template <typename T>
Tensor<T> normal_nll(const Tensor<T>& x, const Tensor<T>& mean, int event_dims) {
  if (x.shape() != mean.shape()) throw ConfigError("normal_nll: shape mismatch");
  if (event_dims < 0 || event_dims > x.ndim()) throw ConfigError("normal_nll: bad event dims");
  Shape batch(x.shape().begin(), x.shape().end() - event_dims);
  std::int64_t events = 1;
  for (int i = x.ndim() - event_dims; i < x.ndim(); ++i) events *= x.shape()[i];
  batch.push_back(events);
  auto sq = square(sub(x, mean));
  return scale(sum_last(reshape(sq, batch)), T(0.5));
}

template <typename T>
Tensor<T> bernoulli_nll(const Tensor<T>& logits, const Tensor<T>& labels) {
  // -[y log s(l) + (1-y) log(1-s(l))] = softplus(l) - y l
  return sub(softplus(logits), mul(labels, logits));
}

double normal_log_density(double x, double mean) {
  return -0.5 * std::log(2.0 * std::numbers::pi) - 0.5 * (x - mean) * (x - mean);
}

template class CategoricalVector<float>;
template class CategoricalVector<double>;
template Tensor<float> categorical_cross_entropy(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> categorical_cross_entropy(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> categorical_entropy(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> categorical_entropy(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> normal_nll(const Tensor<float>&, const Tensor<float>&, int);
template Tensor<double> normal_nll(const Tensor<double>&, const Tensor<double>&, int);
template Tensor<float> bernoulli_nll(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> bernoulli_nll(const Tensor<double>&, const Tensor<double>&);

}  // namespace twm
