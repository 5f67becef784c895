#pragma once

#include <cstdint>
#include <vector>

#include "twm/numerics/ops.hpp"
#include "twm/numerics/rng.hpp"

namespace twm {

/// Probability mass mixed in uniformly before sampling and cross-entropy.
inline constexpr double kDefaultUnimix = 0.01;

/// K independent categorical variables with C categories each, given logits
/// of shape [..., K, C]. Probabilities are (1 - unimix) * softmax + unimix / C.
template <typename T>
class CategoricalVector {
 public:
  /// Empty placeholder; only assignment is valid on it.
  CategoricalVector() = default;
  CategoricalVector(Tensor<T> logits, double unimix = kDefaultUnimix);

  const Tensor<T>& logits() const { return logits_; }
  const Tensor<T>& probs() const { return probs_; }
  const Tensor<T>& log_probs() const { return log_probs_; }
  std::int64_t variables() const { return logits_.dim(-2); }
  std::int64_t categories() const { return logits_.dim(-1); }
  double unimix() const { return unimix_; }

  /// Entropy summed over the K variables, shape [...].
  Tensor<T> entropy() const;
  /// One-hot draw (no gradient), same shape as the logits.
  Tensor<T> sample(Rng& rng) const;
  /// One-hot draw whose gradient flows to the probabilities.
  Tensor<T> sample_straight_through(Rng& rng) const { return straight_through(sample(rng), probs_); }
  /// Same distribution with every input cut from the tape.
  CategoricalVector detach() const;

 private:
  Tensor<T> logits_, probs_, log_probs_;
  double unimix_ = kDefaultUnimix;
};

/// H(q, p) = -sum q log p over the last two axes [..., K, C] -> [...].
template <typename T>
Tensor<T> categorical_cross_entropy(const Tensor<T>& q_probs, const Tensor<T>& p_log_probs);

/// -sum p log p over [..., K, C] -> [...].
template <typename T>
Tensor<T> categorical_entropy(const Tensor<T>& probs, const Tensor<T>& log_probs);

/// Unit-variance normal negative log-likelihood without the constant:
/// 0.5 * sum (x - mean)^2 over the last `event_dims` axes.
template <typename T>
Tensor<T> normal_nll(const Tensor<T>& x, const Tensor<T>& mean, int event_dims);

/// Bernoulli negative log-likelihood of labels in {0,1} under sigmoid(logits).
template <typename T>
Tensor<T> bernoulli_nll(const Tensor<T>& logits, const Tensor<T>& labels);

/// Log-density of a unit-variance normal, including the constant.
double normal_log_density(double x, double mean);

}  // namespace twm
