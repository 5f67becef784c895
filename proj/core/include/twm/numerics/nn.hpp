#pragma once

#include <string>
#include <vector>

#include "twm/numerics/ops.hpp"
#include "twm/numerics/optim.hpp"
#include "twm/numerics/rng.hpp"

namespace twm::nn {

/// y = x W + b. Weights use a uniform fan-in initialization.
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(ParameterSet<T>& params, const std::string& name, std::int64_t in, std::int64_t out, Rng& rng,
         bool bias = true, double init_scale = 1.0);
  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight_, bias_); }
  std::int64_t in_features() const { return weight_.dim(0); }
  std::int64_t out_features() const { return weight_.dim(1); }
  const Tensor<T>& weight() const { return weight_; }

 private:
  Tensor<T> weight_, bias_;
};

template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterSet<T>& params, const std::string& name, std::int64_t features);
  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gain_, bias_); }

 private:
  Tensor<T> gain_, bias_;
};

/// Hidden layers of Linear -> LayerNorm -> SiLU followed by a linear output.
template <typename T>
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParameterSet<T>& params, const std::string& name, std::int64_t in, std::int64_t hidden, int layers,
      std::int64_t out, Rng& rng, double out_init_scale = 1.0);
  Tensor<T> operator()(const Tensor<T>& x) const;
  std::int64_t out_features() const { return out_.out_features(); }

 private:
  std::vector<Linear<T>> hidden_;
  std::vector<LayerNorm<T>> norms_;
  Linear<T> out_;
};

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParameterSet<T>& params, const std::string& name, std::int64_t in_channels, std::int64_t out_channels,
         int kernel, int stride, int padding, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight_, bias_, stride_, padding_); }

 private:
  Tensor<T> weight_, bias_;
  int stride_ = 1, padding_ = 0;
};

template <typename T>
class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(ParameterSet<T>& params, const std::string& name, std::int64_t in_channels,
                  std::int64_t out_channels, int kernel, int stride, int padding, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const { return conv_transpose2d(x, weight_, bias_, stride_, padding_); }

 private:
  Tensor<T> weight_, bias_;
  int stride_ = 1, padding_ = 0;
};

/// n values uniform in [-bound, bound].
template <typename T>
std::vector<T> uniform_values(std::int64_t n, double bound, Rng& rng);

}  // namespace twm::nn
