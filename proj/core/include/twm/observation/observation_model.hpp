#pragma once

#include <cstdint>

#include "twm/numerics/distributions.hpp"
#include "twm/numerics/nn.hpp"

namespace twm {

struct ObservationConfig {
  int height = 64;
  int width = 64;
  int stack = 4;
  int latent_vars = 32;        // K
  int latent_classes = 32;     // C
  int base_channels = 28;      // channels of the first conv stage, doubled per stage
  int stages = 4;              // stride-2 stages in the encoder and the decoder
  double unimix = kDefaultUnimix;

  std::int64_t latent_size() const { return static_cast<std::int64_t>(latent_vars) * latent_classes; }
  void validate() const;
};

/// Parameter count of an ObservationModel built from this config.
std::int64_t observation_parameter_count(const ObservationConfig& config);

template <typename T>
struct LatentState {
  Tensor<T> sample;  // [N, K, C] one-hot rows
  CategoricalVector<T> dist;
};

/// Convolutional encoder to K categorical variables and a mirrored
/// transposed-convolution decoder predicting per-pixel means.
/// Observations are tensors [N, S, H, W] with values in [0,1].
template <typename T>
class ObservationModel {
 public:
  ObservationModel(const ObservationConfig& config, Rng& init_rng);

  const ObservationConfig& config() const { return config_; }
  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }

  /// Posterior over [N, K, C].
  CategoricalVector<T> posterior(const Tensor<T>& obs) const;
  /// Posterior plus a one-hot draw; with straight_through the draw carries
  /// gradients to the encoder.
  LatentState<T> encode(const Tensor<T>& obs, Rng& rng, bool straight_through = true) const;
  /// z [N, K, C] (or [N, K*C]) -> means [N, S, H, W].
  Tensor<T> decode(const Tensor<T>& z) const;

 private:
  void check_obs(const Tensor<T>& obs) const;

  ObservationConfig config_;
  ParameterSet<T> params_;
  std::vector<nn::Conv2d<T>> enc_;
  nn::Linear<T> enc_out_;
  nn::Linear<T> dec_in_;
  std::vector<nn::ConvTranspose2d<T>> dec_;
  std::int64_t top_channels_ = 0, top_h_ = 0, top_w_ = 0;
};

struct ObservationLossTerms {
  double total = 0;
  double decoder_nll = 0;   // mean per sample
  double entropy = 0;       // mean posterior entropy
  double consistency = 0;   // mean CE over steps with a prior
};

/// Mean over B*T samples of 0.5*sum (o - mean)^2 - alpha1 H(q) + alpha2 CE(q, p).
///
/// obs and recon are [B*T, S, H, W]; posterior covers [B*T, K, C] in
/// batch-major order. prior_log_probs is [B, T-1, K, C] for steps 2..T
/// (treated as constants) or undefined to drop the consistency term.
template <typename T>
Tensor<T> observation_loss(const Tensor<T>& obs, const Tensor<T>& recon, const CategoricalVector<T>& posterior,
                           const Tensor<T>& prior_log_probs, std::int64_t batch, std::int64_t time, double alpha1,
                           double alpha2, ObservationLossTerms* terms = nullptr);

/// Packs u8 frames [N][S*H*W] (stack-major) into a [N, S, H, W] tensor k/255.
template <typename T>
Tensor<T> frames_to_tensor(const std::vector<std::uint8_t>& frames, std::int64_t n, int stack, int height, int width);

}  // namespace twm
