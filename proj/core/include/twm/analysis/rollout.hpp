#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "twm/dynamics/dynamics_model.hpp"

namespace twm::analysis {

/// Square row-major matrix.
struct Matrix {
  std::int64_t n = 0;
  std::vector<double> v;

  explicit Matrix(std::int64_t size = 0, double fill = 0.0) : n(size), v(static_cast<std::size_t>(size * size), fill) {}
  double& operator()(std::int64_t i, std::int64_t j) { return v[static_cast<std::size_t>(i * n + j)]; }
  double operator()(std::int64_t i, std::int64_t j) const { return v[static_cast<std::size_t>(i * n + j)]; }
  static Matrix identity(std::int64_t size);
};

Matrix matmul(const Matrix& a, const Matrix& b);

struct AttentionRollout {
  std::vector<Matrix> layers;  // head-averaged attention per layer
  Matrix rollout;              // attribution of every token to the inputs
  std::vector<std::string> labels;  // e.g. "z0", "a0", "r0"
  /// Attribution row of token i (sums to 1 over visible columns).
  std::vector<double> row(std::int64_t i) const;
};

/// Per layer: A + I, rows renormalized over visible columns (mask(i,j) != 0),
/// then multiplied from the first layer up: R = A_L ... A_1. Zero layers
/// give the identity. `size` is the token count when `layers` is empty.
AttentionRollout attention_rollout(const std::vector<Matrix>& layers, const std::vector<std::uint8_t>& mask,
                                   std::int64_t size);

/// Head average of captured attention [B*heads, N, N] for batch row `b`.
Matrix average_heads(const Tensor<float>& attention, std::int64_t batch, std::int64_t heads, std::int64_t b);

/// Labels for the interleaved token sequence of `steps` steps.
std::vector<std::string> token_labels(std::int64_t steps, bool reward_tokens);
/// Causal band mask of the dynamics model's transformer for `tokens` tokens.
std::vector<std::uint8_t> causal_mask(std::int64_t tokens, std::int64_t mem_len);

/// Runs the model over one trajectory (z [1,T,K*C], T actions, T-1 rewards)
/// and rolls out the captured attention.
AttentionRollout trajectory_rollout(const DynamicsModel<float>& model, const Tensor<float>& z,
                                    const std::vector<std::int64_t>& actions, const Tensor<float>& rewards);

/// Writes rollout.csv, layer<i>.csv, PNG maps with a modality-coloured label
/// strip (z blue, a green, r red) and last_row.csv for the last action token.
void write_rollout(const std::filesystem::path& dir, const AttentionRollout& r, int cell = 8);

}  // namespace twm::analysis
