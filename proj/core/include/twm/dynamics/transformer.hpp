#pragma once

#include <cstdint>
#include <vector>

#include "twm/numerics/nn.hpp"

namespace twm {

struct TransformerConfig {
  int layers = 10;
  int model_dim = 256;
  int heads = 4;
  int head_dim = 64;
  int ff_dim = 1024;
  /// Maximum query-key distance in tokens (keys older than that are never seen).
  int mem_len = 47;

  void validate() const;
};

/// Per-layer key/value cache of an incremental forward pass.
template <typename T>
struct XLMemory {
  std::vector<Tensor<T>> keys;    // per layer [B*heads, len, head_dim]
  std::vector<Tensor<T>> values;  // per layer [B*heads, len, head_dim]
  std::int64_t length = 0;        // cached tokens
  std::int64_t position = 0;      // absolute index of the next token
  std::int64_t batch = 0;
  std::uint64_t fingerprint = 0;  // identifies the producing config

  bool empty() const { return length == 0 && position == 0; }
};

/// Pre-norm Transformer-XL stack with relative sinusoidal position
/// encodings and learned content/position biases. A query at absolute
/// position i attends to keys j with i - mem_len <= j <= i, so one full pass
/// and token-by-token passes through an XLMemory give identical outputs.
template <typename T>
class TransformerXL {
 public:
  TransformerXL() = default;
  TransformerXL(ParameterSet<T>& params, const std::string& name, const TransformerConfig& config, Rng& rng);

  const TransformerConfig& config() const { return config_; }

  /// x [B, N, D] are the next N tokens after whatever the memory holds.
  /// With a memory, its cache is extended (and trimmed to mem_len); without
  /// one, positions start at 0. When attention is non-null it receives the
  /// per-layer weights [B*heads, N, keys] of this call.
  Tensor<T> forward(const Tensor<T>& x, XLMemory<T>* memory = nullptr,
                    std::vector<Tensor<T>>* attention = nullptr) const;

  XLMemory<T> new_memory(std::int64_t batch) const;
  std::uint64_t fingerprint() const;

 private:
  struct Layer {
    nn::LayerNorm<T> norm_attn, norm_ff;
    nn::Linear<T> wq, wk, wv, wo, wr, ff1, ff2;
    Tensor<T> u, v;  // [D]
  };

  Tensor<T> split_heads(const Tensor<T>& x, std::int64_t b, std::int64_t n) const;

  TransformerConfig config_;
  std::vector<Layer> layers_;
  nn::LayerNorm<T> final_norm_;
  Tensor<T> rel_table_;  // [mem_len+1, D] sinusoids for distances 0..mem_len
};

}  // namespace twm
