#include "twm/dynamics/transformer.hpp"

#include <cmath>

namespace twm {

void TransformerConfig::validate() const {
  if (layers < 0) throw ConfigError("transformer layers must be >= 0");
  if (heads <= 0 || head_dim <= 0) throw ConfigError("transformer heads and head dim must be positive");
  if (model_dim != heads * head_dim)
    throw ConfigError("model dim " + std::to_string(model_dim) + " != heads x head dim " +
                      std::to_string(heads * head_dim));
  if (ff_dim <= 0) throw ConfigError("feed-forward dim must be positive");
  if (mem_len < 1) throw ConfigError("mem_len must be >= 1");
}

template <typename T>
TransformerXL<T>::TransformerXL(ParameterSet<T>& params, const std::string& name, const TransformerConfig& config,
                                Rng& rng)
    : config_(config) {
  config_.validate();
  const std::int64_t d = config_.model_dim;
  for (int l = 0; l < config_.layers; ++l) {
    const std::string p = name + ".layer" + std::to_string(l);
    Layer layer;
    layer.norm_attn = nn::LayerNorm<T>(params, p + ".norm_attn", d);
    layer.wq = nn::Linear<T>(params, p + ".wq", d, d, rng, false);
    layer.wk = nn::Linear<T>(params, p + ".wk", d, d, rng, false);
    layer.wv = nn::Linear<T>(params, p + ".wv", d, d, rng, false);
    layer.wr = nn::Linear<T>(params, p + ".wr", d, d, rng, false);
    layer.wo = nn::Linear<T>(params, p + ".wo", d, d, rng, false);
    layer.u = params.add(p + ".u", {d}, std::vector<T>(static_cast<std::size_t>(d), T(0)));
    layer.v = params.add(p + ".v", {d}, std::vector<T>(static_cast<std::size_t>(d), T(0)));
    layer.norm_ff = nn::LayerNorm<T>(params, p + ".norm_ff", d);
    layer.ff1 = nn::Linear<T>(params, p + ".ff1", d, config_.ff_dim, rng);
    layer.ff2 = nn::Linear<T>(params, p + ".ff2", config_.ff_dim, d, rng);
    layers_.push_back(std::move(layer));
  }
  final_norm_ = nn::LayerNorm<T>(params, name + ".final_norm", d);

  const std::int64_t r = config_.mem_len + 1;
  std::vector<T> table(static_cast<std::size_t>(r * d));
  const std::int64_t half = d / 2;
  for (std::int64_t dist = 0; dist < r; ++dist)
    for (std::int64_t i = 0; i < half; ++i) {
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(d));
      table[dist * d + i] = static_cast<T>(std::sin(dist * freq));
      table[dist * d + half + i] = static_cast<T>(std::cos(dist * freq));
    }
  rel_table_ = Tensor<T>::from({r, d}, std::move(table));
}

template <typename T>
std::uint64_t TransformerXL<T>::fingerprint() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (int v : {config_.layers, config_.model_dim, config_.heads, config_.head_dim, config_.ff_dim, config_.mem_len})
    h = (h ^ static_cast<std::uint64_t>(v)) * 1099511628211ULL;
  return h;
}

template <typename T>
XLMemory<T> TransformerXL<T>::new_memory(std::int64_t batch) const {
  XLMemory<T> m;
  m.batch = batch;
  m.fingerprint = fingerprint();
  m.keys.resize(layers_.size());
  m.values.resize(layers_.size());
  return m;
}

template <typename T>
Tensor<T> TransformerXL<T>::split_heads(const Tensor<T>& x, std::int64_t b, std::int64_t n) const {
  const std::int64_t h = config_.heads, hd = config_.head_dim;
  return reshape(permute(reshape(x, {b, n, h, hd}), {0, 2, 1, 3}), {b * h, n, hd});
}

template <typename T>
Tensor<T> TransformerXL<T>::forward(const Tensor<T>& x, XLMemory<T>* memory,
                                    std::vector<Tensor<T>>* attention) const {
  if (x.ndim() != 3 || x.dim(2) != config_.model_dim)
    throw ConfigError("transformer input must be [B, N, " + std::to_string(config_.model_dim) + "], got " +
                      shape_str(x.shape()));
  const std::int64_t b = x.dim(0), n = x.dim(1), d = config_.model_dim;
  const std::int64_t heads = config_.heads, hd = config_.head_dim, mem_len = config_.mem_len;
  std::int64_t cached = 0, start = 0;
  if (memory) {
    if (memory->fingerprint != fingerprint() || memory->keys.size() != layers_.size())
      throw UsageError("XLMemory was produced by a different transformer config");
    if (memory->batch != b) throw UsageError("XLMemory batch size does not match input");
    cached = memory->length;
    start = memory->position;
  }
  const std::int64_t keys = cached + n;
  const std::int64_t r = mem_len + 1;

  std::vector<std::uint8_t> visible(static_cast<std::size_t>(n * keys));
  std::vector<std::int64_t> rel(static_cast<std::size_t>(n * keys));
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t k = 0; k < keys; ++k) {
      const std::int64_t dist = (start + i) - (start - cached + k);
      const bool ok = dist >= 0 && dist <= mem_len;
      visible[i * keys + k] = ok;
      rel[i * keys + k] = ok ? dist : -1;
    }
  std::vector<std::int64_t> head_of(static_cast<std::size_t>(b * heads));
  for (std::int64_t i = 0; i < b * heads; ++i) head_of[i] = i % heads;
  const T inv_sqrt = T(1) / static_cast<T>(std::sqrt(static_cast<double>(hd)));

  if (attention) attention->clear();
  Tensor<T> h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& L = layers_[l];
    auto xn = L.norm_attn(h);
    auto q = L.wq(xn);
    auto k = split_heads(L.wk(xn), b, n);
    auto v = split_heads(L.wv(xn), b, n);
    if (memory && cached > 0) {
      k = concat<T>({memory->keys[l], k}, 1);
      v = concat<T>({memory->values[l], v}, 1);
    }
    auto qu = split_heads(add_row(q, L.u), b, n);
    auto qv = split_heads(add_row(q, L.v), b, n);
    auto pos = permute(reshape(L.wr(rel_table_), {r, heads, hd}), {1, 0, 2});  // [heads, R, hd]
    auto pos_b = index_select(pos, 0, head_of);                                // [B*heads, R, hd]
    auto content = bmm(qu, k, true);                                            // [B*heads, n, keys]
    auto position = rel_gather(bmm(qv, pos_b, true), rel, keys);
    auto attn = masked_softmax(scale(add(content, position), inv_sqrt), visible);
    if (attention) attention->push_back(attn.detach());
    auto ctx = reshape(permute(reshape(bmm(attn, v), {b, heads, n, hd}), {0, 2, 1, 3}), {b, n, d});
    h = add(h, L.wo(ctx));
    h = add(h, L.ff2(silu(L.ff1(L.norm_ff(h)))));

    if (memory) {
      const std::int64_t keep = std::min<std::int64_t>(keys, mem_len);
      memory->keys[l] = slice(k, 1, keys - keep, keep).detach();
      memory->values[l] = slice(v, 1, keys - keep, keep).detach();
    }
  }
  if (memory) {
    memory->length = std::min<std::int64_t>(keys, mem_len);
    memory->position = start + n;
  }
  return final_norm_(h);
}

template class TransformerXL<float>;
template class TransformerXL<double>;

}  // namespace twm
