#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace twm {

/// Seedable random stream. All stochastic code takes one of these by
/// reference so runs are reproducible from a single seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Uniform in [0, 1).
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  /// Uniform integer in [0, n).
  std::int64_t index(std::int64_t n) {
    return std::uniform_int_distribution<std::int64_t>(0, n - 1)(engine_);
  }
  std::uint64_t next_u64() { return engine_(); }

  /// Derives an independent child stream; used to split a master seed into
  /// per-purpose streams.
  Rng split(std::uint64_t stream_id) {
    std::seed_seq seq{static_cast<std::uint32_t>(engine_() >> 32),
                      static_cast<std::uint32_t>(stream_id),
                      static_cast<std::uint32_t>(stream_id >> 32), 0x7477u};
    std::mt19937_64 child(seq);
    return Rng(child());
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

/// Draws an index from unnormalized non-negative weights (inverse CDF).
std::int64_t sample_discrete(std::span<const double> weights, Rng& rng);

}  // namespace twm
