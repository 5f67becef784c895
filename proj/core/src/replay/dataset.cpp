#include "twm/replay/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <bit>
#include <fstream>
#include <numeric>

#include "twm/errors.hpp"
#include "twm/io/binary.hpp"

namespace twm {

BalancedSampler::BalancedSampler(double temperature) : temperature_(temperature) { set_temperature(temperature); }

void BalancedSampler::set_temperature(double t) {
  if (!(t > 0.0)) throw ConfigError("sampling temperature must be > 0 (inf for uniform)");
  temperature_ = t;
}

std::vector<double> BalancedSampler::start_probabilities(std::int64_t len) const {
  if (len < 1) throw ConfigError("sequence length must be >= 1");
  const std::int64_t t = size();
  if (t < len)
    throw DataError("not enough data: " + std::to_string(t) + " entries for sequences of length " +
                    std::to_string(len));
  const std::int64_t n = t - len + 1;
  std::vector<double> p(static_cast<std::size_t>(n));
  if (uniform()) {
    std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(n));
    return p;
  }
  // shift by the minimum count so the largest term is exp(0)
  const auto vmin = *std::min_element(counts_.begin(), counts_.begin() + n);
  double z = 0.0;
  for (std::int64_t i = 0; i < n; ++i) z += p[i] = std::exp(-static_cast<double>(counts_[i] - vmin) / temperature_);
  for (auto& x : p) x /= z;
  return p;
}

std::vector<std::int64_t> BalancedSampler::sample_starts(std::int64_t n, std::int64_t len, Rng& rng) {
  if (n < 0) throw ConfigError("number of sequences must be >= 0");
  const auto p = start_probabilities(len);
  std::vector<double> cdf(p.size());
  std::partial_sum(p.begin(), p.end(), cdf.begin());
  std::vector<std::int64_t> starts(static_cast<std::size_t>(n));
  for (auto& s : starts) {
    if (uniform()) {
      s = rng.index(static_cast<std::int64_t>(p.size()));
    } else {
      const double u = rng.uniform() * cdf.back();
      s = std::min<std::int64_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin(),
                                 static_cast<std::int64_t>(p.size()) - 1);
    }
  }
  for (auto s : starts) ++counts_[s];
  return starts;
}

ExperienceDataset::ExperienceDataset(int height, int width, int stack, std::int64_t capacity, double temperature)
    : height_(height), width_(width), stack_(stack), capacity_(capacity), sampler_(temperature) {
  if (height <= 0 || width <= 0 || stack <= 0) throw ConfigError("dataset frame shape must be positive");
  if (capacity <= 0) throw ConfigError("dataset capacity must be positive");
}

void ExperienceDataset::append(std::span<const std::uint8_t> frame, std::int64_t action, float reward, bool done) {
  if (size() >= capacity_) throw DataError("dataset capacity of " + std::to_string(capacity_) + " exceeded");
  if (frame.size() != frame_size()) throw DataError("frame has wrong size");
  const std::int64_t i = size();
  episode_start_.push_back(i == 0 || dones_.back() ? i : episode_start_.back());
  frames_.insert(frames_.end(), frame.begin(), frame.end());
  actions_.push_back(action);
  rewards_.push_back(reward);
  dones_.push_back(done ? 1 : 0);
  sampler_.add_entry();
}

std::span<const std::uint8_t> ExperienceDataset::frame(std::int64_t i) const {
  if (i < 0 || i >= size()) throw UsageError("dataset index out of range");
  return {frames_.data() + static_cast<std::size_t>(i) * frame_size(), frame_size()};
}

std::vector<std::uint8_t> ExperienceDataset::observation(std::int64_t i) const {
  std::vector<std::uint8_t> out;
  out.reserve(frame_size() * stack_);
  const std::int64_t first = episode_start(i);
  for (int s = stack_ - 1; s >= 0; --s) {
    const auto f = frame(std::max(first, i - s));
    out.insert(out.end(), f.begin(), f.end());
  }
  return out;
}

SampledBatch ExperienceDataset::gather(const std::vector<std::int64_t>& starts, std::int64_t len) const {
  SampledBatch b;
  b.len = len;
  b.starts = starts;
  for (auto s : starts) {
    if (s < 0 || s + len > size()) throw UsageError("sequence window out of range");
    for (std::int64_t t = s; t < s + len; ++t) {
      auto o = observation(t);
      b.frames.insert(b.frames.end(), o.begin(), o.end());
      b.actions.push_back(actions_[t]);
      b.rewards.push_back(rewards_[t]);
      b.dones.push_back(dones_[t]);
    }
  }
  return b;
}

SampledBatch ExperienceDataset::sample_sequences(std::int64_t n, std::int64_t len, Rng& rng) {
  return gather(sampler_.sample_starts(n, len, rng), len);
}

namespace {

constexpr char kMagic[4] = {'T', 'W', 'M', 'D'};
constexpr std::uint32_t kVersion = 1;

using io::get;
using io::put;

}  // namespace

void ExperienceDataset::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write dataset to " + path.string());
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, static_cast<std::uint64_t>(size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(height_));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(width_));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(stack_));
  out.write(reinterpret_cast<const char*>(frames_.data()), static_cast<std::streamsize>(frames_.size()));
  for (auto a : actions_) put<std::int32_t>(out, static_cast<std::int32_t>(a));
  for (auto r : rewards_) put<float>(out, r);
  out.write(reinterpret_cast<const char*>(dones_.data()), static_cast<std::streamsize>(dones_.size()));
  for (auto c : sampler_.counts()) put<std::int64_t>(out, c);
  if (!out) throw DataError("failed writing dataset to " + path.string());
}

ExperienceDataset ExperienceDataset::load(const std::filesystem::path& path, double temperature) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw DataError("not a TWMD dataset: " + path.string());
  const auto version = get<std::uint32_t>(in, "dataset file");
  if (version != kVersion) throw DataError("unsupported dataset version " + std::to_string(version));
  const auto t = static_cast<std::int64_t>(get<std::uint64_t>(in, "dataset file"));
  const int h = static_cast<int>(get<std::uint32_t>(in, "dataset file"));
  const int w = static_cast<int>(get<std::uint32_t>(in, "dataset file"));
  const int s = static_cast<int>(get<std::uint32_t>(in, "dataset file"));
  ExperienceDataset d(h, w, s, std::max<std::int64_t>(t, 1), temperature);
  std::vector<std::uint8_t> frames(static_cast<std::size_t>(t) * h * w);
  if (!in.read(reinterpret_cast<char*>(frames.data()), static_cast<std::streamsize>(frames.size())))
    throw DataError("dataset file is truncated");
  std::vector<std::int32_t> actions(static_cast<std::size_t>(t));
  for (auto& a : actions) a = get<std::int32_t>(in, "dataset file");
  std::vector<float> rewards(static_cast<std::size_t>(t));
  for (auto& r : rewards) r = get<float>(in, "dataset file");
  std::vector<std::uint8_t> dones(static_cast<std::size_t>(t));
  if (!in.read(reinterpret_cast<char*>(dones.data()), static_cast<std::streamsize>(dones.size())))
    throw DataError("dataset file is truncated");
  for (std::int64_t i = 0; i < t; ++i)
    d.append({frames.data() + static_cast<std::size_t>(i) * h * w, static_cast<std::size_t>(h) * w}, actions[i],
             rewards[i], dones[i] != 0);
  for (auto& c : d.sampler_.mutable_counts()) {
    c = get<std::int64_t>(in, "dataset file");
    if (c < 0) throw DataError("negative visitation count in dataset");
  }
  return d;
}

std::vector<std::int64_t> simulate_growing_dataset(const GrowthSimulationConfig& c) {
  if (c.final_size < c.seq_len || !(c.updates_per_step > 0.0)) throw ConfigError("invalid growth simulation config");
  BalancedSampler sampler(c.temperature);
  Rng rng(c.seed);
  double owed = 0.0;
  for (std::int64_t t = 1; t <= c.final_size; ++t) {
    sampler.add_entry();
    if (t < c.seq_len) continue;
    for (owed += c.updates_per_step; owed >= 1.0; owed -= 1.0)
      sampler.sample_starts(c.sequences_per_update, c.seq_len, rng);
  }
  return sampler.counts();
}

std::vector<double> time_on_prefix(const std::vector<std::int64_t>& selections) {
  std::vector<double> out(selections.size());
  double total = 0;
  for (auto s : selections) total += static_cast<double>(s);
  double acc = 0;
  for (std::size_t i = 0; i < selections.size(); ++i) {
    acc += static_cast<double>(selections[i]);
    out[i] = total > 0 ? acc / total : 0.0;
  }
  return out;
}

double equivalent_temperature(double reference_tau, double reference_rate, double rate) {
  if (!(reference_rate > 0.0) || !(rate > 0.0)) throw ConfigError("sampling rates must be positive");
  return reference_tau * rate / reference_rate;
}

void write_time_on_prefix_csv(const std::filesystem::path& path, const std::vector<double>& cumulative) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "index,cumulative_fraction\n";
  for (std::size_t i = 0; i < cumulative.size(); ++i) out << i << ',' << cumulative[i] << '\n';
}

}  // namespace twm
