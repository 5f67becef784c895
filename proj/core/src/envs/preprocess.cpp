#include "twm/envs/preprocess.hpp"

#include <algorithm>
#include <cmath>

namespace twm::envs {

std::vector<std::uint8_t> Observation::frame_u8(int s) const {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(height) * width);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<std::uint8_t>(std::lround(values[i * stack + s] * 255.0f));
  return out;
}

std::vector<double> to_gray(const RgbFrame& frame) {
  std::vector<double> g(static_cast<std::size_t>(frame.height) * frame.width);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto* p = &frame.pixels[i * 3];
    g[i] = (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]) / 255.0;
  }
  return g;
}

namespace {

// weights[o * n + i]: share of source cell i inside destination cell o
std::vector<double> area_weights(int n, int m) {
  std::vector<double> w(static_cast<std::size_t>(m) * n, 0.0);
  const double ratio = static_cast<double>(n) / m;
  for (int o = 0; o < m; ++o) {
    const double lo = o * ratio, hi = (o + 1) * ratio;
    for (int i = static_cast<int>(std::floor(lo)); i < n && i < hi; ++i) {
      const double overlap = std::min(hi, i + 1.0) - std::max(lo, static_cast<double>(i));
      if (overlap > 0) w[static_cast<std::size_t>(o) * n + i] = overlap / ratio;
    }
  }
  return w;
}

}  // namespace

std::vector<double> area_resize(const std::vector<double>& src, int src_h, int src_w, int dst_h, int dst_w) {
  if (static_cast<std::size_t>(src_h) * src_w != src.size()) throw ConfigError("area_resize: size mismatch");
  if (dst_h <= 0 || dst_w <= 0) throw ConfigError("area_resize: bad target size");
  const auto wy = area_weights(src_h, dst_h);
  const auto wx = area_weights(src_w, dst_w);
  std::vector<double> rows(static_cast<std::size_t>(dst_h) * src_w, 0.0);
  for (int o = 0; o < dst_h; ++o)
    for (int i = 0; i < src_h; ++i) {
      const double w = wy[static_cast<std::size_t>(o) * src_h + i];
      if (w == 0.0) continue;
      for (int x = 0; x < src_w; ++x) rows[static_cast<std::size_t>(o) * src_w + x] += w * src[static_cast<std::size_t>(i) * src_w + x];
    }
  std::vector<double> out(static_cast<std::size_t>(dst_h) * dst_w, 0.0);
  for (int y = 0; y < dst_h; ++y)
    for (int o = 0; o < dst_w; ++o) {
      double acc = 0.0;
      for (int x = 0; x < src_w; ++x) acc += wx[static_cast<std::size_t>(o) * src_w + x] * rows[static_cast<std::size_t>(y) * src_w + x];
      out[static_cast<std::size_t>(y) * dst_w + o] = acc;
    }
  return out;
}

std::vector<std::uint8_t> preprocess_frame(const RgbFrame& frame, int size) {
  const auto small = area_resize(to_gray(frame), frame.height, frame.width, size, size);
  std::vector<std::uint8_t> out(small.size());
  for (std::size_t i = 0; i < small.size(); ++i)
    out[i] = static_cast<std::uint8_t>(std::clamp(std::lround(small[i] * 255.0), 0L, 255L));
  return out;
}

PixelEnvironment::PixelEnvironment(std::unique_ptr<RawEnvironment> raw, PreprocessConfig config)
    : raw_(std::move(raw)), config_(config) {
  if (!raw_) throw ConfigError("PixelEnvironment needs an environment");
  if (config_.frame_skip < 1) throw ConfigError("frame_skip must be >= 1");
  if (config_.stack < 1) throw ConfigError("frame stack must be >= 1");
  if (config_.size < 1) throw ConfigError("frame size must be >= 1");
  if (config_.max_noops < 0) throw ConfigError("max_noops must be >= 0");
  if (config_.max_episode_steps < 0) throw ConfigError("max_episode_steps must be >= 0");
  if (raw_->spec().action_count < 2) throw ConfigError("environment needs at least 2 actions");
}

EnvSpec PixelEnvironment::spec() const {
  const auto& r = raw_->spec();
  return {r.id,        r.action_count, config_.size,
          config_.size, config_.stack,  config_.max_episode_steps > 0 ? config_.max_episode_steps : r.max_episode_steps,
          seed_};
}

void PixelEnvironment::push(const RgbFrame& frame) {
  raw_frame_ = frame;
  frames_.push_back(preprocess_frame(frame, config_.size));
  while (static_cast<int>(frames_.size()) > config_.stack) frames_.pop_front();
}

Observation PixelEnvironment::observation() const {
  Observation o{config_.size, config_.size, config_.stack, {}};
  const std::size_t hw = static_cast<std::size_t>(config_.size) * config_.size;
  o.values.resize(hw * config_.stack);
  for (int s = 0; s < config_.stack; ++s)
    for (std::size_t i = 0; i < hw; ++i) o.values[i * config_.stack + s] = frames_[s][i] / 255.0f;
  return o;
}

Observation PixelEnvironment::reset(std::uint64_t seed) {
  seed_ = seed;
  RgbFrame first = raw_->reset(seed);
  if (auto noop = raw_->noop_action(); noop && config_.max_noops > 0) {
    Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
    const auto n = rng.index(static_cast<std::int64_t>(config_.max_noops) + 1);
    for (std::int64_t i = 0; i < n; ++i) {
      auto st = raw_->step(*noop);
      first = st.frame;
      if (st.terminal) first = raw_->reset(seed + 1);
    }
  }
  lives_ = raw_->lives();
  frames_.clear();
  push(first);
  while (static_cast<int>(frames_.size()) < config_.stack) frames_.push_back(frames_.back());
  steps_ = 0;
  done_ = false;
  return observation();
}

StepResult PixelEnvironment::step(int action) {
  if (done_) throw UsageError("step() on a finished episode; call reset()");
  if (action < 0 || action >= raw_->spec().action_count) throw UsageError("action out of range");
  StepResult out;
  bool terminal = false;
  RgbFrame last;
  for (int k = 0; k < config_.frame_skip; ++k) {
    auto st = raw_->step(action);
    out.reward += st.reward;
    last = std::move(st.frame);
    if (st.terminal) {
      terminal = true;
      break;
    }
    if (config_.terminate_on_life_loss && lives_) {
      auto now = raw_->lives();
      if (now && *now < *lives_) {
        terminal = true;
        break;
      }
    }
  }
  if (config_.reward_transform == RewardTransform::kTanh) out.reward = std::tanh(out.reward);
  push(last);
  ++steps_;
  done_ = terminal || steps_ >= spec().max_episode_steps;
  out.done = done_;
  out.observation = observation();
  return out;
}

std::unique_ptr<PixelEnvironment> make_environment(const std::string& id, int raw_size, PreprocessConfig config) {
  return std::make_unique<PixelEnvironment>(make_raw_environment(id, raw_size), config);
}

}  // namespace twm::envs
