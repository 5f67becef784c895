#pragma once

#include <deque>

#include "twm/envs/environment.hpp"
#include "twm/numerics/rng.hpp"

namespace twm::envs {

/// Stack of S gray frames, values k/255 in [0,1], layout H x W x S with the
/// oldest frame in slot 0.
struct Observation {
  int height = 0;
  int width = 0;
  int stack = 0;
  std::vector<float> values;

  float at(int y, int x, int s) const { return values[(static_cast<std::size_t>(y) * width + x) * stack + s]; }
  /// Frame `s` as 8-bit gray, H x W.
  std::vector<std::uint8_t> frame_u8(int s) const;
};

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool done = false;
};

struct EnvSpec {
  std::string id;
  int action_count = 0;
  int height = 0;
  int width = 0;
  int stack = 0;
  std::int64_t max_episode_steps = 0;
  std::uint64_t seed = 0;
};

enum class RewardTransform { kNone, kTanh };

struct PreprocessConfig {
  int frame_skip = 4;
  int size = 64;
  int stack = 4;
  /// 0 keeps the environment's own limit.
  std::int64_t max_episode_steps = 0;
  /// Only meaningful for adapters that report lives.
  bool terminate_on_life_loss = true;
  /// Only meaningful for adapters that expose a no-op action.
  int max_noops = 30;
  RewardTransform reward_transform = RewardTransform::kNone;
};

/// RGB -> gray in [0,1] with ITU-R 601 luma weights.
std::vector<double> to_gray(const RgbFrame& frame);
/// Area-averaging resize of a row-major gray image.
std::vector<double> area_resize(const std::vector<double>& src, int src_h, int src_w, int dst_h, int dst_w);
/// Gray + resize + round to 8 bits.
std::vector<std::uint8_t> preprocess_frame(const RgbFrame& frame, int size);

/// Frame skip, gray-scale, down-sampling and frame stacking over a raw
/// environment.
class PixelEnvironment {
 public:
  PixelEnvironment(std::unique_ptr<RawEnvironment> raw, PreprocessConfig config);

  Observation reset(std::uint64_t seed);
  StepResult step(int action);

  EnvSpec spec() const;
  bool done() const { return done_; }
  std::int64_t episode_steps() const { return steps_; }
  /// Most recent preprocessed frame, H x W.
  const std::vector<std::uint8_t>& latest_frame() const { return frames_.back(); }
  /// Last raw frame, before preprocessing.
  const RgbFrame& latest_raw_frame() const { return raw_frame_; }
  RawEnvironment& raw() { return *raw_; }
  const PreprocessConfig& config() const { return config_; }

 private:
  Observation observation() const;
  void push(const RgbFrame& frame);

  std::unique_ptr<RawEnvironment> raw_;
  PreprocessConfig config_;
  std::deque<std::vector<std::uint8_t>> frames_;
  RgbFrame raw_frame_;
  std::uint64_t seed_ = 0;
  std::int64_t steps_ = 0;
  bool done_ = true;
  std::optional<int> lives_;
};

std::unique_ptr<PixelEnvironment> make_environment(const std::string& id, int raw_size, PreprocessConfig config);

}  // namespace twm::envs
