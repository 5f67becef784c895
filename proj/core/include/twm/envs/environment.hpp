#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "twm/errors.hpp"

namespace twm::envs {

/// Interleaved 8-bit RGB raster, row-major H x W x 3.
struct RgbFrame {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  RgbFrame() = default;
  RgbFrame(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, 0) {}
  void fill_rect(double y0, double x0, double y1, double x1, std::uint8_t r, std::uint8_t g, std::uint8_t b);
};

struct RawStep {
  RgbFrame frame;
  double reward = 0.0;
  bool terminal = false;
};

struct RawEnvSpec {
  std::string id;
  int action_count = 0;
  int frame_height = 0;
  int frame_width = 0;
  /// Truncation limit in agent (post-skip) steps.
  std::int64_t max_episode_steps = 0;
};

/// Adapter boundary for pixel environments. Builtin toy games implement it
/// directly; an external emulator backend can be plugged in the same way.
class RawEnvironment {
 public:
  virtual ~RawEnvironment() = default;
  virtual RgbFrame reset(std::uint64_t seed) = 0;
  /// Advances one raw frame.
  virtual RawStep step(int action) = 0;
  virtual const RawEnvSpec& spec() const = 0;
  /// Remaining lives, for games that have them.
  virtual std::optional<int> lives() const { return std::nullopt; }
  /// Action used for random no-op starts, for games that support them.
  virtual std::optional<int> noop_action() const { return std::nullopt; }
};

/// Creates a builtin environment by id ("minipong" or "coins").
std::unique_ptr<RawEnvironment> make_raw_environment(const std::string& id, int raw_size);

}  // namespace twm::envs
