#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "elemental/mdp.hpp"

namespace elemental {

struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, top row first

  std::array<std::uint8_t, 3> pixel(int x, int y) const;
  bool operator==(const Image&) const = default;
};

using Rgb = std::array<std::uint8_t, 3>;

struct RenderConfig {
  int width = 256;
  int height = 256;
  Rgb background{255, 255, 255};
  Rgb agent{31, 119, 180};
  Rgb goal{214, 39, 40};
  Rgb grid{200, 200, 200};
  int marker_radius = 6;
  // Step t of an episode with T observations is drawn with opacity
  // alpha_floor + (1 - alpha_floor) * (t + 1) / T.
  double alpha_floor = 0.0;

  void validate() const;
};

struct KeyframeSet {
  std::vector<Image> frames;
  std::vector<int> indices;
};

// All steps of all trajectories in one image. Throws UnsupportedRenderError
// for environments without a 2-D projection.
Image render_superimposed(std::span<const Trajectory> trajs, const Environment& env,
                          const RenderConfig& cfg = {});

// round(i (T-1) / (count-1)) for i = 0..count-1, deduplicated.
std::vector<int> keyframe_indices(int episode_length, int count);

// One frame per index; the agent is drawn fully opaque. `indices` overrides
// the even spacing when given (must be strictly increasing and in range).
KeyframeSet render_keyframes(const Trajectory& traj, const Environment& env, int count = 4,
                             const RenderConfig& cfg = {},
                             std::optional<std::vector<int>> indices = std::nullopt);

std::vector<std::uint8_t> encode_png(const Image& image);
std::vector<std::uint8_t> encode_ppm(const Image& image);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace elemental
