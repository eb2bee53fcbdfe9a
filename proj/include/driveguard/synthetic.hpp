#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "driveguard/data.hpp"

namespace driveguard {

/// Class IDs of synthetic label maps.
enum SyntheticClass : std::int32_t { kSky = 0, kRoad = 1, kLane = 2, kVehicle = 3, kPedestrian = 4, kBackground = 5 };
inline constexpr std::size_t kSyntheticClassCount = 6;

inline const std::vector<std::string>& synthetic_class_names() {
  static const std::vector<std::string> names{"sky", "road", "lane_marking", "vehicle", "pedestrian", "background"};
  return names;
}

struct MotionConfig {
  int vehicles = -1;     // -1: random in [1, 3]
  int pedestrians = -1;  // -1: random in [0, 2]
  std::optional<std::pair<int, int>> first_vehicle_velocity;  // (dx, dy) px/frame
  int dash_speed = 1;    // lane dashes scroll towards the camera, px/frame
  bool illumination_drift = true;
};

namespace synthetic_detail {

struct Sprite {
  int x = 0, y = 0, w = 0, h = 0, vx = 0, vy = 0;
  std::array<float, 3> color{};
  std::int32_t cls = kVehicle;
};

// Static per-pixel texture in [-1, 1].
inline double texture(std::uint64_t seed, std::size_t x, std::size_t y) {
  const std::uint64_t h = splitmix64(seed ^ splitmix64((static_cast<std::uint64_t>(y) << 32) | x));
  return static_cast<double>(h >> 11) * 0x1.0p-53 * 2.0 - 1.0;
}

}  // namespace synthetic_detail

/// Procedural driving scene: sky gradient, textured road trapezoid with a
/// dashed centre line and solid edges, vehicle and pedestrian sprites moving
/// at constant integer velocities, and a global illumination drift.
inline FrameSequence generate_synthetic_sequence(std::uint64_t seed, std::size_t frame_count, std::size_t height,
                                                 std::size_t width, const MotionConfig& motion = {}) {
  using synthetic_detail::Sprite;
  detail::require(height >= 8 && width >= 8 && height % 8 == 0 && width % 8 == 0, "synthetic size ", height, "x", width,
                  " must be a positive multiple of 8");
  detail::require(frame_count >= 2, "synthetic sequences need at least 2 frames");
  Rng rng(derive_seed(seed, {0}));
  auto u = [&](double lo, double hi) { return lo + (hi - lo) * uniform01(rng); };
  const double H = static_cast<double>(height), W = static_cast<double>(width);

  const auto horizon = static_cast<std::size_t>(std::lround(H * u(0.35, 0.45)));
  const double vanish_x = W * u(0.4, 0.6);
  const double bottom_half = W * u(0.42, 0.55);
  const double top_half = std::max(1.0, W * 0.03);
  const double dash_period = std::max(4.0, std::round(H / 8.0));
  const std::array<double, 3> sky_top{u(0.15, 0.3), u(0.35, 0.5), u(0.75, 0.9)};
  const std::array<double, 3> sky_low{u(0.6, 0.7), u(0.75, 0.85), u(0.9, 0.97)};
  const std::array<double, 3> grass{u(0.2, 0.3), u(0.5, 0.6), u(0.15, 0.25)};
  const double road_grey = u(0.38, 0.46);
  const std::uint64_t tex_seed = derive_seed(seed, {1});

  std::vector<Sprite> sprites;
  const int n_vehicles = motion.vehicles >= 0 ? motion.vehicles : static_cast<int>(uniform_int(rng, 1, 3));
  const int n_people = motion.pedestrians >= 0 ? motion.pedestrians : static_cast<int>(uniform_int(rng, 0, 2));
  for (int i = 0; i < n_vehicles; ++i) {
    Sprite s;
    s.cls = kVehicle;
    s.w = std::max(2, static_cast<int>(std::lround(W * u(0.12, 0.2))));
    s.h = std::max(2, static_cast<int>(std::lround(s.w * u(0.55, 0.8))));
    s.x = static_cast<int>(std::lround(u(0.1, 0.9) * W - s.w / 2.0));
    s.y = static_cast<int>(std::lround(u(H * 0.5, H - s.h)));
    s.vx = static_cast<int>(uniform_int(rng, -2, 2));
    s.vy = static_cast<int>(uniform_int(rng, -1, 1));
    s.color = {static_cast<float>(u(0.7, 0.9)), static_cast<float>(u(0.1, 0.2)), static_cast<float>(u(0.08, 0.18))};
    if (i == 0 && motion.first_vehicle_velocity) std::tie(s.vx, s.vy) = *motion.first_vehicle_velocity;
    sprites.push_back(s);
  }
  for (int i = 0; i < n_people; ++i) {
    Sprite s;
    s.cls = kPedestrian;
    s.w = std::max(2, static_cast<int>(std::lround(W * 0.045)));
    s.h = std::max(4, static_cast<int>(std::lround(s.w * u(2.5, 3.2))));
    s.x = static_cast<int>(std::lround(u(0.05, 0.95) * W));
    s.y = static_cast<int>(std::lround(u(static_cast<double>(horizon), H - s.h)));
    s.vx = uniform01(rng) < 0.5 ? -1 : 1;
    s.vy = 0;
    s.color = {static_cast<float>(u(0.85, 0.95)), static_cast<float>(u(0.75, 0.85)), static_cast<float>(u(0.15, 0.25))};
    sprites.push_back(s);
  }
  const double light0 = u(0.95, 1.05);
  const double light_drift = motion.illumination_drift ? u(-0.15, 0.03) : 0.0;

  FrameSequence seq;
  seq.source = "synthetic_" + std::to_string(seed);
  for (std::size_t k = 0; k < frame_count; ++k) {
    Tensor img({1, 3, height, width});
    LabelMap lab(height, width);
    auto put = [&](std::size_t y, std::size_t x, std::array<double, 3> rgb, std::int32_t cls) {
      for (std::size_t c = 0; c < 3; ++c) img.at(0, c, y, x) = static_cast<float>(rgb[c]);
      lab.at(y, x) = cls;
    };
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const double t = synthetic_detail::texture(tex_seed, x, y);
        if (y < horizon) {
          const double f = static_cast<double>(y) / std::max<double>(1.0, static_cast<double>(horizon - 1));
          put(y, x, {sky_top[0] + (sky_low[0] - sky_top[0]) * f, sky_top[1] + (sky_low[1] - sky_top[1]) * f,
                     sky_top[2] + (sky_low[2] - sky_top[2]) * f},
              kSky);
          continue;
        }
        const double depth = (static_cast<double>(y - horizon) + 0.5) / (H - static_cast<double>(horizon));
        const double half = top_half + (bottom_half - top_half) * depth;
        const double centre = vanish_x + (W / 2.0 - vanish_x) * depth;
        const double dx = static_cast<double>(x) + 0.5 - centre;
        if (std::abs(dx) > half) {
          put(y, x, {grass[0] + 0.08 * t, grass[1] + 0.1 * t, grass[2] + 0.06 * t}, kBackground);
          continue;
        }
        const double line_half = std::max(0.5, 0.04 * half);
        const bool edge = std::abs(dx) > half - 2.0 * line_half;
        const auto phase = static_cast<long>(std::floor((static_cast<double>(y) - static_cast<double>(k) * motion.dash_speed) / dash_period));
        const bool dash = std::abs(dx) < line_half && (phase % 2 + 2) % 2 == 0;
        if (edge || dash) {
          put(y, x, {0.95, 0.95, 0.92}, kLane);
        } else {
          const double g = road_grey + 0.05 * t;
          put(y, x, {g, g, g + 0.02}, kRoad);
        }
      }
    }
    for (const auto& s : sprites) {
      const int sx = s.x + s.vx * static_cast<int>(k), sy = s.y + s.vy * static_cast<int>(k);
      for (int y = std::max(0, sy); y < std::min<int>(static_cast<int>(height), sy + s.h); ++y)
        for (int x = std::max(0, sx); x < std::min<int>(static_cast<int>(width), sx + s.w); ++x) {
          const double t = synthetic_detail::texture(tex_seed + 7, static_cast<std::size_t>(x - sx), static_cast<std::size_t>(y - sy));
          const double shade = s.cls == kPedestrian ? 0.04 * t : 0.015 * t;
          put(static_cast<std::size_t>(y), static_cast<std::size_t>(x),
              {s.color[0] + shade, s.color[1] + shade, s.color[2] + shade}, s.cls);
        }
    }
    const double light = light0 + light_drift * static_cast<double>(k) / static_cast<double>(frame_count - 1);
    for (float& v : img.data()) v = std::clamp(static_cast<float>(v * light), 0.0f, 1.0f);
    seq.frames.push_back(std::move(img));
    seq.labels.push_back(std::move(lab));
  }
  return seq;
}

}  // namespace driveguard
