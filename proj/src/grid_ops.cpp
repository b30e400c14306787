#include "bevloc/grid_ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bevloc {

void bilinear_sample(const FeatureMap& map, double x, double y, float* out) {
  if (!std::isfinite(x) || !std::isfinite(y))
    throw std::invalid_argument("bilinear_sample: non-finite coordinates");
  if (map.empty()) throw std::invalid_argument("bilinear_sample: empty map");

  const int c = map.channels;
  std::fill(out, out + c, 0.0f);

  const double xf = std::floor(x), yf = std::floor(y);
  const int x0 = static_cast<int>(xf), y0 = static_cast<int>(yf);
  const double fx = x - xf, fy = y - yf;
  const double w00 = (1.0 - fx) * (1.0 - fy);
  const double w01 = fx * (1.0 - fy);
  const double w10 = (1.0 - fx) * fy;
  const double w11 = fx * fy;

  const auto add = [&](int r, int col, double w) {
    if (w == 0.0 || r < 0 || r >= map.height || col < 0 || col >= map.width) return;
    const float* p = map.data.data() + (static_cast<std::size_t>(r) * map.width + col) * c;
    for (int ch = 0; ch < c; ++ch) out[ch] += static_cast<float>(w * p[ch]);
  };
  add(y0, x0, w00);
  add(y0, x0 + 1, w01);
  add(y0 + 1, x0, w10);
  add(y0 + 1, x0 + 1, w11);
}

std::vector<float> bilinear_sample(const FeatureMap& map, double x, double y) {
  std::vector<float> out(map.channels);
  bilinear_sample(map, x, y, out.data());
  return out;
}

namespace {

// Bilinear read with coordinates clamped to the border (used by resize so
// constants are preserved at the edges).
void sample_clamped(const FeatureMap& map, double x, double y, float* out) {
  x = std::clamp(x, 0.0, static_cast<double>(map.width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(map.height - 1));
  const int x0 = std::min(static_cast<int>(x), map.width - 1);
  const int y0 = std::min(static_cast<int>(y), map.height - 1);
  const int x1 = std::min(x0 + 1, map.width - 1);
  const int y1 = std::min(y0 + 1, map.height - 1);
  const double fx = x - x0, fy = y - y0;
  const int c = map.channels;
  const float* p00 = map.pixel(y0, x0).data();
  const float* p01 = map.pixel(y0, x1).data();
  const float* p10 = map.pixel(y1, x0).data();
  const float* p11 = map.pixel(y1, x1).data();
  for (int ch = 0; ch < c; ++ch) {
    const double top = p00[ch] + fx * (p01[ch] - p00[ch]);
    const double bot = p10[ch] + fx * (p11[ch] - p10[ch]);
    out[ch] = static_cast<float>(top + fy * (bot - top));
  }
}

}  // namespace

FeatureMap resize_bilinear(const FeatureMap& map, int target_height, int target_width) {
  if (target_height < 1 || target_width < 1)
    throw std::invalid_argument("resize_bilinear: target dims must be >= 1");
  if (map.empty()) throw std::invalid_argument("resize_bilinear: empty map");
  if (target_height == map.height && target_width == map.width) return map;

  const float out_res = map.resolution * static_cast<float>(map.width) /
                        static_cast<float>(target_width);
  FeatureMap out(target_height, target_width, map.channels, out_res);
  const double sy = static_cast<double>(map.height) / target_height;
  const double sx = static_cast<double>(map.width) / target_width;
  for (int r = 0; r < target_height; ++r) {
    const double y = (r + 0.5) * sy - 0.5;
    for (int c = 0; c < target_width; ++c) {
      const double x = (c + 0.5) * sx - 0.5;
      sample_clamped(map, x, y, out.pixel(r, c).data());
    }
  }
  return out;
}

FeatureMap rigid_warp(const FeatureMap& map, const SE2Pose& pose, int out_height,
                      int out_width, float out_resolution) {
  if (!(out_resolution > 0.0f))
    throw std::invalid_argument("rigid_warp: out_resolution must be > 0");
  if (out_height < 1 || out_width < 1)
    throw std::invalid_argument("rigid_warp: output dims must be >= 1");
  if (map.empty()) throw std::invalid_argument("rigid_warp: empty map");

  FeatureMap out(out_height, out_width, map.channels, out_resolution);
  const SE2Pose inv = se2_invert(pose);
  const double cos_i = std::cos(inv.yaw), sin_i = std::sin(inv.yaw);
  const double ocx = out.center_col(), ocy = out.center_row();
  const double scx = map.center_col(), scy = map.center_row();
  const double inv_res = 1.0 / map.resolution;

  for (int r = 0; r < out_height; ++r) {
    const double py = (r - ocy) * out_resolution;
    for (int c = 0; c < out_width; ++c) {
      const double px = (c - ocx) * out_resolution;
      const double qx = inv.x + cos_i * px - sin_i * py;
      const double qy = inv.y + sin_i * px + cos_i * py;
      bilinear_sample(map, qx * inv_res + scx, qy * inv_res + scy, out.pixel(r, c).data());
    }
  }
  return out;
}

}  // namespace bevloc
