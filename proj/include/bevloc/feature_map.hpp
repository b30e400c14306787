#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace bevloc {

/// Dense H x W x C feature grid with a metric pixel resolution.
///
/// Data is row-major in (row, col, channel) order. The implicit metric frame
/// has its origin at the grid center: pixel (r, c) sits at
///   x = (c - (width-1)/2) * resolution,  y = (r - (height-1)/2) * resolution.
struct FeatureMap {
  int height = 0;
  int width = 0;
  int channels = 0;
  float resolution = 1.0f;  // meters per pixel
  std::vector<float> data;

  FeatureMap() = default;
  FeatureMap(int h, int w, int c, float res, float fill = 0.0f);

  bool empty() const { return data.empty(); }
  std::size_t size() const { return data.size(); }

  float& at(int r, int c, int ch) {
    return data[(static_cast<std::size_t>(r) * width + c) * channels + ch];
  }
  float at(int r, int c, int ch) const {
    return data[(static_cast<std::size_t>(r) * width + c) * channels + ch];
  }
  std::span<float> pixel(int r, int c) {
    return {data.data() + (static_cast<std::size_t>(r) * width + c) * channels,
            static_cast<std::size_t>(channels)};
  }
  std::span<const float> pixel(int r, int c) const {
    return {data.data() + (static_cast<std::size_t>(r) * width + c) * channels,
            static_cast<std::size_t>(channels)};
  }

  double center_col() const { return 0.5 * (width - 1); }
  double center_row() const { return 0.5 * (height - 1); }

  /// Checks dimensions, resolution and finiteness; throws std::invalid_argument.
  void validate(const std::string& what = "feature map") const;
};

/// Correlation scores over a grid of integer pixel offsets, one plane per
/// rotation angle. Index (p, i, j) corresponds to the offset
/// (dy, dx) = (offset_row0 + i, offset_col0 + j): the value is the inner
/// product of the template placed with its origin at reference pixel (dy, dx).
struct CorrelationMap {
  int height = 0;
  int width = 0;
  int planes = 1;
  int offset_row0 = 0;
  int offset_col0 = 0;
  std::vector<float> values;  // plane-major, then row-major

  float at(int plane, int i, int j) const {
    return values[(static_cast<std::size_t>(plane) * height + i) * width + j];
  }
  float& at(int plane, int i, int j) {
    return values[(static_cast<std::size_t>(plane) * height + i) * width + j];
  }
  /// Value at pixel offset (dy, dx); offsets must be in range.
  float at_offset(int plane, int dy, int dx) const {
    return at(plane, dy - offset_row0, dx - offset_col0);
  }
};

}  // namespace bevloc
