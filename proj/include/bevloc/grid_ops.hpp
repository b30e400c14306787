#pragma once

#include <vector>

#include "bevloc/feature_map.hpp"
#include "bevloc/se2.hpp"

namespace bevloc {

/// Bilinear interpolation of all channels at continuous pixel coordinates
/// (x = col, y = row). Reads outside [0, W-1] x [0, H-1] contribute zero.
/// Throws std::invalid_argument on non-finite coordinates or an empty map.
std::vector<float> bilinear_sample(const FeatureMap& map, double x, double y);

/// Same as above but accumulates into a caller-provided buffer of size
/// map.channels (overwritten, not added).
void bilinear_sample(const FeatureMap& map, double x, double y, float* out);

/// Bilinear resize with the align-corners-false convention: output pixel i
/// samples the source at (i + 0.5) * in/out - 0.5, clamped to the source
/// borders so constant maps stay constant. Resolution is rescaled by the
/// width ratio.
FeatureMap resize_bilinear(const FeatureMap& map, int target_height, int target_width);

/// Inverse rigid warp. `pose` maps source metric coordinates into output
/// metric coordinates; every output pixel is the bilinear sample of the
/// source at the preimage of its own metric position. Out-of-bounds reads
/// are zero. Both maps use the centered metric frame of FeatureMap.
FeatureMap rigid_warp(const FeatureMap& map, const SE2Pose& pose, int out_height,
                      int out_width, float out_resolution);

}  // namespace bevloc
