#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "bevloc/io.hpp"
#include "bevloc/nn.hpp"

namespace bevloc {

/// Intermediate feature maps at strides 4, 8, 16 and 32 relative to the
/// input image (dims follow ceil division).
struct BackbonePyramid {
  std::array<FeatureMap, 4> levels;
  int input_height = 0;
  int input_width = 0;
  float input_resolution = 1.0f;

  void validate() const;
};

struct EncoderConfig {
  int fusion_channels = 128;  // width the levels are projected to before summing
  int out_channels = 128;     // width of the final fused feature map
  bool use_stem_bypass = false;
  int bypass_channels = 16;
};

/// Seeded weights for the pyramid-fusion encoder. The backbone is a toy
/// stand-in: a stride-2 stem followed by four stride-2 stages with channels
/// 16, 32, 64 and 128, giving the stride 4/8/16/32 pyramid the fusion
/// contract depends on.
struct EncoderParams {
  EncoderConfig config;
  std::uint64_t seed = 0;

  Conv2d stem;
  std::array<Conv2d, 4> stages;
  Mlp context_mlp;                    // last-level channels -> fusion_channels
  std::array<Linear, 4> level_proj;   // per-level projection to fusion_channels
  Mlp fusion_mlp;                     // fusion_channels -> 2c -> out_channels

  // stride-1 residual bypass for the aerial encoder
  Conv2d bypass_proj;                          // 1x1 input projection
  Conv2d bypass_c1a, bypass_c1b;               // residual block 1 branch
  Conv2d bypass_c2a, bypass_c2b;               // residual block 2 branch
  Linear bypass_level_proj;                    // bypass_channels -> fusion_channels
};

EncoderParams make_encoder_params(const EncoderConfig& config, std::uint64_t seed);

/// Parameter blob round trip (FPRM1 container, seed kept in the header).
ParamBlob encoder_params_to_blob(const EncoderParams& params);
EncoderParams encoder_params_from_blob(const ParamBlob& blob);

/// Runs the seeded toy backbone. The image must be 3-channel and at least
/// 32x32 (std::invalid_argument otherwise).
BackbonePyramid toy_backbone(const FeatureMap& image, const EncoderParams& params);

/// Global-average context pooling: the spatial mean of `last_level` is passed
/// through a small MLP and concatenated per-pixel along channels.
FeatureMap context_pool(const FeatureMap& last_level, const EncoderParams& params);

/// Two stride-1 residual blocks on the RGB input. Output dims equal input
/// dims; zeroed branch weights make this the bare input projection.
FeatureMap stem_bypass(const FeatureMap& image, const EncoderParams& params);

/// Core fusion: each level is projected, resized to the target dims, summed
/// in a fixed order, and passed through `mlp` per pixel (nullptr skips the
/// MLP). Levels and projections must pair up.
FeatureMap fuse_levels(const std::vector<const FeatureMap*>& levels,
                       const std::vector<const Linear*>& projections, int out_height,
                       int out_width, float out_resolution, const Mlp* mlp);

/// Pyramid fusion at out_stride 1 or 4. The last level gets context pooling
/// before projection; extra levels (e.g. the stem bypass at out_stride 1)
/// must already match the target dims or std::invalid_argument is thrown.
FeatureMap fuse_pyramid(const BackbonePyramid& pyramid, const std::vector<FeatureMap>& extras,
                        int out_stride, const EncoderParams& params);

/// Ground encoder: backbone + fusion at stride 4. One parameter set is
/// shared across all cameras of a rig.
FeatureMap encode_ground(const FeatureMap& image, const EncoderParams& params);

/// Aerial encoder: backbone + stride-1 stem bypass + fusion at stride 1.
FeatureMap encode_aerial(const FeatureMap& image, const EncoderParams& params);

}  // namespace bevloc
