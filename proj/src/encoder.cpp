#include "bevloc/encoder.hpp"

#include <stdexcept>

#include "bevloc/grid_ops.hpp"

namespace bevloc {

namespace {

constexpr std::array<int, 4> kStageChannels = {16, 32, 64, 128};
constexpr int kStemChannels = 16;

int ceil_div(int a, int b) { return (a + b - 1) / b; }

FeatureMap activate(FeatureMap map) {
  for (auto& v : map.data) v = softplus(v);
  return map;
}

FeatureMap residual_block(const FeatureMap& x, const Conv2d& ca, const Conv2d& cb) {
  FeatureMap branch = cb.apply(activate(ca.apply(x)));
  FeatureMap out = x;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += branch.data[i];
  return out;
}

}  // namespace

void BackbonePyramid::validate() const {
  int stride = 4;
  for (const auto& level : levels) {
    if (level.height != ceil_div(input_height, stride) ||
        level.width != ceil_div(input_width, stride))
      throw std::invalid_argument("pyramid level dims inconsistent with stride");
    stride *= 2;
  }
}

EncoderParams make_encoder_params(const EncoderConfig& config, std::uint64_t seed) {
  Rng root(seed);
  EncoderParams p;
  p.config = config;
  p.seed = seed;

  Rng backbone = root.stream("backbone");
  p.stem = make_conv(3, kStemChannels, 3, 2, 1, backbone);
  int in_ch = kStemChannels;
  for (int s = 0; s < 4; ++s) {
    p.stages[s] = make_conv(in_ch, kStageChannels[s], 3, 2, 1, backbone);
    in_ch = kStageChannels[s];
  }

  const int c = config.fusion_channels;
  Rng fusion = root.stream("fusion");
  p.context_mlp = make_mlp(kStageChannels[3], kStageChannels[3], c, fusion);
  for (int s = 0; s < 3; ++s) p.level_proj[s] = make_linear(kStageChannels[s], c, fusion);
  p.level_proj[3] = make_linear(kStageChannels[3] + c, c, fusion);
  p.fusion_mlp = make_mlp(c, 2 * c, config.out_channels, fusion);

  Rng bypass = root.stream("stem_bypass");
  const int bc = config.bypass_channels;
  p.bypass_proj = make_conv(3, bc, 1, 1, 0, bypass);
  p.bypass_c1a = make_conv(bc, bc, 3, 1, 1, bypass);
  p.bypass_c1b = make_conv(bc, bc, 3, 1, 1, bypass);
  p.bypass_c2a = make_conv(bc, bc, 3, 1, 1, bypass);
  p.bypass_c2b = make_conv(bc, bc, 3, 1, 1, bypass);
  p.bypass_level_proj = make_linear(bc, c, bypass);
  return p;
}

ParamBlob encoder_params_to_blob(const EncoderParams& p) {
  ParamBlob blob;
  blob.seed = p.seed;
  blob.add("config", {4},
           {static_cast<float>(p.config.fusion_channels), static_cast<float>(p.config.out_channels),
            p.config.use_stem_bypass ? 1.0f : 0.0f, static_cast<float>(p.config.bypass_channels)});
  blob_put(blob, "stem", p.stem);
  for (int s = 0; s < 4; ++s) blob_put(blob, "stage" + std::to_string(s), p.stages[s]);
  blob_put(blob, "context", p.context_mlp);
  for (int s = 0; s < 4; ++s) blob_put(blob, "proj" + std::to_string(s), p.level_proj[s]);
  blob_put(blob, "fusion", p.fusion_mlp);
  blob_put(blob, "bypass.proj", p.bypass_proj);
  blob_put(blob, "bypass.c1a", p.bypass_c1a);
  blob_put(blob, "bypass.c1b", p.bypass_c1b);
  blob_put(blob, "bypass.c2a", p.bypass_c2a);
  blob_put(blob, "bypass.c2b", p.bypass_c2b);
  blob_put(blob, "bypass.proj_level", p.bypass_level_proj);
  return blob;
}

EncoderParams encoder_params_from_blob(const ParamBlob& blob) {
  EncoderParams p;
  const auto& cfg = blob.get("config");
  p.config.fusion_channels = static_cast<int>(cfg.data[0]);
  p.config.out_channels = static_cast<int>(cfg.data[1]);
  p.config.use_stem_bypass = cfg.data[2] != 0.0f;
  p.config.bypass_channels = static_cast<int>(cfg.data[3]);
  p.seed = blob.seed;
  p.stem = blob_conv(blob, "stem");
  for (int s = 0; s < 4; ++s) p.stages[s] = blob_conv(blob, "stage" + std::to_string(s));
  p.context_mlp = blob_mlp(blob, "context");
  for (int s = 0; s < 4; ++s) p.level_proj[s] = blob_linear(blob, "proj" + std::to_string(s));
  p.fusion_mlp = blob_mlp(blob, "fusion");
  p.bypass_proj = blob_conv(blob, "bypass.proj");
  p.bypass_c1a = blob_conv(blob, "bypass.c1a");
  p.bypass_c1b = blob_conv(blob, "bypass.c1b");
  p.bypass_c2a = blob_conv(blob, "bypass.c2a");
  p.bypass_c2b = blob_conv(blob, "bypass.c2b");
  p.bypass_level_proj = blob_linear(blob, "bypass.proj_level");
  return p;
}

BackbonePyramid toy_backbone(const FeatureMap& image, const EncoderParams& params) {
  if (image.channels != 3) throw std::invalid_argument("toy_backbone: expected 3 channels");
  if (image.height < 32 || image.width < 32)
    throw std::invalid_argument("toy_backbone: image must be at least 32x32");

  BackbonePyramid pyr;
  pyr.input_height = image.height;
  pyr.input_width = image.width;
  pyr.input_resolution = image.resolution;

  FeatureMap x = activate(params.stem.apply(image));
  for (int s = 0; s < 4; ++s) {
    x = activate(params.stages[s].apply(x));
    pyr.levels[s] = x;
  }
  pyr.validate();
  return pyr;
}

FeatureMap context_pool(const FeatureMap& last_level, const EncoderParams& params) {
  if (last_level.channels != params.context_mlp.fc1.in_ch)
    throw std::invalid_argument("context_pool: channel mismatch");
  const int c = last_level.channels;
  std::vector<float> mean(c, 0.0f);
  std::vector<double> acc(c, 0.0);
  const std::size_t pixels = static_cast<std::size_t>(last_level.height) * last_level.width;
  for (std::size_t p = 0; p < pixels; ++p) {
    const float* px = last_level.data.data() + p * c;
    for (int ch = 0; ch < c; ++ch) acc[ch] += px[ch];
  }
  for (int ch = 0; ch < c; ++ch) mean[ch] = static_cast<float>(acc[ch] / pixels);
  const std::vector<float> ctx = params.context_mlp.apply(mean);

  FeatureMap out(last_level.height, last_level.width, c + static_cast<int>(ctx.size()),
                 last_level.resolution);
  for (int r = 0; r < out.height; ++r) {
    for (int col = 0; col < out.width; ++col) {
      float* dst = out.pixel(r, col).data();
      const float* src = last_level.pixel(r, col).data();
      std::copy(src, src + c, dst);
      std::copy(ctx.begin(), ctx.end(), dst + c);
    }
  }
  return out;
}

FeatureMap stem_bypass(const FeatureMap& image, const EncoderParams& params) {
  if (image.channels != 3) throw std::invalid_argument("stem_bypass: expected 3 channels");
  FeatureMap x = params.bypass_proj.apply(image);
  x = residual_block(x, params.bypass_c1a, params.bypass_c1b);
  x = residual_block(x, params.bypass_c2a, params.bypass_c2b);
  return x;
}

FeatureMap fuse_levels(const std::vector<const FeatureMap*>& levels,
                       const std::vector<const Linear*>& projections, int out_height,
                       int out_width, float out_resolution, const Mlp* mlp) {
  if (levels.empty() || levels.size() != projections.size())
    throw std::invalid_argument("fuse_levels: levels and projections must pair up");
  const int c = projections[0]->out_ch;
  FeatureMap sum(out_height, out_width, c, out_resolution);
  for (std::size_t i = 0; i < levels.size(); ++i) {
    FeatureMap projected = apply_pointwise(*levels[i], *projections[i]);
    FeatureMap resized = resize_bilinear(projected, out_height, out_width);
    for (std::size_t k = 0; k < sum.data.size(); ++k) sum.data[k] += resized.data[k];
  }
  sum.resolution = out_resolution;
  if (mlp == nullptr) return sum;
  FeatureMap out = apply_pointwise(sum, *mlp);
  out.resolution = out_resolution;
  return out;
}

FeatureMap fuse_pyramid(const BackbonePyramid& pyramid, const std::vector<FeatureMap>& extras,
                        int out_stride, const EncoderParams& params) {
  if (out_stride != 1 && out_stride != 4)
    throw std::invalid_argument("fuse_pyramid: out_stride must be 1 or 4");
  const int th = ceil_div(pyramid.input_height, out_stride);
  const int tw = ceil_div(pyramid.input_width, out_stride);
  for (const auto& extra : extras)
    if (extra.height != th || extra.width != tw)
      throw std::invalid_argument("fuse_pyramid: extra level stride mismatch");

  const FeatureMap last = context_pool(pyramid.levels[3], params);
  std::vector<const FeatureMap*> levels = {&pyramid.levels[0], &pyramid.levels[1],
                                           &pyramid.levels[2], &last};
  std::vector<const Linear*> projections = {&params.level_proj[0], &params.level_proj[1],
                                            &params.level_proj[2], &params.level_proj[3]};
  for (const auto& extra : extras) {
    levels.push_back(&extra);
    projections.push_back(&params.bypass_level_proj);
  }
  const float out_res = pyramid.input_resolution * static_cast<float>(out_stride);
  return fuse_levels(levels, projections, th, tw, out_res, &params.fusion_mlp);
}

FeatureMap encode_ground(const FeatureMap& image, const EncoderParams& params) {
  return fuse_pyramid(toy_backbone(image, params), {}, 4, params);
}

FeatureMap encode_aerial(const FeatureMap& image, const EncoderParams& params) {
  std::vector<FeatureMap> extras;
  if (params.config.use_stem_bypass) extras.push_back(stem_bypass(image, params));
  return fuse_pyramid(toy_backbone(image, params), extras, 1, params);
}

}  // namespace bevloc
