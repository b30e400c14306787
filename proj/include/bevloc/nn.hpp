#pragma once

#include <cmath>
#include <vector>

#include "bevloc/feature_map.hpp"
#include "bevloc/io.hpp"
#include "bevloc/rng.hpp"

namespace bevloc {

/// Smooth, strictly monotone nonlinearity used throughout the forward model.
inline float softplus(float x) {
  if (x > 20.0f) return x;
  if (x < -20.0f) return std::exp(x);
  return std::log1p(std::exp(x));
}

/// Dense layer, weight stored row-major as out_ch x in_ch.
struct Linear {
  int in_ch = 0, out_ch = 0;
  std::vector<float> weight;
  std::vector<float> bias;

  void apply(const float* in, float* out) const;
};

Linear make_linear(int in_ch, int out_ch, Rng& rng);
Linear identity_linear(int ch);

/// Two-layer pointwise MLP with softplus in between.
struct Mlp {
  Linear fc1, fc2;
  void apply(const float* in, float* out, float* scratch) const;
  std::vector<float> apply(const std::vector<float>& in) const;
};

Mlp make_mlp(int in_ch, int hidden, int out_ch, Rng& rng);

/// 2D convolution with zero padding. Output dims are ceil(in / stride);
/// the window for output index r starts at r * stride - pad.
/// Weight layout: out_ch x in_ch x k x k.
struct Conv2d {
  int in_ch = 0, out_ch = 0, ksize = 1, stride = 1, pad = 0;
  std::vector<float> weight;
  std::vector<float> bias;

  FeatureMap apply(const FeatureMap& in) const;
};

Conv2d make_conv(int in_ch, int out_ch, int ksize, int stride, int pad, Rng& rng);
Conv2d zero_conv(int in_ch, int out_ch, int ksize, int stride, int pad);

/// 3x3 depthwise convolution, stride 1, zero padding 1.
struct DepthwiseConv2d {
  int channels = 0;
  std::vector<float> weight;  // channels x 3 x 3
  std::vector<float> bias;

  FeatureMap apply(const FeatureMap& in) const;
};

DepthwiseConv2d make_depthwise(int channels, Rng& rng);

/// Per-token layer normalization over channels (eps 1e-5), affine.
struct LayerNorm {
  int channels = 0;
  std::vector<float> gamma;
  std::vector<float> beta;

  void apply(const float* in, float* out) const;
};

LayerNorm make_layer_norm(int channels);

/// Applies a dense layer to every pixel of a map.
FeatureMap apply_pointwise(const FeatureMap& map, const Linear& layer);
/// Applies an MLP to every pixel of a map.
FeatureMap apply_pointwise(const FeatureMap& map, const Mlp& mlp);

/// Parameter-blob round trips for the layer types above.
void blob_put(ParamBlob& blob, const std::string& name, const Linear& l);
Linear blob_linear(const ParamBlob& blob, const std::string& name);
void blob_put(ParamBlob& blob, const std::string& name, const Conv2d& c);
Conv2d blob_conv(const ParamBlob& blob, const std::string& name);
void blob_put(ParamBlob& blob, const std::string& name, const Mlp& m);
Mlp blob_mlp(const ParamBlob& blob, const std::string& name);
void blob_put(ParamBlob& blob, const std::string& name, const DepthwiseConv2d& d);
DepthwiseConv2d blob_depthwise(const ParamBlob& blob, const std::string& name);
void blob_put(ParamBlob& blob, const std::string& name, const LayerNorm& n);
LayerNorm blob_layer_norm(const ParamBlob& blob, const std::string& name);

}  // namespace bevloc
