#include "bevloc/nn.hpp"

#include <stdexcept>

namespace bevloc {

namespace {

// Uniform in (-a, a) with a = 1 / sqrt(fan_in).
std::vector<float> fan_in_uniform(std::size_t n, int fan_in, Rng& rng) {
  const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<float> w(n);
  for (auto& v : w) v = static_cast<float>(rng.uniform(-a, a));
  return w;
}

}  // namespace

void Linear::apply(const float* in, float* out) const {
  for (int o = 0; o < out_ch; ++o) {
    double acc = bias[o];
    const float* w = weight.data() + static_cast<std::size_t>(o) * in_ch;
    for (int i = 0; i < in_ch; ++i) acc += static_cast<double>(w[i]) * in[i];
    out[o] = static_cast<float>(acc);
  }
}

Linear make_linear(int in_ch, int out_ch, Rng& rng) {
  Linear l{in_ch, out_ch, fan_in_uniform(static_cast<std::size_t>(in_ch) * out_ch, in_ch, rng),
           fan_in_uniform(out_ch, in_ch, rng)};
  return l;
}

Linear identity_linear(int ch) {
  Linear l{ch, ch, std::vector<float>(static_cast<std::size_t>(ch) * ch, 0.0f),
           std::vector<float>(ch, 0.0f)};
  for (int i = 0; i < ch; ++i) l.weight[static_cast<std::size_t>(i) * ch + i] = 1.0f;
  return l;
}

void Mlp::apply(const float* in, float* out, float* scratch) const {
  fc1.apply(in, scratch);
  for (int i = 0; i < fc1.out_ch; ++i) scratch[i] = softplus(scratch[i]);
  fc2.apply(scratch, out);
}

std::vector<float> Mlp::apply(const std::vector<float>& in) const {
  if (static_cast<int>(in.size()) != fc1.in_ch)
    throw std::invalid_argument("mlp: input width mismatch");
  std::vector<float> scratch(fc1.out_ch), out(fc2.out_ch);
  apply(in.data(), out.data(), scratch.data());
  return out;
}

Mlp make_mlp(int in_ch, int hidden, int out_ch, Rng& rng) {
  return {make_linear(in_ch, hidden, rng), make_linear(hidden, out_ch, rng)};
}

FeatureMap Conv2d::apply(const FeatureMap& in) const {
  if (in.channels != in_ch) throw std::invalid_argument("conv: channel mismatch");
  const int oh = (in.height + stride - 1) / stride;
  const int ow = (in.width + stride - 1) / stride;
  FeatureMap out(oh, ow, out_ch, in.resolution * static_cast<float>(stride));
  for (int r = 0; r < oh; ++r) {
    const int y0 = r * stride - pad;
    for (int c = 0; c < ow; ++c) {
      const int x0 = c * stride - pad;
      float* dst = out.pixel(r, c).data();
      for (int o = 0; o < out_ch; ++o) {
        double acc = bias[o];
        const float* wbase =
            weight.data() + static_cast<std::size_t>(o) * in_ch * ksize * ksize;
        for (int ky = 0; ky < ksize; ++ky) {
          const int y = y0 + ky;
          if (y < 0 || y >= in.height) continue;
          for (int kx = 0; kx < ksize; ++kx) {
            const int x = x0 + kx;
            if (x < 0 || x >= in.width) continue;
            const float* px = in.pixel(y, x).data();
            const float* w = wbase + (static_cast<std::size_t>(ky) * ksize + kx);
            for (int i = 0; i < in_ch; ++i)
              acc += static_cast<double>(w[static_cast<std::size_t>(i) * ksize * ksize]) * px[i];
          }
        }
        dst[o] = static_cast<float>(acc);
      }
    }
  }
  return out;
}

Conv2d make_conv(int in_ch, int out_ch, int ksize, int stride, int pad, Rng& rng) {
  const int fan_in = in_ch * ksize * ksize;
  Conv2d conv{in_ch, out_ch, ksize, stride, pad,
              fan_in_uniform(static_cast<std::size_t>(out_ch) * in_ch * ksize * ksize, fan_in, rng),
              fan_in_uniform(out_ch, fan_in, rng)};
  return conv;
}

Conv2d zero_conv(int in_ch, int out_ch, int ksize, int stride, int pad) {
  return {in_ch, out_ch, ksize, stride, pad,
          std::vector<float>(static_cast<std::size_t>(out_ch) * in_ch * ksize * ksize, 0.0f),
          std::vector<float>(out_ch, 0.0f)};
}

FeatureMap DepthwiseConv2d::apply(const FeatureMap& in) const {
  if (in.channels != channels) throw std::invalid_argument("depthwise conv: channel mismatch");
  FeatureMap out(in.height, in.width, channels, in.resolution);
  for (int r = 0; r < in.height; ++r) {
    for (int c = 0; c < in.width; ++c) {
      float* dst = out.pixel(r, c).data();
      for (int ch = 0; ch < channels; ++ch) {
        double acc = bias[ch];
        const float* w = weight.data() + static_cast<std::size_t>(ch) * 9;
        for (int ky = 0; ky < 3; ++ky) {
          const int y = r + ky - 1;
          if (y < 0 || y >= in.height) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int x = c + kx - 1;
            if (x < 0 || x >= in.width) continue;
            acc += static_cast<double>(w[ky * 3 + kx]) * in.at(y, x, ch);
          }
        }
        dst[ch] = static_cast<float>(acc);
      }
    }
  }
  return out;
}

DepthwiseConv2d make_depthwise(int channels, Rng& rng) {
  return {channels, fan_in_uniform(static_cast<std::size_t>(channels) * 9, 9, rng),
          fan_in_uniform(channels, 9, rng)};
}

void LayerNorm::apply(const float* in, float* out) const {
  double mean = 0.0;
  for (int i = 0; i < channels; ++i) mean += in[i];
  mean /= channels;
  double var = 0.0;
  for (int i = 0; i < channels; ++i) {
    const double d = in[i] - mean;
    var += d * d;
  }
  var /= channels;
  const double inv = 1.0 / std::sqrt(var + 1e-5);
  for (int i = 0; i < channels; ++i)
    out[i] = static_cast<float>((in[i] - mean) * inv * gamma[i] + beta[i]);
}

LayerNorm make_layer_norm(int channels) {
  return {channels, std::vector<float>(channels, 1.0f), std::vector<float>(channels, 0.0f)};
}

FeatureMap apply_pointwise(const FeatureMap& map, const Linear& layer) {
  if (map.channels != layer.in_ch)
    throw std::invalid_argument("pointwise linear: channel mismatch");
  FeatureMap out(map.height, map.width, layer.out_ch, map.resolution);
  for (int r = 0; r < map.height; ++r)
    for (int c = 0; c < map.width; ++c)
      layer.apply(map.pixel(r, c).data(), out.pixel(r, c).data());
  return out;
}

FeatureMap apply_pointwise(const FeatureMap& map, const Mlp& mlp) {
  if (map.channels != mlp.fc1.in_ch) throw std::invalid_argument("pointwise mlp: channel mismatch");
  FeatureMap out(map.height, map.width, mlp.fc2.out_ch, map.resolution);
  std::vector<float> scratch(mlp.fc1.out_ch);
  for (int r = 0; r < map.height; ++r)
    for (int c = 0; c < map.width; ++c)
      mlp.apply(map.pixel(r, c).data(), out.pixel(r, c).data(), scratch.data());
  return out;
}

void blob_put(ParamBlob& blob, const std::string& name, const Linear& l) {
  blob.add(name + ".w",
           {static_cast<std::uint32_t>(l.out_ch), static_cast<std::uint32_t>(l.in_ch)}, l.weight);
  blob.add(name + ".b", {static_cast<std::uint32_t>(l.out_ch)}, l.bias);
}

Linear blob_linear(const ParamBlob& blob, const std::string& name) {
  const auto& w = blob.get(name + ".w");
  const auto& b = blob.get(name + ".b");
  return {static_cast<int>(w.dims[1]), static_cast<int>(w.dims[0]), w.data, b.data};
}

void blob_put(ParamBlob& blob, const std::string& name, const Conv2d& c) {
  blob.add(name + ".w",
           {static_cast<std::uint32_t>(c.out_ch), static_cast<std::uint32_t>(c.in_ch),
            static_cast<std::uint32_t>(c.ksize), static_cast<std::uint32_t>(c.ksize)},
           c.weight);
  blob.add(name + ".b", {static_cast<std::uint32_t>(c.out_ch)}, c.bias);
  blob.add(name + ".meta", {2}, {static_cast<float>(c.stride), static_cast<float>(c.pad)});
}

Conv2d blob_conv(const ParamBlob& blob, const std::string& name) {
  const auto& w = blob.get(name + ".w");
  const auto& b = blob.get(name + ".b");
  const auto& m = blob.get(name + ".meta");
  return {static_cast<int>(w.dims[1]), static_cast<int>(w.dims[0]), static_cast<int>(w.dims[2]),
          static_cast<int>(m.data[0]), static_cast<int>(m.data[1]), w.data, b.data};
}

void blob_put(ParamBlob& blob, const std::string& name, const Mlp& m) {
  blob_put(blob, name + ".fc1", m.fc1);
  blob_put(blob, name + ".fc2", m.fc2);
}

Mlp blob_mlp(const ParamBlob& blob, const std::string& name) {
  return {blob_linear(blob, name + ".fc1"), blob_linear(blob, name + ".fc2")};
}

void blob_put(ParamBlob& blob, const std::string& name, const DepthwiseConv2d& d) {
  blob.add(name + ".w", {static_cast<std::uint32_t>(d.channels), 3, 3}, d.weight);
  blob.add(name + ".b", {static_cast<std::uint32_t>(d.channels)}, d.bias);
}

DepthwiseConv2d blob_depthwise(const ParamBlob& blob, const std::string& name) {
  const auto& w = blob.get(name + ".w");
  const auto& b = blob.get(name + ".b");
  return {static_cast<int>(w.dims[0]), w.data, b.data};
}

void blob_put(ParamBlob& blob, const std::string& name, const LayerNorm& n) {
  blob.add(name + ".g", {static_cast<std::uint32_t>(n.channels)}, n.gamma);
  blob.add(name + ".b", {static_cast<std::uint32_t>(n.channels)}, n.beta);
}

LayerNorm blob_layer_norm(const ParamBlob& blob, const std::string& name) {
  const auto& g = blob.get(name + ".g");
  const auto& b = blob.get(name + ".b");
  return {static_cast<int>(g.dims[0]), g.data, b.data};
}

}  // namespace bevloc
