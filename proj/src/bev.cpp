#include "bevloc/bev.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "bevloc/grid_ops.hpp"
#include "bevloc/rng.hpp"

namespace bevloc {

namespace {

using RowMajorMatrix =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMapMatrix = Eigen::Map<const RowMajorMatrix>;
using MapMatrix = Eigen::Map<RowMajorMatrix>;

int ceil_div(int a, int b) { return (a + b - 1) / b; }

FeatureMap layer_norm_map(const FeatureMap& in, const LayerNorm& ln) {
  FeatureMap out(in.height, in.width, in.channels, in.resolution);
  const std::size_t pixels = static_cast<std::size_t>(in.height) * in.width;
  for (std::size_t p = 0; p < pixels; ++p)
    ln.apply(in.data.data() + p * in.channels, out.data.data() + p * in.channels);
  return out;
}

void add_inplace(FeatureMap& dst, const FeatureMap& src) {
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

}  // namespace

void BevConfig::validate() const {
  if (d_b < 1 || c_b < 1 || c_v < 1 || n_blocks < 0 || n_heads < 1 || z < 1)
    throw std::invalid_argument("bev config: counts must be >= 1");
  if (!(q_b > 0.0)) throw std::invalid_argument("bev config: q_b must be > 0");
  if (c_b % n_heads != 0 || c_v % n_heads != 0)
    throw std::invalid_argument("bev config: c_b and c_v must be divisible by n_heads");
  if (s_g < 1 || s_r < 1) throw std::invalid_argument("bev config: strides must be >= 1");
  if (!(h_max > h_min)) throw std::invalid_argument("bev config: h_max must exceed h_min");
  if (z < 2) throw std::invalid_argument("bev config: z must be >= 2");
}

std::vector<std::uint8_t> make_bev_mask(int d_b, double q_b) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(d_b) * d_b, 0);
  const double center = 0.5 * (d_b - 1);
  const double radius = 0.5 * d_b * q_b;
  for (int r = 0; r < d_b; ++r) {
    const double y = (r - center) * q_b;
    for (int c = 0; c < d_b; ++c) {
      const double x = (c - center) * q_b;
      if (std::hypot(x, y) < radius) mask[static_cast<std::size_t>(r) * d_b + c] = 1;
    }
  }
  return mask;
}

BevState init_bev(const BevConfig& config, std::uint64_t seed) {
  config.validate();
  BevState state;
  state.grid = FeatureMap(config.d_b, config.d_b, config.c_b,
                          static_cast<float>(config.q_b));
  Rng rng = Rng(seed).stream("bev_init");
  for (auto& v : state.grid.data) v = static_cast<float>(rng.uniform(-0.5, 0.5));
  state.mask = make_bev_mask(config.d_b, config.q_b);
  state.offsets.assign(static_cast<std::size_t>(config.d_b) * config.d_b * config.z * 2, 0.0f);
  apply_bev_mask(state);
  return state;
}

void apply_bev_mask(BevState& state) {
  const int c = state.grid.channels;
  for (std::size_t cell = 0; cell < state.mask.size(); ++cell)
    if (!state.mask[cell])
      std::fill_n(state.grid.data.begin() + static_cast<std::ptrdiff_t>(cell * c), c, 0.0f);
}

BevParams make_bev_params(const BevConfig& config, int n_cameras, std::uint64_t seed) {
  config.validate();
  if (n_cameras < 1) throw std::invalid_argument("bev params: need at least one camera");
  BevParams params;
  params.seed = seed;
  params.n_cameras = n_cameras;
  const int n_slots = n_cameras * config.z;
  Rng root(seed);
  for (int b = 0; b < config.n_blocks; ++b) {
    Rng rng = root.stream("block" + std::to_string(b));
    BevBlockParams p;
    p.offset_heads.reserve(config.z);
    for (int j = 0; j < config.z; ++j) p.offset_heads.push_back(make_linear(config.c_b, 2, rng));
    p.logit_head = make_linear(config.c_b, config.n_heads * n_slots, rng);
    p.cross_out = make_linear(config.c_v, config.c_b, rng);
    p.cross_mlp_ln = make_layer_norm(config.c_b);
    p.cross_mlp = make_mlp(config.c_b, 2 * config.c_b, config.c_b, rng);
    p.self_attn_ln = make_layer_norm(config.c_b);
    p.reduce = make_conv(config.c_b, config.c_b, config.s_r, config.s_r, 0, rng);
    p.q_proj = make_linear(config.c_b, config.c_b, rng);
    p.k_proj = make_linear(config.c_b, config.c_b, rng);
    p.v_proj = make_linear(config.c_b, config.c_b, rng);
    p.self_out = make_linear(config.c_b, config.c_b, rng);
    p.self_mlp_ln = make_layer_norm(config.c_b);
    p.self_mlp_in = make_linear(config.c_b, 2 * config.c_b, rng);
    p.self_mlp_dw = make_depthwise(2 * config.c_b, rng);
    p.self_mlp_out = make_linear(2 * config.c_b, config.c_b, rng);
    params.blocks.push_back(std::move(p));
  }
  return params;
}

ParamBlob bev_params_to_blob(const BevParams& params, const BevConfig& config) {
  ParamBlob blob;
  blob.seed = params.seed;
  blob.add("meta", {3},
           {static_cast<float>(params.n_cameras), static_cast<float>(params.blocks.size()),
            static_cast<float>(config.z)});
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    const auto& p = params.blocks[b];
    const std::string pre = "block" + std::to_string(b) + ".";
    for (std::size_t j = 0; j < p.offset_heads.size(); ++j)
      blob_put(blob, pre + "offset" + std::to_string(j), p.offset_heads[j]);
    blob_put(blob, pre + "logit", p.logit_head);
    blob_put(blob, pre + "cross_out", p.cross_out);
    blob_put(blob, pre + "cross_mlp_ln", p.cross_mlp_ln);
    blob_put(blob, pre + "cross_mlp", p.cross_mlp);
    blob_put(blob, pre + "self_attn_ln", p.self_attn_ln);
    blob_put(blob, pre + "reduce", p.reduce);
    blob_put(blob, pre + "q", p.q_proj);
    blob_put(blob, pre + "k", p.k_proj);
    blob_put(blob, pre + "v", p.v_proj);
    blob_put(blob, pre + "self_out", p.self_out);
    blob_put(blob, pre + "self_mlp_ln", p.self_mlp_ln);
    blob_put(blob, pre + "self_mlp_in", p.self_mlp_in);
    blob_put(blob, pre + "self_mlp_dw", p.self_mlp_dw);
    blob_put(blob, pre + "self_mlp_out", p.self_mlp_out);
  }
  return blob;
}

BevParams bev_params_from_blob(const ParamBlob& blob) {
  BevParams params;
  params.seed = blob.seed;
  const auto& meta = blob.get("meta");
  params.n_cameras = static_cast<int>(meta.data[0]);
  const int n_blocks = static_cast<int>(meta.data[1]);
  const int z = static_cast<int>(meta.data[2]);
  for (int b = 0; b < n_blocks; ++b) {
    const std::string pre = "block" + std::to_string(b) + ".";
    BevBlockParams p;
    for (int j = 0; j < z; ++j)
      p.offset_heads.push_back(blob_linear(blob, pre + "offset" + std::to_string(j)));
    p.logit_head = blob_linear(blob, pre + "logit");
    p.cross_out = blob_linear(blob, pre + "cross_out");
    p.cross_mlp_ln = blob_layer_norm(blob, pre + "cross_mlp_ln");
    p.cross_mlp = blob_mlp(blob, pre + "cross_mlp");
    p.self_attn_ln = blob_layer_norm(blob, pre + "self_attn_ln");
    p.reduce = blob_conv(blob, pre + "reduce");
    p.q_proj = blob_linear(blob, pre + "q");
    p.k_proj = blob_linear(blob, pre + "k");
    p.v_proj = blob_linear(blob, pre + "v");
    p.self_out = blob_linear(blob, pre + "self_out");
    p.self_mlp_ln = blob_layer_norm(blob, pre + "self_mlp_ln");
    p.self_mlp_in = blob_linear(blob, pre + "self_mlp_in");
    p.self_mlp_dw = blob_depthwise(blob, pre + "self_mlp_dw");
    p.self_mlp_out = blob_linear(blob, pre + "self_mlp_out");
    params.blocks.push_back(std::move(p));
  }
  return params;
}

ValueList gather_values(BevState& state, const CameraRig& rig,
                        const std::vector<FeatureMap>& pv_maps, const BevBlockParams& block,
                        const BevConfig& config) {
  if (pv_maps.size() != rig.cameras.size())
    throw std::invalid_argument("gather_values: one pv map per rig camera required");
  if (static_cast<int>(block.offset_heads.size()) != config.z)
    throw std::invalid_argument("gather_values: offset head count must equal z");
  for (const auto& m : pv_maps)
    if (m.channels != config.c_v)
      throw std::invalid_argument("gather_values: pv map channels must equal c_v");

  const int d_b = config.d_b;
  const double center = 0.5 * (d_b - 1);

  // This block's offset predictions, folded into the accumulator. With the
  // skip connection disabled the accumulator is replaced instead of refined.
  if (config.use_offsets) {
    float pred[2];
    for (int cell = 0; cell < state.cells(); ++cell) {
      if (!state.mask[cell]) continue;
      const float* feat = state.grid.data.data() + static_cast<std::size_t>(cell) * config.c_b;
      for (int j = 0; j < config.z; ++j) {
        block.offset_heads[j].apply(feat, pred);
        float* acc = state.offsets.data() + (static_cast<std::size_t>(cell) * config.z + j) * 2;
        if (config.offset_skip) {
          acc[0] += pred[0];
          acc[1] += pred[1];
        } else {
          acc[0] = pred[0];
          acc[1] = pred[1];
        }
      }
    }
  } else {
    std::fill(state.offsets.begin(), state.offsets.end(), 0.0f);
  }

  ValueList values;
  values.c_v = config.c_v;
  const std::vector<int> order = rig.id_order();
  std::vector<float> sample(config.c_v);
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const int cam_idx = order[rank];
    const PinholeCamera& cam = rig.cameras[cam_idx];
    const FeatureMap& pv = pv_maps[cam_idx];
    for (int j = 0; j < config.z; ++j) {
      const double h =
          (j == config.z - 1)
              ? config.h_max
              : config.h_min + j * (config.h_max - config.h_min) / (config.z - 1);
      for (int cell = 0; cell < state.cells(); ++cell) {
        if (!state.mask[cell]) continue;
        const double cx = (cell % d_b - center) * config.q_b;
        const double cy = (cell / d_b - center) * config.q_b;
        const auto pixel = cam.project(Eigen::Vector3d(cx, cy, h));
        if (!pixel) continue;
        const float* off =
            state.offsets.data() + (static_cast<std::size_t>(cell) * config.z + j) * 2;
        const double u = (pixel->x() + off[0]) / config.s_g;
        const double v = (pixel->y() + off[1]) / config.s_g;
        bilinear_sample(pv, u, v, sample.data());
        values.features.insert(values.features.end(), sample.begin(), sample.end());
        values.query_index.push_back(cell);
        values.pillar_index.push_back(j);
        values.camera_index.push_back(cam_idx);
        values.slot_index.push_back(static_cast<int>(rank) * config.z + j);
      }
    }
  }
  return values;
}

void cross_attention_block(BevState& state, const ValueList& values, const BevBlockParams& block,
                           const BevConfig& config, AttentionDiagnostics* diag) {
  const int n_slots = block.logit_head.out_ch / config.n_heads;
  if (block.logit_head.out_ch % config.n_heads != 0)
    throw std::invalid_argument("cross_attention: logit head width must split across heads");
  if (state.logits.empty()) {
    state.n_slots = n_slots;
    state.logits.assign(
        static_cast<std::size_t>(state.cells()) * config.n_heads * n_slots, 0.0f);
  } else if (state.n_slots != n_slots) {
    throw std::invalid_argument("cross_attention: slot count changed between blocks");
  }

  // Logit predictions from the current BEV features, refined through the
  // accumulator when the skip connection is on.
  std::vector<float> pred(static_cast<std::size_t>(config.n_heads) * n_slots);
  for (int cell = 0; cell < state.cells(); ++cell) {
    if (!state.mask[cell]) continue;
    const float* feat = state.grid.data.data() + static_cast<std::size_t>(cell) * config.c_b;
    block.logit_head.apply(feat, pred.data());
    float* acc = state.logits.data() +
                 static_cast<std::size_t>(cell) * config.n_heads * n_slots;
    if (config.logit_skip)
      for (std::size_t i = 0; i < pred.size(); ++i) acc[i] += pred[i];
    else
      for (std::size_t i = 0; i < pred.size(); ++i) acc[i] = pred[i];
  }

  // Group value entries by query, preserving (camera rank, pillar) order.
  const std::size_t n_v = values.size();
  std::vector<int> counts(state.cells() + 1, 0);
  for (std::size_t e = 0; e < n_v; ++e) counts[values.query_index[e] + 1]++;
  for (int q = 0; q < state.cells(); ++q) counts[q + 1] += counts[q];
  std::vector<std::int32_t> grouped(n_v);
  {
    std::vector<int> cursor(counts.begin(), counts.end() - 1);
    for (std::size_t e = 0; e < n_v; ++e)
      grouped[cursor[values.query_index[e]]++] = static_cast<std::int32_t>(e);
  }

  const int head_dim = config.c_v / config.n_heads;
  std::vector<double> weights;
  std::vector<float> aggregated(config.c_v);
  std::vector<float> out(config.c_b);
  for (int q = 0; q < state.cells(); ++q) {
    const int begin = counts[q], end = counts[q + 1];
    if (begin == end) continue;  // residual passthrough for empty queries
    std::fill(aggregated.begin(), aggregated.end(), 0.0f);
    const float* logit_base =
        state.logits.data() + static_cast<std::size_t>(q) * config.n_heads * n_slots;
    for (int h = 0; h < config.n_heads; ++h) {
      const float* head_logits = logit_base + static_cast<std::size_t>(h) * n_slots;
      weights.resize(end - begin);
      double max_logit = -std::numeric_limits<double>::infinity();
      for (int k = begin; k < end; ++k)
        max_logit = std::max(max_logit,
                             static_cast<double>(head_logits[values.slot_index[grouped[k]]]));
      double denom = 0.0;
      for (int k = begin; k < end; ++k) {
        const double w =
            std::exp(head_logits[values.slot_index[grouped[k]]] - max_logit);
        weights[k - begin] = w;
        denom += w;
      }
      double wsum = 0.0;
      for (int k = begin; k < end; ++k) {
        const double w = weights[k - begin] / denom;
        wsum += w;
        const float* feat =
            values.features.data() + static_cast<std::size_t>(grouped[k]) * config.c_v +
            static_cast<std::size_t>(h) * head_dim;
        float* dst = aggregated.data() + static_cast<std::size_t>(h) * head_dim;
        for (int i = 0; i < head_dim; ++i) dst[i] += static_cast<float>(w * feat[i]);
      }
      if (diag) diag->weight_sums.push_back(wsum);
    }
    block.cross_out.apply(aggregated.data(), out.data());
    float* feat = state.grid.data.data() + static_cast<std::size_t>(q) * config.c_b;
    for (int i = 0; i < config.c_b; ++i) feat[i] += out[i];
  }

  if (config.use_mlps) {
    FeatureMap normed = layer_norm_map(state.grid, block.cross_mlp_ln);
    FeatureMap update = apply_pointwise(normed, block.cross_mlp);
    add_inplace(state.grid, update);
  }
}

void self_attention_block(BevState& state, const BevBlockParams& block, const BevConfig& config) {
  const int d_b = config.d_b;
  const int n_q = state.cells();
  const int n_r = ceil_div(d_b, config.s_r);
  const int n_v = n_r * n_r;
  const int head_dim = config.c_b / config.n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  FeatureMap normed = layer_norm_map(state.grid, block.self_attn_ln);
  FeatureMap q_map = apply_pointwise(normed, block.q_proj);
  FeatureMap reduced = block.reduce.apply(normed);
  FeatureMap k_map = apply_pointwise(reduced, block.k_proj);
  FeatureMap v_map = apply_pointwise(reduced, block.v_proj);

  ConstMapMatrix q(q_map.data.data(), n_q, config.c_b);
  ConstMapMatrix k(k_map.data.data(), n_v, config.c_b);
  ConstMapMatrix v(v_map.data.data(), n_v, config.c_b);

  FeatureMap attn_out(d_b, d_b, config.c_b, state.grid.resolution);
  MapMatrix out(attn_out.data.data(), n_q, config.c_b);
  RowMajorMatrix logits(n_q, n_v);
  for (int h = 0; h < config.n_heads; ++h) {
    const auto qh = q.middleCols(h * head_dim, head_dim);
    const auto kh = k.middleCols(h * head_dim, head_dim);
    logits.noalias() = qh * kh.transpose();
    for (int i = 0; i < n_q; ++i) {
      double max_logit = -std::numeric_limits<double>::infinity();
      for (int t = 0; t < n_v; ++t)
        max_logit = std::max(max_logit, static_cast<double>(logits(i, t)) * scale);
      double denom = 0.0;
      for (int t = 0; t < n_v; ++t) {
        const double w = std::exp(static_cast<double>(logits(i, t)) * scale - max_logit);
        logits(i, t) = static_cast<float>(w);
        denom += w;
      }
      for (int t = 0; t < n_v; ++t)
        logits(i, t) = static_cast<float>(logits(i, t) / denom);
    }
    out.middleCols(h * head_dim, head_dim).noalias() =
        logits * v.middleCols(h * head_dim, head_dim);
  }

  FeatureMap projected = apply_pointwise(attn_out, block.self_out);
  add_inplace(state.grid, projected);

  if (config.use_mlps) {
    FeatureMap y = layer_norm_map(state.grid, block.self_mlp_ln);
    FeatureMap hidden = apply_pointwise(y, block.self_mlp_in);
    hidden = block.self_mlp_dw.apply(hidden);
    for (auto& val : hidden.data) val = softplus(val);
    FeatureMap update = apply_pointwise(hidden, block.self_mlp_out);
    add_inplace(state.grid, update);
  }

  apply_bev_mask(state);
}

BevState build_bev_state(const BevConfig& config, const CameraRig& rig,
                         const std::vector<FeatureMap>& pv_maps, const BevParams& params,
                         std::uint64_t seed, AttentionDiagnostics* diag) {
  config.validate();
  rig.validate();
  if (static_cast<int>(params.blocks.size()) < config.n_blocks)
    throw std::invalid_argument("build_bev: params hold fewer blocks than n_blocks");
  BevState state = init_bev(config, seed);
  for (int b = 0; b < config.n_blocks; ++b) {
    const ValueList values = gather_values(state, rig, pv_maps, params.blocks[b], config);
    cross_attention_block(state, values, params.blocks[b], config, diag);
    if (config.use_self_attention)
      self_attention_block(state, params.blocks[b], config);
    else
      apply_bev_mask(state);
  }
  return state;
}

FeatureMap build_bev(const BevConfig& config, const CameraRig& rig,
                     const std::vector<FeatureMap>& pv_maps, const BevParams& params,
                     std::uint64_t seed) {
  return build_bev_state(config, rig, pv_maps, params, seed).grid;
}

}  // namespace bevloc
