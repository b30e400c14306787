#pragma once

#include <cstdint>
#include <vector>

#include "bevloc/camera.hpp"
#include "bevloc/feature_map.hpp"
#include "bevloc/io.hpp"
#include "bevloc/nn.hpp"

namespace bevloc {

/// BEV grid construction parameters. Defaults follow the full-scale model
/// configuration; tests and the synthetic pipeline run smaller instances.
struct BevConfig {
  int d_b = 320;        // grid side, pixels
  double q_b = 2.4;     // meters per pixel
  int c_b = 128;        // BEV channels
  int c_v = 128;        // channels of the PV value features
  int n_blocks = 3;     // refinement steps (cross + self attention each)
  int n_heads = 4;
  int z = 16;           // pillar points per cell
  double h_min = -5.0;  // pillar height range, meters
  double h_max = 10.0;
  int s_g = 4;  // stride of the PV feature maps
  int s_r = 4;  // spatial reduction stride of self-attention values

  // Ablation switches.
  bool use_offsets = true;
  bool offset_skip = true;
  bool logit_skip = true;
  bool use_mlps = true;
  bool use_self_attention = true;

  void validate() const;
};

/// Mutable BEV construction state: the grid, its circular validity mask and
/// the accumulators carried across blocks by the offset/logit skip
/// connections. Offsets are per (cell, pillar point), logits per
/// (cell, head, slot) where slot = camera rank * z + pillar index.
struct BevState {
  FeatureMap grid;                  // d_b x d_b x c_b at q_b
  std::vector<std::uint8_t> mask;   // d_b * d_b; 1 inside the inscribed circle
  std::vector<float> offsets;       // d_b*d_b * z * 2, PV pixel units
  std::vector<float> logits;        // d_b*d_b * n_heads * n_slots, sized lazily
  int n_slots = 0;

  int cells() const { return grid.height * grid.width; }
};

/// Gathered value features in list form: one entry per surviving
/// (BEV cell, camera, pillar point) triple, sorted by camera rank, then
/// pillar index, then cell id.
struct ValueList {
  int c_v = 0;
  std::vector<float> features;       // n_v x c_v
  std::vector<std::int32_t> query_index;   // BEV cell id (row * d_b + col)
  std::vector<std::int32_t> pillar_index;  // 0-based j
  std::vector<std::int32_t> camera_index;  // position in rig.cameras
  std::vector<std::int32_t> slot_index;    // camera rank * z + pillar index

  std::size_t size() const { return query_index.size(); }
};

/// Per-block weights.
struct BevBlockParams {
  std::vector<Linear> offset_heads;  // z heads, c_b -> 2, shared across cameras
  Linear logit_head;                 // c_b -> n_heads * n_slots
  Linear cross_out;                  // c_v -> c_b
  LayerNorm cross_mlp_ln;
  Mlp cross_mlp;                     // c_b -> 2 c_b -> c_b
  LayerNorm self_attn_ln;
  Conv2d reduce;                     // c_b -> c_b, kernel = stride = s_r
  Linear q_proj, k_proj, v_proj, self_out;
  LayerNorm self_mlp_ln;
  Linear self_mlp_in;                // c_b -> 2 c_b
  DepthwiseConv2d self_mlp_dw;       // 3x3 depthwise over the hidden map
  Linear self_mlp_out;               // 2 c_b -> c_b
};

struct BevParams {
  std::uint64_t seed = 0;
  int n_cameras = 0;
  std::vector<BevBlockParams> blocks;
};

BevParams make_bev_params(const BevConfig& config, int n_cameras, std::uint64_t seed);
ParamBlob bev_params_to_blob(const BevParams& params, const BevConfig& config);
BevParams bev_params_from_blob(const ParamBlob& blob);

/// Optional probes used by tests; all fields are appended to.
struct AttentionDiagnostics {
  std::vector<double> weight_sums;  // one entry per (query with values, head)
};

/// Seeded initial state: grid values from a deterministic parameter table
/// (masked cells zeroed), circular mask, zeroed accumulators.
BevState init_bev(const BevConfig& config, std::uint64_t seed);

/// Circular validity rule on its own: 1 iff the cell center is closer than
/// (d_b / 2) * q_b meters to the grid center.
std::vector<std::uint8_t> make_bev_mask(int d_b, double q_b);

/// Projects every valid cell's pillar into every camera, applies the
/// accumulated deformable offsets (after adding this block's predictions)
/// and samples the PV feature maps. One pv_map per rig camera, each at
/// stride s_g (std::invalid_argument otherwise).
ValueList gather_values(BevState& state, const CameraRig& rig,
                        const std::vector<FeatureMap>& pv_maps, const BevBlockParams& block,
                        const BevConfig& config);

/// Direct-logit cross-attention plus pointwise MLP, both as pre-normalized
/// residual sub-blocks. Queries that gathered no values pass through
/// unchanged.
void cross_attention_block(BevState& state, const ValueList& values, const BevBlockParams& block,
                           const BevConfig& config, AttentionDiagnostics* diag = nullptr);

/// Spatial-reduction self-attention plus convolutional MLP; invalid cells
/// are zeroed afterwards according to the mask.
void self_attention_block(BevState& state, const BevBlockParams& block, const BevConfig& config);

/// Zeroes grid features on masked-out cells.
void apply_bev_mask(BevState& state);

/// Full iterative construction: init, then n_blocks repetitions of
/// gather / cross-attention / self-attention. Returns the final state.
BevState build_bev_state(const BevConfig& config, const CameraRig& rig,
                         const std::vector<FeatureMap>& pv_maps, const BevParams& params,
                         std::uint64_t seed, AttentionDiagnostics* diag = nullptr);

/// As build_bev_state, returning just the BEV grid.
FeatureMap build_bev(const BevConfig& config, const CameraRig& rig,
                     const std::vector<FeatureMap>& pv_maps, const BevParams& params,
                     std::uint64_t seed);

}  // namespace bevloc
