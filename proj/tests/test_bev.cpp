#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <tuple>

#include "bevloc/bev.hpp"
#include "bevloc/pipeline.hpp"
#include "bevloc/rng.hpp"

using namespace bevloc;

namespace {

BevConfig small_config() {
  BevConfig cfg;
  cfg.d_b = 12;
  cfg.q_b = 1.0;
  cfg.c_b = 8;
  cfg.c_v = 8;
  cfg.n_blocks = 2;
  cfg.n_heads = 2;
  cfg.z = 4;
  cfg.h_min = -1.0;
  cfg.h_max = 2.0;
  cfg.s_g = 2;
  cfg.s_r = 4;
  return cfg;
}

std::vector<FeatureMap> random_pv_maps(const CameraRig& rig, int c_v, int s_g, Rng& rng) {
  std::vector<FeatureMap> maps;
  for (const auto& cam : rig.cameras) {
    FeatureMap m((cam.image_height + s_g - 1) / s_g, (cam.image_width + s_g - 1) / s_g, c_v,
                 static_cast<float>(s_g));
    for (auto& v : m.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    maps.push_back(std::move(m));
  }
  return maps;
}

}  // namespace

TEST_SUITE_BEGIN("bev");

TEST_CASE("init_bev mask follows the circular rule") {
  BevConfig cfg = small_config();
  const BevState state = init_bev(cfg, 1);
  const int center = cfg.d_b / 2;
  CHECK(state.mask[center * cfg.d_b + center] == 1);
  CHECK(state.mask[0] == 0);  // corner distance is (d_b/2) q_b sqrt(2)
  CHECK(state.mask[cfg.d_b - 1] == 0);
  CHECK(state.mask[cfg.d_b * (cfg.d_b - 1)] == 0);

  // valid fraction approaches pi/4 on large grids
  const auto mask = make_bev_mask(128, 0.5);
  double valid = 0;
  for (auto m : mask) valid += m;
  CHECK(std::abs(valid / (128.0 * 128.0) - M_PI / 4) <= 0.02);
}

TEST_CASE("init_bev is seed-deterministic and masked") {
  const BevConfig cfg = small_config();
  const BevState a = init_bev(cfg, 99);
  const BevState b = init_bev(cfg, 99);
  const BevState c = init_bev(cfg, 100);
  CHECK(a.grid.data == b.grid.data);
  CHECK(a.grid.data != c.grid.data);
  for (int cell = 0; cell < a.cells(); ++cell)
    if (!a.mask[cell])
      for (int ch = 0; ch < cfg.c_b; ++ch)
        CHECK(a.grid.at(cell / cfg.d_b, cell % cfg.d_b, ch) == 0.0f);
}

TEST_CASE("gather_values culls by frustum and respects the value budget") {
  BevConfig cfg = small_config();
  const CameraRig rig = make_surround_rig(4);
  Rng rng(50);
  const auto pv = random_pv_maps(rig, cfg.c_v, cfg.s_g, rng);
  const BevParams params = make_bev_params(cfg, 4, 7);
  BevState state = init_bev(cfg, 7);
  const ValueList values = gather_values(state, rig, pv, params.blocks[0], cfg);
  CHECK(values.size() > 0);

  // non-overlapping surround rig: each query gets at most z values
  std::vector<int> per_query(state.cells(), 0);
  for (std::size_t e = 0; e < values.size(); ++e) per_query[values.query_index[e]]++;
  for (int count : per_query) CHECK(count <= cfg.z);

  // ordering contract: camera rank, then pillar index, then cell id
  for (std::size_t e = 1; e < values.size(); ++e) {
    const auto key = [&](std::size_t i) {
      return std::tuple(values.slot_index[i] / cfg.z, values.pillar_index[i],
                        values.query_index[i]);
    };
    CHECK(key(e - 1) < key(e));
  }

  CHECK_THROWS_AS(gather_values(state, rig, {pv[0]}, params.blocks[0], cfg),
                  std::invalid_argument);
}

TEST_CASE("a rig facing away from a cell gathers nothing for it") {
  BevConfig cfg = small_config();
  cfg.d_b = 9;  // odd: center cell sits exactly at the origin
  CameraRig rig = make_surround_rig(1);  // single camera looking along +x
  Rng rng(51);
  const auto pv = random_pv_maps(rig, cfg.c_v, cfg.s_g, rng);
  const BevParams params = make_bev_params(cfg, 1, 3);
  BevState state = init_bev(cfg, 3);
  const ValueList values = gather_values(state, rig, pv, params.blocks[0], cfg);
  // cells well behind the camera (negative x half) must receive no values
  for (std::size_t e = 0; e < values.size(); ++e) {
    const int cx = values.query_index[e] % cfg.d_b;
    CHECK(cx >= cfg.d_b / 2 - 1);
  }
}

TEST_CASE("zero offsets with an integer-pixel projection read the stored feature") {
  BevConfig cfg = small_config();
  cfg.d_b = 5;
  cfg.z = 2;
  cfg.h_min = 1.0;
  cfg.h_max = 2.0;
  cfg.use_offsets = false;

  // Camera looking straight up from the origin: the center cell's pillar
  // points project exactly onto the principal point.
  PinholeCamera cam;
  cam.id = "up";
  cam.fx = 10.0;
  cam.fy = 10.0;
  cam.cx = 8.0;  // = pixel 4 at stride 2
  cam.cy = 6.0;  // = pixel 3 at stride 2
  cam.image_width = 17;
  cam.image_height = 13;
  cam.rotation = Eigen::Quaterniond::Identity();
  cam.translation = Eigen::Vector3d::Zero();
  CameraRig rig;
  rig.cameras.push_back(cam);

  FeatureMap pv(7, 9, cfg.c_v, 2.0f);
  Rng rng(52);
  for (auto& v : pv.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));

  const BevParams params = make_bev_params(cfg, 1, 5);
  BevState state = init_bev(cfg, 5);
  const ValueList values = gather_values(state, rig, {pv}, params.blocks[0], cfg);
  const int center_cell = (cfg.d_b / 2) * cfg.d_b + cfg.d_b / 2;
  bool found = false;
  for (std::size_t e = 0; e < values.size(); ++e) {
    if (values.query_index[e] != center_cell) continue;
    found = true;
    for (int ch = 0; ch < cfg.c_v; ++ch)
      CHECK(values.features[e * cfg.c_v + ch] == pv.at(3, 4, ch));
  }
  CHECK(found);
}

TEST_CASE("disabling offsets makes gathering purely geometric") {
  BevConfig cfg = small_config();
  cfg.use_offsets = false;
  const CameraRig rig = make_surround_rig(2);
  Rng rng(53);
  const auto pv = random_pv_maps(rig, cfg.c_v, cfg.s_g, rng);
  const BevParams params = make_bev_params(cfg, 2, 11);
  BevState s1 = init_bev(cfg, 1);
  BevState s2 = init_bev(cfg, 2);  // different BEV content
  const ValueList v1 = gather_values(s1, rig, pv, params.blocks[0], cfg);
  const ValueList v2 = gather_values(s2, rig, pv, params.blocks[1], cfg);
  CHECK(v1.features == v2.features);
  CHECK(v1.query_index == v2.query_index);
}

TEST_CASE("cross-attention weights are a softmax per query and head") {
  BevConfig cfg = small_config();
  const CameraRig rig = make_surround_rig(4);
  Rng rng(54);
  const auto pv = random_pv_maps(rig, cfg.c_v, cfg.s_g, rng);
  const BevParams params = make_bev_params(cfg, 4, 13);
  BevState state = init_bev(cfg, 13);
  const ValueList values = gather_values(state, rig, pv, params.blocks[0], cfg);
  AttentionDiagnostics diag;
  cross_attention_block(state, values, params.blocks[0], cfg, &diag);
  CHECK(!diag.weight_sums.empty());
  for (double s : diag.weight_sums) CHECK(std::abs(s - 1.0) <= 1e-6);
  for (float v : state.grid.data) CHECK(std::isfinite(v));
}

TEST_CASE("a query with exactly one value receives weight 1 on it") {
  BevConfig cfg = small_config();
  cfg.n_heads = 1;
  cfg.use_mlps = false;
  const BevParams params = make_bev_params(cfg, 1, 17);
  BevState state = init_bev(cfg, 17);

  ValueList values;
  values.c_v = cfg.c_v;
  const int query = (cfg.d_b / 2) * cfg.d_b + cfg.d_b / 2;
  values.query_index = {query};
  values.pillar_index = {0};
  values.camera_index = {0};
  values.slot_index = {0};
  Rng rng(55);
  for (int ch = 0; ch < cfg.c_v; ++ch)
    values.features.push_back(static_cast<float>(rng.uniform(-1.0, 1.0)));

  const std::vector<float> before(state.grid.pixel(cfg.d_b / 2, cfg.d_b / 2).begin(),
                                  state.grid.pixel(cfg.d_b / 2, cfg.d_b / 2).end());
  AttentionDiagnostics diag;
  cross_attention_block(state, values, params.blocks[0], cfg, &diag);
  REQUIRE(diag.weight_sums.size() == 1);
  CHECK(diag.weight_sums[0] == doctest::Approx(1.0));

  // output = residual + W_o(value) with attention weight exactly 1
  std::vector<float> expected(cfg.c_b);
  params.blocks[0].cross_out.apply(values.features.data(), expected.data());
  for (int ch = 0; ch < cfg.c_b; ++ch)
    CHECK(state.grid.at(cfg.d_b / 2, cfg.d_b / 2, ch) ==
          doctest::Approx(before[ch] + expected[ch]).epsilon(1e-6));
}

TEST_CASE("zeroed output projection keeps the attention sub-block inert") {
  BevConfig cfg = small_config();
  cfg.use_mlps = false;
  const CameraRig rig = make_surround_rig(4);
  Rng rng(56);
  const auto pv = random_pv_maps(rig, cfg.c_v, cfg.s_g, rng);
  BevParams params = make_bev_params(cfg, 4, 19);
  params.blocks[0].cross_out.weight.assign(params.blocks[0].cross_out.weight.size(), 0.0f);
  params.blocks[0].cross_out.bias.assign(params.blocks[0].cross_out.bias.size(), 0.0f);
  BevState state = init_bev(cfg, 19);
  const FeatureMap before = state.grid;
  const ValueList values = gather_values(state, rig, pv, params.blocks[0], cfg);
  cross_attention_block(state, values, params.blocks[0], cfg);
  CHECK(state.grid.data == before.data);
}

TEST_CASE("self-attention zeroes masked cells and reduces tokens as declared") {
  BevConfig cfg = small_config();
  const BevParams params = make_bev_params(cfg, 1, 23);
  BevState state = init_bev(cfg, 23);
  // make every cell nonzero first to see the masking happen
  for (auto& v : state.grid.data) v += 1.0f;
  self_attention_block(state, params.blocks[0], cfg);
  for (int cell = 0; cell < state.cells(); ++cell)
    if (!state.mask[cell]) {
      double sum = 0.0;
      for (int ch = 0; ch < cfg.c_b; ++ch)
        sum += std::abs(state.grid.at(cell / cfg.d_b, cell % cfg.d_b, ch));
      CHECK(sum == 0.0);
    }

  // value token count = ceil(d_b / s_r)^2
  const FeatureMap reduced = params.blocks[0].reduce.apply(state.grid);
  CHECK(reduced.height == (cfg.d_b + cfg.s_r - 1) / cfg.s_r);
  CHECK(reduced.width == (cfg.d_b + cfg.s_r - 1) / cfg.s_r);
}

TEST_CASE("s_r equal to d_b collapses to a single value token") {
  BevConfig cfg = small_config();
  cfg.s_r = cfg.d_b;
  cfg.use_mlps = false;
  const BevParams params = make_bev_params(cfg, 1, 29);
  BevState state = init_bev(cfg, 29);
  const FeatureMap before = state.grid;
  self_attention_block(state, params.blocks[0], cfg);

  // single value token: every query receives the same attention output
  std::vector<float> delta0;
  bool first = true;
  for (int cell = 0; cell < state.cells(); ++cell) {
    if (!state.mask[cell]) continue;
    std::vector<float> delta(cfg.c_b);
    for (int ch = 0; ch < cfg.c_b; ++ch)
      delta[ch] = state.grid.at(cell / cfg.d_b, cell % cfg.d_b, ch) -
                  before.at(cell / cfg.d_b, cell % cfg.d_b, ch);
    if (first) {
      delta0 = delta;
      first = false;
    } else {
      for (int ch = 0; ch < cfg.c_b; ++ch)
        CHECK(delta[ch] == doctest::Approx(delta0[ch]).epsilon(1e-5));
    }
  }
}

TEST_CASE("build_bev with zero blocks returns the masked seeded grid") {
  BevConfig cfg = small_config();
  cfg.n_blocks = 0;
  const CameraRig rig = make_surround_rig(2);
  Rng rng(57);
  const auto pv = random_pv_maps(rig, cfg.c_v, cfg.s_g, rng);
  const BevParams params = make_bev_params(cfg, 2, 31);
  const FeatureMap out = build_bev(cfg, rig, pv, params, 31);
  const BevState expected = init_bev(cfg, 31);
  CHECK(out.data == expected.grid.data);
}

TEST_CASE("build_bev is deterministic and finite") {
  const BevConfig cfg = small_config();
  const CameraRig rig = make_surround_rig(4);
  Rng rng(58);
  const auto pv = random_pv_maps(rig, cfg.c_v, cfg.s_g, rng);
  const BevParams params = make_bev_params(cfg, 4, 37);
  const FeatureMap a = build_bev(cfg, rig, pv, params, 37);
  const FeatureMap b = build_bev(cfg, rig, pv, params, 37);
  CHECK(a.data == b.data);
  for (float v : a.data) CHECK(std::isfinite(v));
}

TEST_CASE("offset and logit accumulators carry the sum of per-block predictions") {
  BevConfig cfg = small_config();
  const CameraRig rig = make_surround_rig(2);
  Rng rng(59);
  const auto pv = random_pv_maps(rig, cfg.c_v, cfg.s_g, rng);
  const BevParams params = make_bev_params(cfg, 2, 41);

  BevState state = init_bev(cfg, 41);
  ValueList values = gather_values(state, rig, pv, params.blocks[0], cfg);
  const std::vector<float> offsets_after_1 = state.offsets;
  cross_attention_block(state, values, params.blocks[0], cfg);
  const std::vector<float> logits_after_1 = state.logits;
  self_attention_block(state, params.blocks[0], cfg);

  // predictions of block 2 from the current grid, computed independently
  const FeatureMap snapshot = state.grid;
  values = gather_values(state, rig, pv, params.blocks[1], cfg);
  for (int cell = 0; cell < state.cells(); ++cell) {
    if (!state.mask[cell]) continue;
    float pred[2];
    for (int j = 0; j < cfg.z; ++j) {
      params.blocks[1].offset_heads[j].apply(
          snapshot.data.data() + static_cast<std::size_t>(cell) * cfg.c_b, pred);
      const std::size_t base = (static_cast<std::size_t>(cell) * cfg.z + j) * 2;
      CHECK(state.offsets[base] ==
            doctest::Approx(offsets_after_1[base] + pred[0]).epsilon(1e-6));
      CHECK(state.offsets[base + 1] ==
            doctest::Approx(offsets_after_1[base + 1] + pred[1]).epsilon(1e-6));
    }
  }
  cross_attention_block(state, values, params.blocks[1], cfg);
  std::vector<float> pred_logits(static_cast<std::size_t>(cfg.n_heads) * state.n_slots);
  for (int cell = 0; cell < state.cells(); ++cell) {
    if (!state.mask[cell]) continue;
    params.blocks[1].logit_head.apply(
        snapshot.data.data() + static_cast<std::size_t>(cell) * cfg.c_b, pred_logits.data());
    const std::size_t base = static_cast<std::size_t>(cell) * cfg.n_heads * state.n_slots;
    for (std::size_t i = 0; i < pred_logits.size(); ++i)
      CHECK(state.logits[base + i] ==
            doctest::Approx(logits_after_1[base + i] + pred_logits[i]).epsilon(1e-5));
  }
}

TEST_CASE("camera order does not change the built BEV") {
  const BevConfig cfg = small_config();
  CameraRig rig = make_surround_rig(3);
  Rng rng(60);
  auto pv = random_pv_maps(rig, cfg.c_v, cfg.s_g, rng);
  const BevParams params = make_bev_params(cfg, 3, 43);
  const FeatureMap base = build_bev(cfg, rig, pv, params, 43);

  CameraRig permuted;
  permuted.cameras = {rig.cameras[2], rig.cameras[0], rig.cameras[1]};
  const std::vector<FeatureMap> pv_permuted = {pv[2], pv[0], pv[1]};
  const FeatureMap swapped = build_bev(cfg, permuted, pv_permuted, params, 43);
  for (std::size_t i = 0; i < base.data.size(); ++i)
    CHECK(std::abs(base.data[i] - swapped.data[i]) <= 1e-6);
}

TEST_CASE("every ablation switch changes the output while keeping invariants") {
  const BevConfig base_cfg = small_config();
  const CameraRig rig = make_surround_rig(4);
  Rng rng(61);
  const auto pv = random_pv_maps(rig, base_cfg.c_v, base_cfg.s_g, rng);
  const BevParams params = make_bev_params(base_cfg, 4, 47);
  const FeatureMap base = build_bev(base_cfg, rig, pv, params, 47);

  const auto run_variant = [&](auto mutate) {
    BevConfig cfg = small_config();
    mutate(cfg);
    AttentionDiagnostics diag;
    const BevState state = build_bev_state(cfg, rig, pv, params, 47, &diag);
    for (double s : diag.weight_sums) CHECK(std::abs(s - 1.0) <= 1e-6);
    for (int cell = 0; cell < state.cells(); ++cell)
      if (!state.mask[cell])
        for (int ch = 0; ch < cfg.c_b; ++ch)
          CHECK(state.grid.at(cell / cfg.d_b, cell % cfg.d_b, ch) == 0.0f);
    for (float v : state.grid.data) CHECK(std::isfinite(v));
    return state.grid;
  };

  CHECK(run_variant([](BevConfig& c) { c.use_offsets = false; }).data != base.data);
  CHECK(run_variant([](BevConfig& c) { c.offset_skip = false; }).data != base.data);
  CHECK(run_variant([](BevConfig& c) { c.logit_skip = false; }).data != base.data);
  CHECK(run_variant([](BevConfig& c) { c.use_mlps = false; }).data != base.data);
  CHECK(run_variant([](BevConfig& c) { c.use_self_attention = false; }).data != base.data);
  CHECK(run_variant([](BevConfig& c) { c.n_heads = 1; }).data != base.data);
  CHECK(run_variant([](BevConfig& c) { c.n_blocks = 1; }).data != base.data);
}

TEST_CASE("bev params survive the blob round trip") {
  const BevConfig cfg = small_config();
  const CameraRig rig = make_surround_rig(2);
  Rng rng(62);
  const auto pv = random_pv_maps(rig, cfg.c_v, cfg.s_g, rng);
  const BevParams params = make_bev_params(cfg, 2, 53);
  const auto bytes = encode_params(bev_params_to_blob(params, cfg));
  const BevParams back = bev_params_from_blob(decode_params(bytes.data(), bytes.size()));
  CHECK(build_bev(cfg, rig, pv, back, 53).data == build_bev(cfg, rig, pv, params, 53).data);
}

TEST_SUITE_END();
