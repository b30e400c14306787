#include "bevloc/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "bevloc/grid_ops.hpp"
#include "bevloc/io.hpp"

namespace fs = std::filesystem;

namespace bevloc {

namespace {

std::string frame_stem(std::int64_t id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06lld", static_cast<long long>(id));
  return buf;
}

void require_file(const std::string& path) {
  if (!fs::exists(path)) throw std::runtime_error("missing file: " + path);
}

double map_std(const FeatureMap& m) {
  double mean = 0.0;
  for (float v : m.data) mean += v;
  mean /= static_cast<double>(m.data.size());
  double var = 0.0;
  for (float v : m.data) var += (v - mean) * (v - mean);
  return std::sqrt(var / static_cast<double>(m.data.size()));
}

// Repeated 3x3 box blur, per channel, edge-clamped.
void box_blur(FeatureMap& m, int passes) {
  FeatureMap tmp = m;
  for (int pass = 0; pass < passes; ++pass) {
    for (int r = 0; r < m.height; ++r) {
      for (int c = 0; c < m.width; ++c) {
        float* dst = tmp.pixel(r, c).data();
        for (int ch = 0; ch < m.channels; ++ch) {
          double acc = 0.0;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const int y = std::clamp(r + dy, 0, m.height - 1);
              const int x = std::clamp(c + dx, 0, m.width - 1);
              acc += m.at(y, x, ch);
            }
          dst[ch] = static_cast<float>(acc / 9.0);
        }
      }
    }
    std::swap(m.data, tmp.data);
  }
}

}  // namespace

void ScenarioConfig::validate() const {
  if (!(map_size > 0.0) || channels < 1 || n_frames < 1 || bev_size_px < 2)
    throw std::invalid_argument("scenario config: sizes must be positive");
  if (!(q_a > 0.0) || !(search_radius > 0.0))
    throw std::invalid_argument("scenario config: q_a and search_radius must be > 0");
  if (noise_sigma < 0.0 || structure_density < 0.0 || odom_sigma_xy < 0.0 ||
      odom_sigma_yaw < 0.0 || rot_noise_bound < 0.0)
    throw std::invalid_argument("scenario config: noise levels must be >= 0");
  if (!(speed > 0.0) || !(frame_dt > 0.0))
    throw std::invalid_argument("scenario config: speed and frame_dt must be > 0");
}

FeatureMap crop_patch(const FeatureMap& map, double cx, double cy, int size_px, double q) {
  return rigid_warp(map, se2(-cx, -cy, 0.0), size_px, size_px, static_cast<float>(q));
}

FeatureMap take_channels(const FeatureMap& map, int n) {
  if (n < 1 || n > map.channels) throw std::invalid_argument("take_channels: bad channel count");
  FeatureMap out(map.height, map.width, n, map.resolution);
  for (int r = 0; r < map.height; ++r)
    for (int c = 0; c < map.width; ++c) {
      const float* src = map.pixel(r, c).data();
      std::copy(src, src + n, out.pixel(r, c).data());
    }
  return out;
}

CameraRig make_surround_rig(int n_cameras, int image_width, int image_height) {
  if (n_cameras < 1) throw std::invalid_argument("surround rig: need at least one camera");
  CameraRig rig;
  const double pitch_down = 0.30;  // radians below the horizon
  const double fov_scale = 0.5 * image_width;  // 90 degree horizontal FOV
  for (int i = 0; i < n_cameras; ++i) {
    const double yaw = 2.0 * M_PI * i / n_cameras;
    const Eigen::Vector3d forward(std::cos(yaw) * std::cos(pitch_down),
                                  std::sin(yaw) * std::cos(pitch_down), -std::sin(pitch_down));
    const Eigen::Vector3d up(0.0, 0.0, 1.0);
    const Eigen::Vector3d right = forward.cross(up).normalized();
    const Eigen::Vector3d down = forward.cross(right);

    Eigen::Matrix3d r;  // rows: camera axes in vehicle coordinates
    r.row(0) = right;
    r.row(1) = down;
    r.row(2) = forward;

    PinholeCamera cam;
    cam.id = "cam" + std::to_string(i);
    cam.fx = fov_scale;
    cam.fy = fov_scale;
    cam.cx = 0.5 * (image_width - 1);
    cam.cy = 0.5 * (image_height - 1);
    cam.image_width = image_width;
    cam.image_height = image_height;
    cam.rotation = Eigen::Quaterniond(r);
    const Eigen::Vector3d position(0.8 * std::cos(yaw), 0.8 * std::sin(yaw), 1.6);
    cam.translation = -(r * position);
    rig.cameras.push_back(cam);
  }
  rig.validate();
  return rig;
}

FeatureMap render_ground_view(const FeatureMap& aerial, const SE2Pose& pose,
                              const PinholeCamera& cam, double max_range) {
  const FeatureMap rgb = aerial.channels == 3 ? aerial : take_channels(aerial, 3);
  FeatureMap image(cam.image_height, cam.image_width, 3, 1.0f);
  const Eigen::Matrix3d r = cam.rotation.toRotationMatrix();
  const Eigen::Matrix3d r_t = r.transpose();
  const Eigen::Vector3d origin = -(r_t * cam.translation);  // camera center, vehicle frame
  const double inv_q = 1.0 / rgb.resolution;
  for (int v = 0; v < cam.image_height; ++v) {
    for (int u = 0; u < cam.image_width; ++u) {
      const Eigen::Vector3d dir_cam((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
      const Eigen::Vector3d dir = r_t * dir_cam;
      if (dir.z() >= -1e-9) continue;  // above the horizon
      const double s = -origin.z() / dir.z();
      const Eigen::Vector3d ground = origin + s * dir;
      if (ground.head<2>().norm() > max_range) continue;
      double wx, wy;
      se2_apply(pose, ground.x(), ground.y(), wx, wy);
      bilinear_sample(rgb, wx * inv_q + rgb.center_col(), wy * inv_q + rgb.center_row(),
                      image.pixel(v, u).data());
    }
  }
  return image;
}

Scenario simulate(const ScenarioConfig& config, bool render_pv) {
  config.validate();
  Scenario scenario;
  scenario.config = config;
  const Rng root(config.seed);

  // Aerial map: smoothed noise plus sparse salient blobs, normalized to
  // roughly unit standard deviation.
  const int size_px = std::max(8, static_cast<int>(std::lround(config.map_size / config.q_a)));
  scenario.aerial =
      FeatureMap(size_px, size_px, config.channels, static_cast<float>(config.q_a));
  {
    Rng terrain = root.stream("terrain");
    for (auto& v : scenario.aerial.data) v = static_cast<float>(terrain.normal());
    box_blur(scenario.aerial, 3);
    const double std0 = map_std(scenario.aerial);
    for (auto& v : scenario.aerial.data) v = static_cast<float>(v / std0);

    Rng blobs = root.stream("blobs");
    const int n_blobs = static_cast<int>(
        std::lround(config.structure_density * config.map_size * config.map_size));
    const double half = 0.5 * config.map_size;
    for (int b = 0; b < n_blobs; ++b) {
      const double bx = blobs.uniform(-half, half);
      const double by = blobs.uniform(-half, half);
      const double radius = blobs.uniform(0.6, 2.0);
      std::vector<double> amp(config.channels);
      for (auto& a : amp) a = 3.0 * blobs.normal();
      const double cx = bx / config.q_a + scenario.aerial.center_col();
      const double cy = by / config.q_a + scenario.aerial.center_row();
      const double rad_px = radius / config.q_a;
      const int x0 = std::max(0, static_cast<int>(cx - 3 * rad_px));
      const int x1 = std::min(size_px - 1, static_cast<int>(cx + 3 * rad_px) + 1);
      const int y0 = std::max(0, static_cast<int>(cy - 3 * rad_px));
      const int y1 = std::min(size_px - 1, static_cast<int>(cy + 3 * rad_px) + 1);
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
          const double w = std::exp(-d2 / (2.0 * rad_px * rad_px));
          for (int ch = 0; ch < config.channels; ++ch)
            scenario.aerial.at(y, x, ch) += static_cast<float>(w * amp[ch]);
        }
    }
    const double std1 = map_std(scenario.aerial);
    for (auto& v : scenario.aerial.data) v = static_cast<float>(v / std1);
  }

  scenario.rig = make_surround_rig();

  // Smooth trajectory, steered back toward the center when it drifts out.
  {
    Rng traj = root.stream("trajectory");
    const double half = 0.5 * config.map_size;
    double x = traj.uniform(-0.3, 0.3) * config.map_size;
    double y = traj.uniform(-0.3, 0.3) * config.map_size;
    double yaw = traj.uniform(-M_PI, M_PI);
    double turn = 0.0;
    for (int i = 0; i < config.n_frames; ++i) {
      FrameRecord frame;
      frame.frame_id = i;
      frame.timestamp = i * config.frame_dt;
      frame.gt = se2(x, y, yaw);
      scenario.frames.push_back(frame);

      turn = 0.8 * turn + 0.05 * traj.normal();
      turn = std::clamp(turn, -0.12, 0.12);
      double steer = turn;
      if (std::hypot(x, y) > 0.35 * config.map_size) {
        const double bearing = std::atan2(-y, -x);
        steer += 0.15 * wrap_angle(bearing - yaw);
      }
      yaw = wrap_angle(yaw + steer);
      x += config.speed * config.frame_dt * std::cos(yaw);
      y += config.speed * config.frame_dt * std::sin(yaw);
      x = std::clamp(x, -half, half);
      y = std::clamp(y, -half, half);
    }
  }

  // Priors uniform in a disc of 0.95 * search_radius, yaw within the bound.
  {
    Rng prior = root.stream("prior");
    for (auto& frame : scenario.frames) {
      const double theta = prior.uniform(0.0, 2.0 * M_PI);
      const double rho = 0.95 * config.search_radius * std::sqrt(prior.uniform());
      const double dyaw = 0.95 * config.rot_noise_bound * prior.uniform(-1.0, 1.0);
      frame.prior = se2(frame.gt.x + rho * std::cos(theta), frame.gt.y + rho * std::sin(theta),
                        frame.gt.yaw + dyaw);
    }
  }

  // Odometry between consecutive frames with additive noise in the vehicle
  // frame of the earlier pose.
  {
    Rng odo = root.stream("odometry");
    for (std::size_t i = 0; i + 1 < scenario.frames.size(); ++i) {
      const SE2Pose rel =
          se2_compose(se2_invert(scenario.frames[i].gt), scenario.frames[i + 1].gt);
      OdometryStep step;
      step.relative = se2(rel.x + config.odom_sigma_xy * odo.normal(),
                          rel.y + config.odom_sigma_xy * odo.normal(),
                          rel.yaw + config.odom_sigma_yaw * odo.normal());
      step.noise = Eigen::Vector3d(config.odom_sigma_xy * config.odom_sigma_xy,
                                   config.odom_sigma_xy * config.odom_sigma_xy,
                                   config.odom_sigma_yaw * config.odom_sigma_yaw)
                       .asDiagonal();
      scenario.odometry.push_back(step);
    }
  }

  // BEV observations: rigid crops at the ground-truth pose plus noise,
  // masked to the valid circle.
  {
    Rng obs_rng = root.stream("observations");
    const double feat_std = map_std(scenario.aerial);
    const std::vector<std::uint8_t> mask = make_bev_mask(config.bev_size_px, config.q_a);
    for (const auto& frame : scenario.frames) {
      FeatureMap obs = rigid_warp(scenario.aerial, se2_invert(frame.gt), config.bev_size_px,
                                  config.bev_size_px, static_cast<float>(config.q_a));
      if (config.noise_sigma > 0.0)
        for (auto& v : obs.data)
          v += static_cast<float>(config.noise_sigma * feat_std * obs_rng.normal());
      for (std::size_t cell = 0; cell < mask.size(); ++cell)
        if (!mask[cell])
          std::fill_n(obs.data.begin() + static_cast<std::ptrdiff_t>(cell * obs.channels),
                      obs.channels, 0.0f);
      scenario.observations.push_back(std::move(obs));
    }
  }

  if (render_pv) {
    for (const auto& frame : scenario.frames) {
      std::vector<FeatureMap> views;
      for (const auto& cam : scenario.rig.cameras)
        views.push_back(render_ground_view(scenario.aerial, frame.gt, cam));
      scenario.pv_images.push_back(std::move(views));
    }
  }
  return scenario;
}

void write_scenario(const Scenario& scenario, const std::string& out_dir) {
  fs::create_directories(out_dir);
  const fs::path root(out_dir);

  save_fmap(scenario.aerial, (root / "aerial.fmap").string());
  save_rig(scenario.rig, (root / "rig.txt").string());

  std::ostringstream odo;
  odo.precision(17);
  for (std::size_t i = 0; i < scenario.odometry.size(); ++i) {
    const auto& step = scenario.odometry[i];
    const auto& n = step.noise;
    odo << "step " << i << ' ' << step.relative.x << ' ' << step.relative.y << ' '
        << step.relative.yaw << ' ' << n(0, 0) << ' ' << n(0, 1) << ' ' << n(0, 2) << ' '
        << n(1, 1) << ' ' << n(1, 2) << ' ' << n(2, 2) << '\n';
  }
  atomic_write((root / "odometry.txt").string(), odo.str());

  std::vector<TrajectoryPoint> gt;
  for (const auto& f : scenario.frames) gt.push_back({f.frame_id, f.timestamp, f.gt});
  save_trajectory(gt, (root / "gt.txt").string());

  std::ostringstream manifest;
  manifest.precision(17);
  manifest << "rig rig.txt\n";
  manifest << "aerial aerial.fmap\n";
  manifest << "odometry odometry.txt\n";
  manifest << "radius " << scenario.config.search_radius << '\n';
  manifest << "rot_bound " << scenario.config.rot_noise_bound << '\n';
  for (std::size_t i = 0; i < scenario.frames.size(); ++i) {
    const auto& f = scenario.frames[i];
    const std::string bev_name = "bev_" + frame_stem(f.frame_id) + ".fmap";
    save_fmap(scenario.observations[i], (root / bev_name).string());
    manifest << "frame " << f.frame_id << ' ' << f.timestamp << ' ' << f.gt.x << ' ' << f.gt.y
             << ' ' << f.gt.yaw << ' ' << f.prior.x << ' ' << f.prior.y << ' ' << f.prior.yaw
             << ' ' << bev_name;
    if (!scenario.pv_images.empty()) {
      for (std::size_t c = 0; c < scenario.pv_images[i].size(); ++c) {
        char cam_suffix[16];
        std::snprintf(cam_suffix, sizeof(cam_suffix), "_%02zu.fmap", c);
        const std::string pv_name = "pv_" + frame_stem(f.frame_id) + cam_suffix;
        save_fmap(scenario.pv_images[i][c], (root / pv_name).string());
        manifest << ' ' << pv_name;
      }
    }
    manifest << '\n';
  }
  atomic_write((root / "frames.txt").string(), manifest.str());
}

Dataset load_dataset(const std::string& manifest_path) {
  require_file(manifest_path);
  const fs::path root = fs::path(manifest_path).parent_path();
  Dataset data;
  data.root = root.string();

  std::string rig_path, aerial_path, odometry_path;
  std::istringstream in(read_text_file(manifest_path));
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "rig") {
      ls >> rig_path;
    } else if (tag == "aerial") {
      ls >> aerial_path;
    } else if (tag == "odometry") {
      ls >> odometry_path;
    } else if (tag == "radius") {
      ls >> data.search_radius;
    } else if (tag == "rot_bound") {
      ls >> data.rot_noise_bound;
    } else if (tag == "frame") {
      FrameRecord f;
      double gx, gy, gyaw, px, py, pyaw;
      std::string bev_name;
      ls >> f.frame_id >> f.timestamp >> gx >> gy >> gyaw >> px >> py >> pyaw >> bev_name;
      if (!ls)
        throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                 ": malformed frame entry");
      f.gt = se2(gx, gy, gyaw);
      f.prior = se2(px, py, pyaw);
      f.bev_path = (root / bev_name).string();
      require_file(f.bev_path);
      std::string pv_name;
      while (ls >> pv_name) {
        f.pv_paths.push_back((root / pv_name).string());
        require_file(f.pv_paths.back());
      }
      data.frames.push_back(std::move(f));
    } else {
      throw std::runtime_error("manifest line " + std::to_string(line_no) + ": unknown tag '" +
                               tag + "'");
    }
  }
  if (rig_path.empty() || aerial_path.empty())
    throw std::runtime_error("manifest: rig and aerial entries are required");
  data.rig = load_rig((root / rig_path).string());
  data.aerial = load_fmap((root / aerial_path).string());

  if (!odometry_path.empty()) {
    const std::string full = (root / odometry_path).string();
    require_file(full);
    std::istringstream oin(read_text_file(full));
    while (std::getline(oin, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ls(line);
      std::string tag;
      std::size_t idx;
      double dx, dy, dyaw, n11, n12, n13, n22, n23, n33;
      ls >> tag >> idx >> dx >> dy >> dyaw >> n11 >> n12 >> n13 >> n22 >> n23 >> n33;
      if (!ls || tag != "step") throw std::runtime_error("odometry file: malformed line");
      OdometryStep step;
      step.relative = se2(dx, dy, dyaw);
      step.noise << n11, n12, n13, n12, n22, n23, n13, n23, n33;
      data.odometry.push_back(step);
    }
  }
  return data;
}

namespace {

FrameMatchResult finish_match(const FrameRecord& frame, PoseDistribution dist) {
  FrameMatchResult result;
  result.anchor = frame.prior;
  const SE2Pose mode = distribution_mode(dist);
  result.mode_world = se2(frame.prior.x + mode.x, frame.prior.y + mode.y, mode.yaw);
  result.generalized_variance = moments(dist).generalized_variance;
  result.dist = std::move(dist);
  return result;
}

}  // namespace

FrameMatchResult match_frame_crop(const Dataset& data, const FrameRecord& frame,
                                  const FeatureMap& observation, double rot_step) {
  const double q = observation.resolution;
  const HypothesisGrid grid = make_hypothesis_grid(
      data.search_radius, q,
      make_rotation_set(frame.prior.yaw, data.rot_noise_bound, rot_step));
  const int patch_px = observation.width + 2 * grid.half_cells;
  const FeatureMap patch = crop_patch(data.aerial, frame.prior.x, frame.prior.y, patch_px, q);
  const std::vector<std::uint8_t> mask = make_bev_mask(observation.width, q);
  const LogitVolume logits = score_hypotheses(patch, observation, mask, grid);
  return finish_match(frame, to_distribution(logits));
}

TransformerModel make_transformer_model(const BevConfig& config, int c_a, int n_cameras,
                                        std::uint64_t seed) {
  config.validate();
  TransformerModel model;
  model.bev_config = config;
  model.seed = seed;
  const Rng root(seed);

  EncoderConfig ground_cfg;
  ground_cfg.fusion_channels = config.c_v;
  ground_cfg.out_channels = config.c_v;
  model.ground_encoder =
      make_encoder_params(ground_cfg, root.stream("ground_encoder").next_u64());

  EncoderConfig aerial_cfg;
  aerial_cfg.fusion_channels = config.c_v;
  aerial_cfg.out_channels = c_a;
  aerial_cfg.use_stem_bypass = true;
  model.aerial_encoder =
      make_encoder_params(aerial_cfg, root.stream("aerial_encoder").next_u64());

  model.bev_params = make_bev_params(config, n_cameras, root.stream("bev").next_u64());
  model.match_params = make_match_params(config.c_b, c_a, root.stream("match").next_u64());
  return model;
}

FrameMatchResult match_frame_transformer(const Dataset& data, const FrameRecord& frame,
                                         const std::vector<FeatureMap>& pv_images,
                                         const TransformerModel& model, double rot_step) {
  if (pv_images.size() != data.rig.cameras.size())
    throw std::invalid_argument("match: one PV image per rig camera required");

  std::vector<FeatureMap> pv_features;
  pv_features.reserve(pv_images.size());
  for (const auto& image : pv_images)
    pv_features.push_back(encode_ground(image, model.ground_encoder));

  const BevState state = build_bev_state(model.bev_config, data.rig, pv_features,
                                         model.bev_params, model.seed);
  const double q_a = data.aerial.resolution;
  const PreparedBev prepared = prepare_bev(state.grid, state.mask, model.match_params, q_a);

  const HypothesisGrid grid = make_hypothesis_grid(
      data.search_radius, q_a,
      make_rotation_set(frame.prior.yaw, data.rot_noise_bound, rot_step));
  const int patch_px = prepared.features.width + 2 * grid.half_cells;
  const FeatureMap patch_rgb =
      crop_patch(take_channels(data.aerial, 3), frame.prior.x, frame.prior.y, patch_px, q_a);
  const FeatureMap aerial_features = encode_aerial(patch_rgb, model.aerial_encoder);

  const LogitVolume logits = score_hypotheses(aerial_features, prepared.features, prepared.mask, grid);
  return finish_match(frame, to_distribution(logits));
}

std::vector<TrajectoryPoint> track_trajectory(const Dataset& data,
                                              const std::vector<LoadedDistribution>& dists,
                                              int window_radius) {
  if (dists.size() != data.frames.size())
    throw std::invalid_argument("track: one distribution per frame required");
  if (data.frames.empty()) throw std::invalid_argument("track: empty dataset");
  if (data.odometry.size() + 1 < data.frames.size())
    throw std::invalid_argument("track: odometry steps missing");

  const auto world_measurement = [&](std::size_t i) {
    GaussianMeasurement gm = gaussian_measurement(dists[i].dist, window_radius);
    gm.mean = se2(dists[i].anchor_x + gm.mean.x, dists[i].anchor_y + gm.mean.y, gm.mean.yaw);
    return gm;
  };

  std::vector<TrajectoryPoint> out;
  GaussianMeasurement first = world_measurement(0);
  KalmanState state{first.mean, first.covariance};
  out.push_back({data.frames[0].frame_id, data.frames[0].timestamp, state.mean});
  for (std::size_t i = 1; i < data.frames.size(); ++i) {
    state = kf_predict(state, data.odometry[i - 1]);
    state = kf_update(state, world_measurement(i));
    out.push_back({data.frames[i].frame_id, data.frames[i].timestamp, state.mean});
  }
  return out;
}

CellSampler::CellSampler(const std::vector<SE2Pose>& positions, double cell_size,
                         std::uint64_t seed)
    : rng_(Rng(seed).stream("cell_sampler")) {
  if (positions.empty()) throw std::invalid_argument("cell sampler: no frames");
  if (!(cell_size > 0.0)) throw std::invalid_argument("cell sampler: cell size must be > 0");
  std::map<std::pair<std::int64_t, std::int64_t>, std::vector<std::size_t>> cells;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const auto key = std::make_pair(
        static_cast<std::int64_t>(std::floor(positions[i].x / cell_size)),
        static_cast<std::int64_t>(std::floor(positions[i].y / cell_size)));
    cells[key].push_back(i);
  }
  for (auto& [key, members] : cells) cells_.push_back(std::move(members));
}

std::size_t CellSampler::next() {
  const auto& cell = cells_[rng_.uniform_int(cells_.size())];
  return cell[rng_.uniform_int(cell.size())];
}

std::size_t coverage(const std::vector<SE2Pose>& positions, double cell_size) {
  if (!(cell_size > 0.0)) throw std::invalid_argument("coverage: cell size must be > 0");
  std::set<std::pair<std::int64_t, std::int64_t>> cells;
  for (const auto& p : positions)
    cells.insert({static_cast<std::int64_t>(std::floor(p.x / cell_size)),
                  static_cast<std::int64_t>(std::floor(p.y / cell_size))});
  return cells.size();
}

std::vector<std::size_t> prune(const std::vector<std::int64_t>& frame_ids,
                               const std::vector<double>& variances, double fraction) {
  if (frame_ids.size() != variances.size())
    throw std::invalid_argument("prune: ids and variances must pair up");
  if (fraction < 0.0 || fraction >= 1.0)
    throw std::invalid_argument("prune: fraction must be in [0, 1)");
  const std::size_t n = frame_ids.size();
  const std::size_t drop =
      static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n)));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (variances[a] != variances[b]) return variances[a] > variances[b];
    return frame_ids[a] > frame_ids[b];  // ties: larger frame id dropped first
  });

  std::vector<bool> dropped(n, false);
  for (std::size_t i = 0; i < drop && i < n; ++i) dropped[order[i]] = true;
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < n; ++i)
    if (!dropped[i]) kept.push_back(i);
  return kept;
}

EvalMetrics eval_report(const std::vector<SE2Pose>& pred, const std::vector<SE2Pose>& gt,
                        const std::vector<double>& thresholds) {
  if (pred.size() != gt.size())
    throw std::invalid_argument("eval_report: trajectories must have equal length");
  if (pred.empty()) throw std::invalid_argument("eval_report: empty trajectories");

  EvalMetrics m;
  m.thresholds = thresholds;
  m.frames = pred.size();
  m.recall_lateral.assign(thresholds.size(), 0.0);
  m.recall_longitudinal.assign(thresholds.size(), 0.0);

  std::vector<double> position_errors;
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const VehicleFrameError e = vehicle_frame_error(pred[i], gt[i]);
    const double pos = std::hypot(pred[i].x - gt[i].x, pred[i].y - gt[i].y);
    position_errors.push_back(pos);
    sum += pos;
    sum_sq += pos * pos;
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      if (e.lateral <= thresholds[t]) m.recall_lateral[t] += 1.0;
      if (e.longitudinal <= thresholds[t]) m.recall_longitudinal[t] += 1.0;
    }
  }
  const double n = static_cast<double>(pred.size());
  for (auto& r : m.recall_lateral) r = 100.0 * r / n;
  for (auto& r : m.recall_longitudinal) r = 100.0 * r / n;
  m.mean_error = sum / n;
  m.rmse = std::sqrt(sum_sq / n);

  std::sort(position_errors.begin(), position_errors.end());
  const std::size_t mid = position_errors.size() / 2;
  m.median_error = position_errors.size() % 2 == 1
                       ? position_errors[mid]
                       : 0.5 * (position_errors[mid - 1] + position_errors[mid]);

  m.ape = pred.size() >= 2 ? align_3dof(pred, gt).ape : m.mean_error;
  return m;
}

std::string format_eval_table(const EvalMetrics& m) {
  std::ostringstream out;
  out << "             ";
  for (double t : m.thresholds) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%6.1fm", t);
    out << buf;
  }
  out << "\nLateral      ";
  for (double r : m.recall_lateral) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%6.1f ", r);
    out << buf;
  }
  out << "\nLongitudinal ";
  for (double r : m.recall_longitudinal) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%6.1f ", r);
    out << buf;
  }
  char buf[128];
  std::snprintf(buf, sizeof(buf),
                "\nME     %.3f\nRMSE   %.3f\nMedian %.3f\nAPE    %.3f\nframes %zu\n",
                m.mean_error, m.rmse, m.median_error, m.ape, m.frames);
  out << buf;
  return out.str();
}

std::string format_metric_lines(const EvalMetrics& m) {
  std::ostringstream out;
  out.precision(9);
  for (std::size_t t = 0; t < m.thresholds.size(); ++t) {
    out << "metric recall_lateral_" << m.thresholds[t] << ' ' << m.recall_lateral[t] << '\n';
    out << "metric recall_longitudinal_" << m.thresholds[t] << ' ' << m.recall_longitudinal[t]
        << '\n';
  }
  out << "metric mean_error " << m.mean_error << '\n';
  out << "metric rmse " << m.rmse << '\n';
  out << "metric median_error " << m.median_error << '\n';
  out << "metric ape " << m.ape << '\n';
  out << "metric frames " << m.frames << '\n';
  return out.str();
}

}  // namespace bevloc
