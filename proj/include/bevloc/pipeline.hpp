#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bevloc/bev.hpp"
#include "bevloc/camera.hpp"
#include "bevloc/encoder.hpp"
#include "bevloc/matcher.hpp"
#include "bevloc/pose_graph.hpp"
#include "bevloc/tracker.hpp"

namespace bevloc {

/// One dataset frame: poses plus the on-disk observations.
struct FrameRecord {
  std::int64_t frame_id = 0;
  double timestamp = 0.0;
  SE2Pose gt;
  SE2Pose prior;  // within the search radius of gt
  std::string bev_path;
  std::vector<std::string> pv_paths;
};

/// Loaded dataset: manifest header plus frame records with resolved paths.
struct Dataset {
  std::string root;
  CameraRig rig;
  FeatureMap aerial;
  double search_radius = 0.0;
  double rot_noise_bound = 0.0;
  std::vector<FrameRecord> frames;
  std::vector<OdometryStep> odometry;
};

Dataset load_dataset(const std::string& manifest_path);

/// Synthetic scenario generator configuration. The generator produces a
/// structured random aerial feature map, a smooth trajectory, per-frame BEV
/// observations as rigid crops of the map plus relative noise, priors
/// perturbed inside the search region, and noisy odometry. Everything is a
/// deterministic function of the seed.
struct ScenarioConfig {
  double map_size = 100.0;          // meters, square map
  int channels = 4;                 // aerial feature channels
  double structure_density = 0.02;  // salient blobs per square meter
  double noise_sigma = 0.2;         // observation noise relative to feature std
  int n_frames = 100;
  double odom_sigma_xy = 0.05;      // per-step odometry noise, meters
  double odom_sigma_yaw = 0.0035;   // per-step odometry noise, radians
  double search_radius = 6.0;       // prior position error bound, meters
  double rot_noise_bound = 0.17453292519943295;  // prior yaw error bound (10 deg)
  double q_a = 0.3;                 // matching resolution, meters per pixel
  int bev_size_px = 48;             // BEV observation side, pixels
  double speed = 2.0;               // m/s
  double frame_dt = 0.5;            // seconds between frames
  std::uint64_t seed = 0;

  void validate() const;
};

struct Scenario {
  ScenarioConfig config;
  FeatureMap aerial;
  CameraRig rig;
  std::vector<FrameRecord> frames;  // paths filled in by write_scenario
  std::vector<FeatureMap> observations;
  std::vector<std::vector<FeatureMap>> pv_images;  // empty unless rendered
  std::vector<OdometryStep> odometry;
};

Scenario simulate(const ScenarioConfig& config, bool render_pv = false);

/// Writes aerial.fmap, rig.txt, odometry.txt, gt.txt, per-frame observation
/// maps and the frames.txt manifest into `out_dir`.
void write_scenario(const Scenario& scenario, const std::string& out_dir);

/// Axis-aligned crop of `map` centered at world position (cx, cy), with the
/// requested size and resolution; out-of-map reads are zero.
FeatureMap crop_patch(const FeatureMap& map, double cx, double cy, int size_px, double q);

/// First `n` channels of a map (used to feed multi-channel aerial maps to
/// the 3-channel encoders).
FeatureMap take_channels(const FeatureMap& map, int n);

/// Surround rig of `n_cameras` pinhole cameras looking outward and slightly
/// down, evenly spaced in yaw.
CameraRig make_surround_rig(int n_cameras = 4, int image_width = 64, int image_height = 48);

/// Ground-plane raycast render of the (first three channels of the) aerial
/// map as seen from `pose` through `cam`. Rays that miss the ground within
/// `max_range` give zero.
FeatureMap render_ground_view(const FeatureMap& aerial, const SE2Pose& pose,
                              const PinholeCamera& cam, double max_range = 60.0);

/// Per-frame matching result.
struct FrameMatchResult {
  PoseDistribution dist;
  SE2Pose anchor;        // grid origin in world coordinates (the prior)
  SE2Pose mode_world;    // argmax hypothesis mapped to world coordinates
  double generalized_variance = 0.0;
};

/// Scores one frame against the aerial map in crop mode: the stored BEV
/// observation is matched inside a patch centered on the prior.
FrameMatchResult match_frame_crop(const Dataset& data, const FrameRecord& frame,
                                  const FeatureMap& observation, double rot_step);

/// Seeded forward model for the transformer matching path.
struct TransformerModel {
  BevConfig bev_config;
  EncoderParams ground_encoder;
  EncoderParams aerial_encoder;
  BevParams bev_params;
  MatchParams match_params;
  std::uint64_t seed = 0;
};

TransformerModel make_transformer_model(const BevConfig& config, int c_a, int n_cameras,
                                        std::uint64_t seed);

/// Scores one frame through the full forward model: PV images are encoded,
/// the BEV is built by the transformer, projected to matching channels and
/// correlated against the encoded aerial patch.
FrameMatchResult match_frame_transformer(const Dataset& data, const FrameRecord& frame,
                                         const std::vector<FeatureMap>& pv_images,
                                         const TransformerModel& model, double rot_step);

/// Kalman tracking over per-frame distributions (world-anchored) and the
/// dataset odometry. Returns one pose per frame.
std::vector<TrajectoryPoint> track_trajectory(const Dataset& data,
                                              const std::vector<LoadedDistribution>& dists,
                                              int window_radius = 10);

/// Draws frames cell-uniformly: each draw picks a uniformly random occupied
/// cell of `cell_size` meters, then a uniform frame within it.
class CellSampler {
 public:
  CellSampler(const std::vector<SE2Pose>& positions, double cell_size, std::uint64_t seed);
  std::size_t next();
  std::size_t cell_count() const { return cells_.size(); }

 private:
  std::vector<std::vector<std::size_t>> cells_;
  Rng rng_;
};

/// Number of distinct `cell_size` x `cell_size` cells containing a frame.
std::size_t coverage(const std::vector<SE2Pose>& positions, double cell_size = 100.0);

/// Drops the ceil(fraction * n) hardest frames by generalized variance and
/// returns the kept indices in their original order. Ties at the cutoff are
/// broken toward dropping the larger frame id first.
std::vector<std::size_t> prune(const std::vector<std::int64_t>& frame_ids,
                               const std::vector<double>& variances, double fraction = 0.01);

struct EvalMetrics {
  std::vector<double> thresholds{1.0, 3.0, 5.0};
  std::vector<double> recall_lateral;       // percent, per threshold
  std::vector<double> recall_longitudinal;  // percent, per threshold
  double mean_error = 0.0;
  double rmse = 0.0;
  double median_error = 0.0;
  double ape = 0.0;  // after 3-DoF alignment (unaligned mean for < 2 frames)
  std::size_t frames = 0;
};

EvalMetrics eval_report(const std::vector<SE2Pose>& pred, const std::vector<SE2Pose>& gt,
                        const std::vector<double>& thresholds = {1.0, 3.0, 5.0});
std::string format_eval_table(const EvalMetrics& m);
/// Machine-readable `metric <name> <value>` lines.
std::string format_metric_lines(const EvalMetrics& m);

}  // namespace bevloc
