#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "bevloc/matcher.hpp"
#include "bevloc/se2.hpp"

namespace bevloc {

/// Moments of a pose distribution. The yaw mean is circular; the covariance
/// is taken over (x, y, yaw deviation wrapped about the circular mean), so
/// it is symmetric positive semi-definite by construction.
struct DistributionStats {
  SE2Pose mode;
  SE2Pose mean;
  Eigen::Matrix3d covariance = Eigen::Matrix3d::Zero();
  double generalized_variance = 0.0;  // det of the 2x2 translation block
};

DistributionStats moments(const PoseDistribution& dist);

/// Moment matching over the sub-grid within `window_radius` cells (and
/// rotation bins) of the global mode, renormalized. A small covariance
/// floor (1e-4 m^2 / 1e-6 rad^2) keeps delta-like distributions usable as
/// filter measurements.
struct GaussianMeasurement {
  SE2Pose mean;
  Eigen::Matrix3d covariance = Eigen::Matrix3d::Zero();
};

GaussianMeasurement gaussian_measurement(const PoseDistribution& dist, int window_radius = 10);

struct KalmanState {
  SE2Pose mean;
  Eigen::Matrix3d covariance = Eigen::Matrix3d::Identity();
};

/// Relative motion from frame t to t+1 expressed in the vehicle frame of t.
struct OdometryStep {
  SE2Pose relative;
  Eigen::Matrix3d noise = Eigen::Matrix3d::Zero();
};

/// Propagates the state through an odometry step with first-order
/// covariance transport.
KalmanState kf_predict(const KalmanState& state, const OdometryStep& odom);

/// Direct pose measurement update with wrapped yaw innovation; the
/// covariance update uses the Joseph form. The measurement covariance must
/// be positive definite; a singular innovation covariance raises
/// std::runtime_error.
KalmanState kf_update(const KalmanState& state, const GaussianMeasurement& measurement);

/// Closed-form least-squares 3-DoF rigid alignment of pred onto gt
/// (no scale), association by index. APE is the mean Euclidean position
/// error after alignment. Degenerate inputs (no spread) align with identity
/// rotation.
struct Alignment {
  SE2Pose transform;
  double ape = 0.0;
};

Alignment align_3dof(const std::vector<SE2Pose>& pred, const std::vector<SE2Pose>& gt);

/// Trajectory file format: one `frame_id timestamp x y yaw` line per frame.
struct TrajectoryPoint {
  std::int64_t frame_id = 0;
  double timestamp = 0.0;
  SE2Pose pose;
};

std::vector<TrajectoryPoint> parse_trajectory(const std::string& text);
std::string format_trajectory(const std::vector<TrajectoryPoint>& traj);
std::vector<TrajectoryPoint> load_trajectory(const std::string& path);
void save_trajectory(const std::vector<TrajectoryPoint>& traj, const std::string& path);

/// Per-scene APE table (one row per scene plus the mean).
struct SceneApe {
  std::string name;
  double ape = 0.0;
};
std::string format_ape_table(const std::vector<SceneApe>& scenes);

}  // namespace bevloc
