#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "bevloc/matcher.hpp"
#include "bevloc/se2.hpp"
#include "bevloc/tracker.hpp"

namespace bevloc {

/// Chain-structured pose graph: consecutive odometry edges carrying high
/// confidence and absolute pose measurements carrying low confidence.
struct PoseGraph {
  std::vector<SE2Pose> nodes;  // initial estimates

  struct OdometryEdge {
    int i = 0;  // connects node i to node i+1
    SE2Pose relative;
    Eigen::Matrix3d information = Eigen::Matrix3d::Identity();
  };
  struct MeasurementEdge {
    int i = 0;
    SE2Pose pose;
    Eigen::Matrix3d information = Eigen::Matrix3d::Identity();
  };

  std::vector<OdometryEdge> odometry;
  std::vector<MeasurementEdge> measurements;

  void validate() const;
};

/// Stacked residuals (odometry edges first, then measurements; 3 components
/// each, yaw wrapped) and the total weighted cost sum r^T Lambda r.
struct Residuals {
  Eigen::VectorXd r;
  double cost = 0.0;
};

Residuals residuals(const PoseGraph& graph, const std::vector<SE2Pose>& poses);

struct OptimizeResult {
  std::vector<SE2Pose> poses;
  double cost = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Gauss-Newton with additive Levenberg damping on the 3n-dimensional state.
/// The normal equations are block tridiagonal (odometry chain) plus diagonal
/// (measurements) and are solved by banded block elimination in linear time.
OptimizeResult optimize(const PoseGraph& graph, int max_iters = 50, double tol = 1e-10);

struct PseudolabelOptions {
  int window_radius = 10;       // gaussian_measurement window
  double info_ratio = 100.0;    // odometry information relative to the mean
                                // measurement information
  int max_iters = 50;
  double tol = 1e-10;
};

/// Pseudo-label refinement: per-frame distributions become absolute
/// measurement edges (windowed moment matching), odometry steps become
/// high-confidence relative edges, and the optimized node poses are
/// returned. Requires odometry.size() + 1 == distributions.size().
std::vector<SE2Pose> pseudolabel(const std::vector<PoseDistribution>& distributions,
                                 const std::vector<SE2Pose>& anchors,
                                 const std::vector<OdometryStep>& odometry,
                                 const PseudolabelOptions& options = {});

/// Graph text format:
///   node i x y yaw
///   odo i j dx dy dyaw i11 i12 i13 i22 i23 i33
///   meas i x y yaw i11 i12 i13 i22 i23 i33
PoseGraph parse_pose_graph(const std::string& text);
std::string format_pose_graph(const PoseGraph& graph);
PoseGraph load_pose_graph(const std::string& path);
void save_pose_graph(const PoseGraph& graph, const std::string& path);

}  // namespace bevloc
