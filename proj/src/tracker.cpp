#include "bevloc/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "bevloc/io.hpp"

namespace bevloc {

namespace {

struct ModeIndex {
  int plane = 0, iy = 0, ix = 0;
};

ModeIndex find_mode(const PoseDistribution& dist) {
  const auto& grid = dist.grid;
  ModeIndex best;
  double best_p = -1.0;
  for (int p = 0; p < grid.planes(); ++p)
    for (int iy = 0; iy < grid.cells(); ++iy)
      for (int ix = 0; ix < grid.cells(); ++ix) {
        const double v = dist.probs[grid.index(p, iy, ix)];
        if (v > best_p) {
          best_p = v;
          best = {p, iy, ix};
        }
      }
  return best;
}

// Weighted moments over a cell subset. Two passes: circular yaw mean first,
// then covariance of (x, y, wrapped yaw deviation).
DistributionStats weighted_moments(const PoseDistribution& dist, const ModeIndex& mode,
                                   int window_radius) {
  const auto& grid = dist.grid;
  const bool windowed = window_radius >= 0;

  const auto in_window = [&](int p, int iy, int ix) {
    if (!windowed) return true;
    if (std::abs(iy - mode.iy) > window_radius || std::abs(ix - mode.ix) > window_radius)
      return false;
    const int n = grid.planes();
    const int dp = std::abs(p - mode.plane);
    return std::min(dp, n - dp) <= window_radius;
  };

  double mass = 0.0, sx = 0.0, sy = 0.0, c_yaw = 0.0, s_yaw = 0.0;
  for (int p = 0; p < grid.planes(); ++p)
    for (int iy = 0; iy < grid.cells(); ++iy)
      for (int ix = 0; ix < grid.cells(); ++ix) {
        if (!grid.admissible(iy, ix) || !in_window(p, iy, ix)) continue;
        const double w = dist.probs[grid.index(p, iy, ix)];
        mass += w;
        sx += w * grid.tx(ix);
        sy += w * grid.ty(iy);
        c_yaw += w * std::cos(grid.rotations[p]);
        s_yaw += w * std::sin(grid.rotations[p]);
      }
  if (!(mass > 0.0)) throw std::invalid_argument("moments: distribution has no mass");

  DistributionStats stats;
  stats.mode = se2(grid.tx(mode.ix), grid.ty(mode.iy), grid.rotations[mode.plane]);
  const double yaw_mean = std::atan2(s_yaw, c_yaw);
  stats.mean = se2(sx / mass, sy / mass, yaw_mean);

  Eigen::Vector3d first = Eigen::Vector3d::Zero();
  Eigen::Matrix3d second = Eigen::Matrix3d::Zero();
  for (int p = 0; p < grid.planes(); ++p)
    for (int iy = 0; iy < grid.cells(); ++iy)
      for (int ix = 0; ix < grid.cells(); ++ix) {
        if (!grid.admissible(iy, ix) || !in_window(p, iy, ix)) continue;
        const double w = dist.probs[grid.index(p, iy, ix)] / mass;
        const Eigen::Vector3d u(grid.tx(ix), grid.ty(iy),
                                wrap_angle(grid.rotations[p] - yaw_mean));
        first += w * u;
        second += w * u * u.transpose();
      }
  Eigen::Matrix3d cov = second - first * first.transpose();
  cov = 0.5 * (cov + cov.transpose()).eval();
  stats.covariance = cov;
  const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0);
  stats.generalized_variance = std::max(det, 0.0);
  return stats;
}

}  // namespace

DistributionStats moments(const PoseDistribution& dist) {
  return weighted_moments(dist, find_mode(dist), -1);
}

GaussianMeasurement gaussian_measurement(const PoseDistribution& dist, int window_radius) {
  if (window_radius < 0)
    throw std::invalid_argument("gaussian_measurement: window_radius must be >= 0");
  const DistributionStats stats = weighted_moments(dist, find_mode(dist), window_radius);
  GaussianMeasurement m;
  m.mean = stats.mean;
  m.covariance = stats.covariance;
  m.covariance(0, 0) += 1e-4;
  m.covariance(1, 1) += 1e-4;
  m.covariance(2, 2) += 1e-6;
  return m;
}

KalmanState kf_predict(const KalmanState& state, const OdometryStep& odom) {
  KalmanState out;
  out.mean = se2_compose(state.mean, odom.relative);

  const double c = std::cos(state.mean.yaw), s = std::sin(state.mean.yaw);
  // d(R(yaw) * u)/dyaw
  const double dx_dyaw = -s * odom.relative.x - c * odom.relative.y;
  const double dy_dyaw = c * odom.relative.x - s * odom.relative.y;

  Eigen::Matrix3d j = Eigen::Matrix3d::Identity();
  j(0, 2) = dx_dyaw;
  j(1, 2) = dy_dyaw;
  Eigen::Matrix3d g = Eigen::Matrix3d::Identity();
  g(0, 0) = c;
  g(0, 1) = -s;
  g(1, 0) = s;
  g(1, 1) = c;

  out.covariance = j * state.covariance * j.transpose() + g * odom.noise * g.transpose();
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
  return out;
}

KalmanState kf_update(const KalmanState& state, const GaussianMeasurement& measurement) {
  Eigen::LLT<Eigen::Matrix3d> meas_llt(measurement.covariance);
  if (meas_llt.info() != Eigen::Success)
    throw std::invalid_argument("kf_update: measurement covariance must be positive definite");

  const Eigen::Matrix3d s = state.covariance + measurement.covariance;
  const double det = s.determinant();
  if (!std::isfinite(det) || det < 1e-300)
    throw std::runtime_error("kf_update: singular innovation covariance");

  const Eigen::Matrix3d gain = s.ldlt().solve(state.covariance).transpose();
  const Eigen::Vector3d innovation(measurement.mean.x - state.mean.x,
                                   measurement.mean.y - state.mean.y,
                                   wrap_angle(measurement.mean.yaw - state.mean.yaw));
  const Eigen::Vector3d delta = gain * innovation;

  KalmanState out;
  out.mean = se2(state.mean.x + delta.x(), state.mean.y + delta.y(),
                 state.mean.yaw + delta.z());
  const Eigen::Matrix3d ikh = Eigen::Matrix3d::Identity() - gain;
  out.covariance = ikh * state.covariance * ikh.transpose() +
                   gain * measurement.covariance * gain.transpose();
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
  return out;
}

Alignment align_3dof(const std::vector<SE2Pose>& pred, const std::vector<SE2Pose>& gt) {
  if (pred.size() != gt.size())
    throw std::invalid_argument("align_3dof: trajectories must have equal length");
  if (pred.size() < 2) throw std::invalid_argument("align_3dof: need at least 2 poses");
  const double n = static_cast<double>(pred.size());

  double pcx = 0.0, pcy = 0.0, gcx = 0.0, gcy = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    pcx += pred[i].x;
    pcy += pred[i].y;
    gcx += gt[i].x;
    gcy += gt[i].y;
  }
  pcx /= n;
  pcy /= n;
  gcx /= n;
  gcy /= n;

  // Optimal rotation from the 2x2 cross-covariance.
  double dot = 0.0, cross = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double px = pred[i].x - pcx, py = pred[i].y - pcy;
    const double gx = gt[i].x - gcx, gy = gt[i].y - gcy;
    dot += px * gx + py * gy;
    cross += px * gy - py * gx;
  }
  const double theta = (dot == 0.0 && cross == 0.0) ? 0.0 : std::atan2(cross, dot);
  const double c = std::cos(theta), s = std::sin(theta);

  Alignment out;
  out.transform = se2(gcx - (c * pcx - s * pcy), gcy - (s * pcx + c * pcy), theta);
  double err = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    double ax, ay;
    se2_apply(out.transform, pred[i].x, pred[i].y, ax, ay);
    err += std::hypot(ax - gt[i].x, ay - gt[i].y);
  }
  out.ape = err / n;
  return out;
}

std::vector<TrajectoryPoint> parse_trajectory(const std::string& text) {
  std::vector<TrajectoryPoint> traj;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    TrajectoryPoint pt;
    double x, y, yaw;
    ls >> pt.frame_id >> pt.timestamp >> x >> y >> yaw;
    if (!ls)
      throw std::invalid_argument("trajectory line " + std::to_string(line_no) + ": malformed");
    pt.pose = se2(x, y, yaw);
    traj.push_back(pt);
  }
  return traj;
}

std::string format_trajectory(const std::vector<TrajectoryPoint>& traj) {
  std::ostringstream out;
  out.precision(17);
  for (const auto& pt : traj)
    out << pt.frame_id << ' ' << pt.timestamp << ' ' << pt.pose.x << ' ' << pt.pose.y << ' '
        << pt.pose.yaw << '\n';
  return out.str();
}

std::vector<TrajectoryPoint> load_trajectory(const std::string& path) {
  return parse_trajectory(read_text_file(path));
}

void save_trajectory(const std::vector<TrajectoryPoint>& traj, const std::string& path) {
  atomic_write(path, format_trajectory(traj));
}

std::string format_ape_table(const std::vector<SceneApe>& scenes) {
  std::size_t name_width = 5;
  for (const auto& s : scenes) name_width = std::max(name_width, s.name.size());
  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(name_width) + 2) << "Scene" << "APE[m]\n";
  double total = 0.0;
  for (const auto& s : scenes) {
    out << std::left << std::setw(static_cast<int>(name_width) + 2) << s.name << std::fixed
        << std::setprecision(3) << s.ape << '\n';
    total += s.ape;
  }
  if (!scenes.empty())
    out << std::left << std::setw(static_cast<int>(name_width) + 2) << "Mean" << std::fixed
        << std::setprecision(3) << total / static_cast<double>(scenes.size()) << '\n';
  return out.str();
}

}  // namespace bevloc
