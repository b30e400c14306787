#include "bevloc/pose_graph.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "bevloc/io.hpp"

namespace bevloc {

namespace {

Eigen::Matrix2d rot2(double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  Eigen::Matrix2d r;
  r << c, -s, s, c;
  return r;
}

// d R(theta) / d theta
Eigen::Matrix2d drot2(double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  Eigen::Matrix2d r;
  r << -s, -c, c, -s;
  return r;
}

void check_information(const Eigen::Matrix3d& info, const char* what) {
  if ((info - info.transpose()).cwiseAbs().maxCoeff() > 1e-9)
    throw std::invalid_argument(std::string(what) + ": information matrix must be symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(info);
  if (eig.eigenvalues().minCoeff() < -1e-9)
    throw std::invalid_argument(std::string(what) + ": information matrix must be PSD");
}

Eigen::Vector3d odometry_error(const SE2Pose& a, const SE2Pose& b, const SE2Pose& z) {
  const SE2Pose rel = se2_compose(se2_invert(a), b);
  const SE2Pose err = se2_compose(se2_invert(z), rel);
  return {err.x, err.y, wrap_angle(err.yaw)};
}

struct NormalEquations {
  std::vector<Eigen::Matrix3d> diag;      // n blocks
  std::vector<Eigen::Matrix3d> off_diag;  // n-1 blocks coupling (i, i+1)
  std::vector<Eigen::Vector3d> gradient;  // n blocks
};

NormalEquations build_normal_equations(const PoseGraph& graph,
                                       const std::vector<SE2Pose>& poses) {
  const std::size_t n = poses.size();
  NormalEquations eq;
  eq.diag.assign(n, Eigen::Matrix3d::Zero());
  eq.off_diag.assign(n > 0 ? n - 1 : 0, Eigen::Matrix3d::Zero());
  eq.gradient.assign(n, Eigen::Vector3d::Zero());

  for (const auto& edge : graph.odometry) {
    const SE2Pose& a = poses[edge.i];
    const SE2Pose& b = poses[edge.i + 1];
    const Eigen::Vector3d r = odometry_error(a, b, edge.relative);

    const Eigen::Matrix2d rz_inv = rot2(-edge.relative.yaw);
    const Eigen::Matrix2d ra_inv = rot2(-a.yaw);
    const Eigen::Vector2d dt(b.x - a.x, b.y - a.y);

    Eigen::Matrix3d ja = Eigen::Matrix3d::Zero();
    ja.block<2, 2>(0, 0) = -rz_inv * ra_inv;
    ja.block<2, 1>(0, 2) = rz_inv * (-drot2(-a.yaw) * dt);
    ja(2, 2) = -1.0;

    Eigen::Matrix3d jb = Eigen::Matrix3d::Zero();
    jb.block<2, 2>(0, 0) = rz_inv * ra_inv;
    jb(2, 2) = 1.0;

    const Eigen::Matrix3d& info = edge.information;
    eq.diag[edge.i] += ja.transpose() * info * ja;
    eq.diag[edge.i + 1] += jb.transpose() * info * jb;
    eq.off_diag[edge.i] += ja.transpose() * info * jb;
    eq.gradient[edge.i] += ja.transpose() * info * r;
    eq.gradient[edge.i + 1] += jb.transpose() * info * r;
  }

  for (const auto& edge : graph.measurements) {
    const SE2Pose& x = poses[edge.i];
    const Eigen::Vector3d r(x.x - edge.pose.x, x.y - edge.pose.y,
                            wrap_angle(x.yaw - edge.pose.yaw));
    eq.diag[edge.i] += edge.information;  // jacobian is the identity
    eq.gradient[edge.i] += edge.information * r;
  }
  return eq;
}

// Block-tridiagonal solve of (H + lambda I) delta = -g. Returns false when a
// pivot block is not invertible.
bool solve_banded(const NormalEquations& eq, double lambda,
                  std::vector<Eigen::Vector3d>& delta) {
  const std::size_t n = eq.diag.size();
  std::vector<Eigen::Matrix3d> w(n > 0 ? n - 1 : 0);
  std::vector<Eigen::Vector3d> y(n);
  Eigen::Matrix3d c;
  for (std::size_t i = 0; i < n; ++i) {
    c = eq.diag[i] + lambda * Eigen::Matrix3d::Identity();
    Eigen::Vector3d rhs = -eq.gradient[i];
    if (i > 0) {
      c -= eq.off_diag[i - 1].transpose() * w[i - 1];
      rhs -= eq.off_diag[i - 1].transpose() * y[i - 1];
    }
    const Eigen::LDLT<Eigen::Matrix3d> ldlt(c);
    if (ldlt.info() != Eigen::Success) return false;
    y[i] = ldlt.solve(rhs);
    if (i + 1 < n) w[i] = ldlt.solve(eq.off_diag[i]);
    if (!y[i].allFinite()) return false;
  }
  delta.resize(n);
  for (std::size_t i = n; i-- > 0;) {
    delta[i] = y[i];
    if (i + 1 < n) delta[i] -= w[i] * delta[i + 1];
  }
  return true;
}

std::vector<SE2Pose> apply_step(const std::vector<SE2Pose>& poses,
                                const std::vector<Eigen::Vector3d>& delta) {
  std::vector<SE2Pose> out(poses.size());
  for (std::size_t i = 0; i < poses.size(); ++i)
    out[i] = se2(poses[i].x + delta[i].x(), poses[i].y + delta[i].y(),
                 poses[i].yaw + delta[i].z());
  return out;
}

}  // namespace

void PoseGraph::validate() const {
  if (nodes.empty()) throw std::invalid_argument("pose graph: no nodes");
  const int n = static_cast<int>(nodes.size());
  for (const auto& e : odometry) {
    if (e.i < 0 || e.i + 1 >= n)
      throw std::invalid_argument("pose graph: odometry edge index out of range");
    check_information(e.information, "odometry edge");
  }
  for (const auto& e : measurements) {
    if (e.i < 0 || e.i >= n)
      throw std::invalid_argument("pose graph: measurement edge index out of range");
    check_information(e.information, "measurement edge");
  }
  if (measurements.empty())
    throw std::invalid_argument("pose graph: at least one measurement edge is required");
}

Residuals residuals(const PoseGraph& graph, const std::vector<SE2Pose>& poses) {
  if (poses.size() != graph.nodes.size())
    throw std::invalid_argument("residuals: pose count must equal node count");
  Residuals out;
  out.r.resize(3 * static_cast<Eigen::Index>(graph.odometry.size() + graph.measurements.size()));
  Eigen::Index row = 0;
  for (const auto& edge : graph.odometry) {
    const Eigen::Vector3d r = odometry_error(poses[edge.i], poses[edge.i + 1], edge.relative);
    out.r.segment<3>(row) = r;
    out.cost += r.dot(edge.information * r);
    row += 3;
  }
  for (const auto& edge : graph.measurements) {
    const SE2Pose& x = poses[edge.i];
    const Eigen::Vector3d r(x.x - edge.pose.x, x.y - edge.pose.y,
                            wrap_angle(x.yaw - edge.pose.yaw));
    out.r.segment<3>(row) = r;
    out.cost += r.dot(edge.information * r);
    row += 3;
  }
  return out;
}

OptimizeResult optimize(const PoseGraph& graph, int max_iters, double tol) {
  graph.validate();
  OptimizeResult result;
  result.poses = graph.nodes;
  result.cost = residuals(graph, result.poses).cost;

  double lambda = 1e-4;
  std::vector<Eigen::Vector3d> delta;
  for (int iter = 0; iter < max_iters; ++iter) {
    result.iterations = iter + 1;
    const NormalEquations eq = build_normal_equations(graph, result.poses);

    bool accepted = false;
    double new_cost = result.cost;
    std::vector<SE2Pose> candidate;
    while (lambda <= 1e12) {
      if (solve_banded(eq, lambda, delta)) {
        candidate = apply_step(result.poses, delta);
        new_cost = residuals(graph, candidate).cost;
        if (new_cost <= result.cost) {
          accepted = true;
          break;
        }
      }
      lambda *= 10.0;
    }
    if (!accepted) return result;  // damping exhausted; best so far, not converged

    const double decrease = result.cost - new_cost;
    result.poses = std::move(candidate);
    result.cost = new_cost;
    lambda = std::max(lambda / 10.0, 1e-12);
    if (decrease < tol) {
      result.converged = true;
      return result;
    }
  }
  return result;
}

std::vector<SE2Pose> pseudolabel(const std::vector<PoseDistribution>& distributions,
                                 const std::vector<SE2Pose>& anchors,
                                 const std::vector<OdometryStep>& odometry,
                                 const PseudolabelOptions& options) {
  const std::size_t n = distributions.size();
  if (n == 0) throw std::invalid_argument("pseudolabel: no frames");
  if (anchors.size() != n)
    throw std::invalid_argument("pseudolabel: anchor count must match distributions");
  if (odometry.size() + 1 != n)
    throw std::invalid_argument("pseudolabel: need one odometry step between consecutive frames");

  PoseGraph graph;
  Eigen::Matrix3d mean_info = Eigen::Matrix3d::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    const GaussianMeasurement gm = gaussian_measurement(distributions[i], options.window_radius);
    PoseGraph::MeasurementEdge edge;
    edge.i = static_cast<int>(i);
    edge.pose = se2(anchors[i].x + gm.mean.x, anchors[i].y + gm.mean.y, gm.mean.yaw);
    edge.information = gm.covariance.inverse();
    edge.information = 0.5 * (edge.information + edge.information.transpose()).eval();
    mean_info += edge.information;
    graph.measurements.push_back(edge);
    graph.nodes.push_back(edge.pose);
  }
  mean_info /= static_cast<double>(n);

  const Eigen::Matrix3d odo_info = options.info_ratio * mean_info;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    PoseGraph::OdometryEdge edge;
    edge.i = static_cast<int>(i);
    edge.relative = odometry[i].relative;
    edge.information = odo_info;
    graph.odometry.push_back(edge);
  }

  return optimize(graph, options.max_iters, options.tol).poses;
}

PoseGraph parse_pose_graph(const std::string& text) {
  PoseGraph graph;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  const auto read_info = [&](std::istringstream& ls) {
    double i11, i12, i13, i22, i23, i33;
    ls >> i11 >> i12 >> i13 >> i22 >> i23 >> i33;
    Eigen::Matrix3d info;
    info << i11, i12, i13, i12, i22, i23, i13, i23, i33;
    return info;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "node") {
      int i;
      double x, y, yaw;
      ls >> i >> x >> y >> yaw;
      if (!ls || i != static_cast<int>(graph.nodes.size()))
        throw std::invalid_argument("pose graph line " + std::to_string(line_no) +
                                    ": nodes must be listed in order");
      graph.nodes.push_back(se2(x, y, yaw));
    } else if (tag == "odo") {
      PoseGraph::OdometryEdge e;
      int j;
      double dx, dy, dyaw;
      ls >> e.i >> j >> dx >> dy >> dyaw;
      e.relative = se2(dx, dy, dyaw);
      e.information = read_info(ls);
      if (!ls || j != e.i + 1)
        throw std::invalid_argument("pose graph line " + std::to_string(line_no) +
                                    ": odometry edges must connect consecutive nodes");
      graph.odometry.push_back(e);
    } else if (tag == "meas") {
      PoseGraph::MeasurementEdge e;
      double x, y, yaw;
      ls >> e.i >> x >> y >> yaw;
      e.pose = se2(x, y, yaw);
      e.information = read_info(ls);
      if (!ls)
        throw std::invalid_argument("pose graph line " + std::to_string(line_no) +
                                    ": malformed measurement edge");
      graph.measurements.push_back(e);
    } else {
      throw std::invalid_argument("pose graph line " + std::to_string(line_no) +
                                  ": unknown tag '" + tag + "'");
    }
  }
  graph.validate();
  return graph;
}

std::string format_pose_graph(const PoseGraph& graph) {
  std::ostringstream out;
  out.precision(17);
  for (std::size_t i = 0; i < graph.nodes.size(); ++i)
    out << "node " << i << ' ' << graph.nodes[i].x << ' ' << graph.nodes[i].y << ' '
        << graph.nodes[i].yaw << '\n';
  const auto write_info = [&](const Eigen::Matrix3d& m) {
    out << ' ' << m(0, 0) << ' ' << m(0, 1) << ' ' << m(0, 2) << ' ' << m(1, 1) << ' '
        << m(1, 2) << ' ' << m(2, 2);
  };
  for (const auto& e : graph.odometry) {
    out << "odo " << e.i << ' ' << e.i + 1 << ' ' << e.relative.x << ' ' << e.relative.y << ' '
        << e.relative.yaw;
    write_info(e.information);
    out << '\n';
  }
  for (const auto& e : graph.measurements) {
    out << "meas " << e.i << ' ' << e.pose.x << ' ' << e.pose.y << ' ' << e.pose.yaw;
    write_info(e.information);
    out << '\n';
  }
  return out.str();
}

PoseGraph load_pose_graph(const std::string& path) {
  return parse_pose_graph(read_text_file(path));
}

void save_pose_graph(const PoseGraph& graph, const std::string& path) {
  atomic_write(path, format_pose_graph(graph));
}

}  // namespace bevloc
