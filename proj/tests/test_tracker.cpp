#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "bevloc/matcher.hpp"
#include "bevloc/rng.hpp"
#include "bevloc/tracker.hpp"

using namespace bevloc;

namespace {

// Distribution with all mass on one hypothesis.
PoseDistribution delta_distribution(const HypothesisGrid& grid, int plane, int iy, int ix) {
  PoseDistribution dist;
  dist.grid = grid;
  dist.probs.assign(grid.volume(), 0.0);
  dist.log_probs.assign(grid.volume(), -std::numeric_limits<double>::infinity());
  dist.probs[grid.index(plane, iy, ix)] = 1.0;
  dist.log_probs[grid.index(plane, iy, ix)] = 0.0;
  return dist;
}

HypothesisGrid square_grid(int half_cells, double q, std::vector<double> rotations = {0.0}) {
  // radius large enough that the whole square is admissible
  return make_hypothesis_grid(half_cells * q * 1.5 + q, q, std::move(rotations));
}

}  // namespace

TEST_SUITE_BEGIN("tracker");

TEST_CASE("moments of a delta distribution collapse") {
  const HypothesisGrid grid = square_grid(4, 0.5, {-0.2, 0.0, 0.2});
  const PoseDistribution dist = delta_distribution(grid, 2, 6, 1);
  const DistributionStats stats = moments(dist);
  CHECK(stats.mode.x == doctest::Approx(grid.tx(1)));
  CHECK(stats.mode.y == doctest::Approx(grid.ty(6)));
  CHECK(stats.mode.yaw == doctest::Approx(0.2));
  CHECK(stats.mean.x == doctest::Approx(stats.mode.x));
  CHECK(stats.mean.y == doctest::Approx(stats.mode.y));
  CHECK(stats.mean.yaw == doctest::Approx(stats.mode.yaw));
  CHECK(stats.covariance.cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(stats.generalized_variance == 0.0);
}

TEST_CASE("moments of a centered discrete-uniform square match the closed form") {
  const int m = 3;
  const double q = 0.4;
  const HypothesisGrid grid = square_grid(5, q);
  PoseDistribution dist;
  dist.grid = grid;
  dist.probs.assign(grid.volume(), 0.0);
  dist.log_probs.assign(grid.volume(), -std::numeric_limits<double>::infinity());
  const int c = grid.half_cells;
  const double w = 1.0 / ((2 * m + 1) * (2 * m + 1));
  for (int iy = c - m; iy <= c + m; ++iy)
    for (int ix = c - m; ix <= c + m; ++ix) dist.probs[grid.index(0, iy, ix)] = w;

  const DistributionStats stats = moments(dist);
  const double expected_var = q * q * m * (m + 1) / 3.0;
  CHECK(stats.covariance(0, 0) == doctest::Approx(expected_var).epsilon(1e-9));
  CHECK(stats.covariance(1, 1) == doctest::Approx(expected_var).epsilon(1e-9));
  CHECK(std::abs(stats.covariance(0, 1)) <= 1e-12);
  CHECK(stats.generalized_variance == doctest::Approx(expected_var * expected_var));

  // PSD check
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(stats.covariance);
  CHECK(eig.eigenvalues().minCoeff() >= -1e-9);
}

TEST_CASE("spreading mass over far-apart modes raises the generalized variance") {
  // Note: a mixture of exactly two deltas has a rank-1 translation
  // covariance, so its determinant is 0 no matter how far apart they are.
  // Three non-collinear deltas make the spread-raises-gv claim testable.
  const HypothesisGrid grid = square_grid(6, 0.5);
  PoseDistribution dist;
  dist.grid = grid;
  dist.probs.assign(grid.volume(), 0.0);
  dist.log_probs.assign(grid.volume(), -std::numeric_limits<double>::infinity());
  const int c = grid.half_cells;
  dist.probs[grid.index(0, c - 5, c - 5)] = 1.0 / 3;
  dist.probs[grid.index(0, c + 5, c + 5)] = 1.0 / 3;
  dist.probs[grid.index(0, c - 5, c + 5)] = 1.0 / 3;
  CHECK(moments(dist).generalized_variance > 0.0);

  // two-point mixtures are rank deficient: gv stays at the components' 0
  PoseDistribution two = dist;
  std::fill(two.probs.begin(), two.probs.end(), 0.0);
  two.probs[grid.index(0, c - 5, c - 5)] = 0.5;
  two.probs[grid.index(0, c + 5, c + 5)] = 0.5;
  CHECK(moments(two).generalized_variance == 0.0);
}

TEST_CASE("moments covariance rotates consistently under 90-degree grid rotation") {
  const HypothesisGrid grid = square_grid(5, 0.5);
  Rng rng(80);
  PoseDistribution dist;
  dist.grid = grid;
  dist.probs.assign(grid.volume(), 0.0);
  dist.log_probs.assign(grid.volume(), 0.0);
  double total = 0.0;
  const int n = grid.cells();
  for (int iy = 0; iy < n; ++iy)
    for (int ix = 0; ix < n; ++ix) {
      const double v = rng.uniform();
      dist.probs[grid.index(0, iy, ix)] = v;
      total += v;
    }
  for (auto& p : dist.probs) p /= total;

  PoseDistribution rotated = dist;
  // (x, y) -> (-y, x): new cell (iy', ix') = (ix, n-1-iy)
  for (int iy = 0; iy < n; ++iy)
    for (int ix = 0; ix < n; ++ix)
      rotated.probs[grid.index(0, ix, n - 1 - iy)] = dist.probs[grid.index(0, iy, ix)];

  const Eigen::Matrix2d cov = moments(dist).covariance.topLeftCorner<2, 2>();
  const Eigen::Matrix2d cov_rot = moments(rotated).covariance.topLeftCorner<2, 2>();
  Eigen::Matrix2d r90;
  r90 << 0, -1, 1, 0;
  CHECK(((r90 * cov * r90.transpose()) - cov_rot).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("gaussian_measurement windows around the mode and floors the covariance") {
  const double deg = M_PI / 180.0;
  const HypothesisGrid grid =
      make_hypothesis_grid(3.0, 0.3, make_rotation_set(0.0, 6 * deg, 2 * deg));

  SUBCASE("delta distribution returns the mode with the floor covariance") {
    const int c = grid.half_cells;
    const PoseDistribution dist = delta_distribution(grid, 3, c, c);
    const GaussianMeasurement gm = gaussian_measurement(dist, 3);
    CHECK(gm.mean.x == doctest::Approx(0.0));
    CHECK(gm.mean.y == doctest::Approx(0.0));
    CHECK(gm.covariance(0, 0) == doctest::Approx(1e-4));
    CHECK(gm.covariance(2, 2) == doctest::Approx(1e-6));
  }

  SUBCASE("a full window reproduces moments() plus the floor") {
    const PoseDistribution dist = gaussian_target(se2(0.4, -0.7, 2 * deg), grid, 0.6, 2 * deg);
    const GaussianMeasurement gm = gaussian_measurement(dist, 1000);
    const DistributionStats stats = moments(dist);
    CHECK(gm.mean.x == doctest::Approx(stats.mean.x).epsilon(1e-12));
    CHECK(gm.mean.y == doctest::Approx(stats.mean.y).epsilon(1e-12));
    Eigen::Matrix3d floor = Eigen::Matrix3d::Zero();
    floor.diagonal() << 1e-4, 1e-4, 1e-6;
    CHECK((gm.covariance - stats.covariance - floor).cwiseAbs().maxCoeff() <= 1e-12);
  }

  SUBCASE("a gaussian-shaped distribution is recovered to within half a cell") {
    const SE2Pose gt = se2(0.85, -0.4, 3 * deg);
    const PoseDistribution dist = gaussian_target(gt, grid, 0.45, 2.5 * deg);
    const GaussianMeasurement gm = gaussian_measurement(dist, 10);
    CHECK(std::abs(gm.mean.x - gt.x) <= 0.151);
    CHECK(std::abs(gm.mean.y - gt.y) <= 0.151);
  }
}

TEST_CASE("kf_predict composes odometry and transports covariance") {
  KalmanState state;
  state.mean = se2(1.0, 2.0, 0.5);
  state.covariance = Eigen::Vector3d(0.01, 0.02, 0.001).asDiagonal();

  SUBCASE("identity odometry with zero noise is a no-op") {
    const KalmanState out = kf_predict(state, OdometryStep{});
    CHECK(out.mean.x == state.mean.x);
    CHECK(out.mean.y == state.mean.y);
    CHECK(out.mean.yaw == state.mean.yaw);
    CHECK((out.covariance - state.covariance).cwiseAbs().maxCoeff() <= 1e-12);
  }

  SUBCASE("a zero-noise chain reproduces composed odometry exactly") {
    Rng rng(81);
    KalmanState s;
    SE2Pose composed{};
    for (int i = 0; i < 50; ++i) {
      OdometryStep step;
      step.relative = se2(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.3, 0.3));
      composed = se2_compose(composed, step.relative);
      s = kf_predict(s, step);
    }
    CHECK(s.mean.x == doctest::Approx(composed.x).epsilon(1e-12));
    CHECK(s.mean.y == doctest::Approx(composed.y).epsilon(1e-12));
    CHECK(s.mean.yaw == doctest::Approx(composed.yaw).epsilon(1e-12));
  }

  SUBCASE("covariance trace never decreases under predict") {
    Rng rng(82);
    KalmanState s = state;
    for (int i = 0; i < 20; ++i) {
      OdometryStep step;
      step.relative = se2(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-0.5, 0.5));
      step.noise = Eigen::Vector3d(0.01, 0.01, 0.001).asDiagonal();
      const KalmanState next = kf_predict(s, step);
      CHECK(next.covariance.trace() >= s.covariance.trace() - 1e-12);
      s = next;
    }
  }
}

TEST_CASE("kf_update behaves like a Bayesian fusion step") {
  KalmanState state;
  state.mean = se2(1.0, -2.0, 0.3);
  state.covariance = Eigen::Vector3d(0.5, 0.5, 0.05).asDiagonal();
  GaussianMeasurement meas;
  meas.mean = state.mean;
  meas.covariance = Eigen::Vector3d(0.2, 0.2, 0.02).asDiagonal();

  SUBCASE("measuring the prediction leaves the mean, shrinks the covariance") {
    const KalmanState out = kf_update(state, meas);
    CHECK(out.mean.x == doctest::Approx(state.mean.x).epsilon(1e-12));
    CHECK(out.mean.y == doctest::Approx(state.mean.y).epsilon(1e-12));
    CHECK(out.covariance.trace() < state.covariance.trace());
  }

  SUBCASE("an uninformative measurement leaves the state") {
    GaussianMeasurement vague;
    vague.mean = se2(50.0, 50.0, 1.0);
    vague.covariance = (Eigen::Vector3d(1, 1, 1) * 1e12).asDiagonal();
    const KalmanState out = kf_update(state, vague);
    CHECK(std::hypot(out.mean.x - state.mean.x, out.mean.y - state.mean.y) < 1e-6);
  }

  SUBCASE("non positive-definite measurement covariance is rejected") {
    meas.covariance(0, 0) = -1.0;
    CHECK_THROWS_AS(kf_update(state, meas), std::invalid_argument);
  }

  SUBCASE("repeated iid measurements match the batch least-squares average") {
    const SE2Pose truth = se2(3.0, -1.0, 0.0);
    Rng rng(83);
    GaussianMeasurement noise_model;
    noise_model.covariance = Eigen::Vector3d(1.0, 1.0, 0.01).asDiagonal();

    std::vector<SE2Pose> samples;
    const auto draw = [&]() {
      return se2(truth.x + rng.normal(), truth.y + rng.normal(),
                 truth.yaw + 0.1 * rng.normal());
    };
    samples.push_back(draw());
    KalmanState s{samples[0], noise_model.covariance};
    double err_first = std::hypot(s.mean.x - truth.x, s.mean.y - truth.y);
    for (int k = 1; k < 100; ++k) {
      samples.push_back(draw());
      GaussianMeasurement m = noise_model;
      m.mean = samples.back();
      s = kf_update(s, m);
    }
    double bx = 0, by = 0;
    for (const auto& z : samples) {
      bx += z.x;
      by += z.y;
    }
    bx /= samples.size();
    by /= samples.size();
    CHECK(s.mean.x == doctest::Approx(bx).epsilon(1e-6));
    CHECK(s.mean.y == doctest::Approx(by).epsilon(1e-6));
    CHECK(std::hypot(s.mean.x - truth.x, s.mean.y - truth.y) <
          std::max(err_first, 0.3));
  }
}

TEST_CASE("two kf updates commute in the linear regime and match the batch fusion") {
  KalmanState prior;
  prior.mean = se2(0.2, -0.1, 0.05);
  prior.covariance = Eigen::Vector3d(1.0, 2.0, 0.1).asDiagonal();
  GaussianMeasurement a, b;
  a.mean = se2(0.5, 0.0, 0.02);
  a.covariance = Eigen::Vector3d(0.3, 0.4, 0.05).asDiagonal();
  b.mean = se2(-0.1, 0.3, 0.08);
  b.covariance = Eigen::Vector3d(0.6, 0.2, 0.03).asDiagonal();

  const KalmanState ab = kf_update(kf_update(prior, a), b);
  const KalmanState ba = kf_update(kf_update(prior, b), a);
  CHECK(std::abs(ab.mean.x - ba.mean.x) <= 1e-6);
  CHECK(std::abs(ab.mean.y - ba.mean.y) <= 1e-6);
  CHECK(std::abs(ab.mean.yaw - ba.mean.yaw) <= 1e-6);

  // information-form batch solution
  const Eigen::Matrix3d li = prior.covariance.inverse();
  const Eigen::Matrix3d ai = a.covariance.inverse();
  const Eigen::Matrix3d bi = b.covariance.inverse();
  const Eigen::Vector3d prior_v(prior.mean.x, prior.mean.y, prior.mean.yaw);
  const Eigen::Vector3d av(a.mean.x, a.mean.y, a.mean.yaw);
  const Eigen::Vector3d bv(b.mean.x, b.mean.y, b.mean.yaw);
  const Eigen::Vector3d fused =
      (li + ai + bi).ldlt().solve(li * prior_v + ai * av + bi * bv);
  CHECK(std::abs(ab.mean.x - fused.x()) <= 1e-6);
  CHECK(std::abs(ab.mean.y - fused.y()) <= 1e-6);
  CHECK(std::abs(ab.mean.yaw - fused.z()) <= 1e-6);
}

TEST_CASE("align_3dof recovers rigid transforms and minimizes the error") {
  Rng rng(84);
  std::vector<SE2Pose> gt;
  for (int i = 0; i < 40; ++i)
    gt.push_back(se2(rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-M_PI, M_PI)));

  SUBCASE("identity on equal trajectories") {
    const Alignment a = align_3dof(gt, gt);
    CHECK(std::abs(a.transform.x) <= 1e-9);
    CHECK(std::abs(a.transform.y) <= 1e-9);
    CHECK(std::abs(a.transform.yaw) <= 1e-9);
    CHECK(a.ape <= 1e-9);
  }

  SUBCASE("recovers the inverse of a known transform") {
    const SE2Pose t = se2(3.0, -2.0, 0.8);
    std::vector<SE2Pose> pred;
    for (const auto& p : gt) {
      double x, y;
      se2_apply(t, p.x, p.y, x, y);
      pred.push_back(se2(x, y, p.yaw + t.yaw));
    }
    const Alignment a = align_3dof(pred, gt);
    const SE2Pose tinv = se2_invert(t);
    CHECK(std::abs(a.transform.x - tinv.x) <= 1e-9);
    CHECK(std::abs(a.transform.y - tinv.y) <= 1e-9);
    CHECK(std::abs(a.transform.yaw - tinv.yaw) <= 1e-9);
    CHECK(a.ape <= 1e-9);
  }

  SUBCASE("matches a brute-force grid search on noisy data") {
    std::vector<SE2Pose> pred;
    const SE2Pose t = se2(0.5, -0.8, 0.2);
    for (const auto& p : gt) {
      double x, y;
      se2_apply(t, p.x, p.y, x, y);
      pred.push_back(se2(x + 0.3 * rng.normal(), y + 0.3 * rng.normal(), p.yaw));
    }
    const Alignment a = align_3dof(pred, gt);

    // oracle: dense theta sweep, each with the SSE-optimal translation
    double best_sse = 1e300;
    double px = 0, py = 0, gx = 0, gy = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      px += pred[i].x;
      py += pred[i].y;
      gx += gt[i].x;
      gy += gt[i].y;
    }
    const double n = static_cast<double>(gt.size());
    px /= n;
    py /= n;
    gx /= n;
    gy /= n;
    double best_ape = 0.0;
    for (int k = -3141; k <= 3141; ++k) {
      const double theta = k * 1e-3;
      const double c = std::cos(theta), s = std::sin(theta);
      const double tx = gx - (c * px - s * py);
      const double ty = gy - (s * px + c * py);
      double sse = 0.0, ape = 0.0;
      for (std::size_t i = 0; i < gt.size(); ++i) {
        const double ax = c * pred[i].x - s * pred[i].y + tx;
        const double ay = s * pred[i].x + c * pred[i].y + ty;
        const double d2 = (ax - gt[i].x) * (ax - gt[i].x) + (ay - gt[i].y) * (ay - gt[i].y);
        sse += d2;
        ape += std::sqrt(d2);
      }
      if (sse < best_sse) {
        best_sse = sse;
        best_ape = ape / n;
      }
    }
    CHECK(std::abs(a.ape - best_ape) <= 1e-3);
  }

  SUBCASE("degenerate identical points align with identity rotation") {
    std::vector<SE2Pose> p(5, se2(1.0, 1.0, 0.0));
    std::vector<SE2Pose> g(5, se2(2.0, 3.0, 0.0));
    const Alignment a = align_3dof(p, g);
    CHECK(a.transform.yaw == 0.0);
    CHECK(a.ape <= 1e-12);
  }
}

TEST_CASE("aligned APE does not exceed the unaligned mean error on random instances") {
  Rng rng(85);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<SE2Pose> gt, pred;
    const SE2Pose t = se2(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-0.4, 0.4));
    const double noise = rng.uniform(0.0, 0.5);
    for (int i = 0; i < 60; ++i) {
      const SE2Pose g = se2(rng.uniform(-20, 20), rng.uniform(-20, 20), 0.0);
      gt.push_back(g);
      double x, y;
      se2_apply(t, g.x, g.y, x, y);
      pred.push_back(se2(x + noise * rng.normal(), y + noise * rng.normal(), 0.0));
    }
    double raw = 0.0;
    for (std::size_t i = 0; i < gt.size(); ++i)
      raw += std::hypot(pred[i].x - gt[i].x, pred[i].y - gt[i].y);
    raw /= static_cast<double>(gt.size());
    CHECK(align_3dof(pred, gt).ape <= raw + 1e-12);
  }
}

TEST_CASE("trajectory files round trip") {
  std::vector<TrajectoryPoint> traj = {
      {0, 0.0, se2(1.25, -3.5, 0.7)},
      {1, 0.5, se2(1.5, -3.25, 0.72)},
      {5, 3.0, se2(2.0, -3.0, -0.1)},
  };
  const auto back = parse_trajectory(format_trajectory(traj));
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].frame_id == traj[i].frame_id);
    CHECK(back[i].timestamp == traj[i].timestamp);
    CHECK(back[i].pose.x == traj[i].pose.x);
    CHECK(back[i].pose.yaw == traj[i].pose.yaw);
  }
  CHECK_THROWS_AS(parse_trajectory("0 0.0 1.0"), std::invalid_argument);

  const auto table = format_ape_table({{"scene_00", 0.5}, {"scene_01", 1.5}});
  CHECK(table.find("scene_00") != std::string::npos);
  CHECK(table.find("Mean") != std::string::npos);
  CHECK(table.find("1.000") != std::string::npos);  // mean of 0.5 and 1.5
}

TEST_SUITE_END();
