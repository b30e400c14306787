#include "bevloc/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "bevloc/correlate.hpp"
#include "bevloc/grid_ops.hpp"
#include "bevloc/io.hpp"

namespace bevloc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_same_layout(const HypothesisGrid& a, const HypothesisGrid& b, const char* what) {
  if (!a.same_layout(b)) throw std::invalid_argument(std::string(what) + ": grid mismatch");
}

// Softmax over admissible cells of a raw score volume.
PoseDistribution softmax_distribution(const HypothesisGrid& grid,
                                      const std::vector<double>& scores) {
  PoseDistribution dist;
  dist.grid = grid;
  dist.probs.assign(grid.volume(), 0.0);
  dist.log_probs.assign(grid.volume(), -kInf);

  double max_score = -kInf;
  for (int p = 0; p < grid.planes(); ++p)
    for (int iy = 0; iy < grid.cells(); ++iy)
      for (int ix = 0; ix < grid.cells(); ++ix)
        if (grid.admissible(iy, ix)) max_score = std::max(max_score, scores[grid.index(p, iy, ix)]);
  if (max_score == -kInf)
    throw std::invalid_argument("to_distribution: no admissible hypothesis");

  double denom = 0.0;
  for (int p = 0; p < grid.planes(); ++p)
    for (int iy = 0; iy < grid.cells(); ++iy)
      for (int ix = 0; ix < grid.cells(); ++ix)
        if (grid.admissible(iy, ix)) denom += std::exp(scores[grid.index(p, iy, ix)] - max_score);
  const double log_denom = std::log(denom);
  dist.log_partition = max_score + log_denom;

  for (int p = 0; p < grid.planes(); ++p)
    for (int iy = 0; iy < grid.cells(); ++iy)
      for (int ix = 0; ix < grid.cells(); ++ix) {
        if (!grid.admissible(iy, ix)) continue;
        const std::size_t i = grid.index(p, iy, ix);
        const double lp = scores[i] - max_score - log_denom;
        dist.log_probs[i] = lp;
        dist.probs[i] = std::exp(lp);
      }
  return dist;
}

}  // namespace

std::size_t HypothesisGrid::admissible_count() const {
  std::size_t n = 0;
  for (int iy = 0; iy < cells(); ++iy)
    for (int ix = 0; ix < cells(); ++ix)
      if (admissible(iy, ix)) ++n;
  return n * planes();
}

bool HypothesisGrid::same_layout(const HypothesisGrid& other) const {
  return radius == other.radius && q_a == other.q_a && half_cells == other.half_cells &&
         rotations == other.rotations;
}

void HypothesisGrid::validate() const {
  if (!(radius > 0.0)) throw std::invalid_argument("hypothesis grid: radius must be > 0");
  if (!(q_a > 0.0)) throw std::invalid_argument("hypothesis grid: q_a must be > 0");
  if (rotations.empty()) throw std::invalid_argument("hypothesis grid: empty rotation set");
  for (std::size_t i = 0; i < rotations.size(); ++i) {
    if (rotations[i] <= -std::numbers::pi || rotations[i] > std::numbers::pi)
      throw std::invalid_argument("hypothesis grid: rotation outside (-pi, pi]");
    if (i > 0 && rotations[i] <= rotations[i - 1])
      throw std::invalid_argument("hypothesis grid: rotations must be sorted and unique");
  }
}

HypothesisGrid make_hypothesis_grid(double radius, double q_a, std::vector<double> rotations) {
  HypothesisGrid grid;
  grid.radius = radius;
  grid.q_a = q_a;
  grid.rotations = std::move(rotations);
  grid.half_cells = static_cast<int>(std::floor(radius / q_a + 1e-9));
  grid.validate();
  return grid;
}

std::vector<double> make_rotation_set(double center, double bound, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("rotation set: step must be > 0");
  if (bound < 0.0) throw std::invalid_argument("rotation set: bound must be >= 0");
  const int k = static_cast<int>(std::llround(bound / step));
  std::vector<double> rotations;
  for (int i = -k; i <= k; ++i) rotations.push_back(wrap_angle(center + i * step));
  std::sort(rotations.begin(), rotations.end());
  rotations.erase(std::unique(rotations.begin(), rotations.end(),
                              [](double a, double b) { return std::abs(a - b) < 1e-12; }),
                  rotations.end());
  return rotations;
}

MatchParams make_match_params(int c_b, int c_a, std::uint64_t seed) {
  MatchParams params;
  params.c_a = c_a;
  Rng rng = Rng(seed).stream("match_proj");
  params.projection = make_linear(c_b, c_a, rng);
  return params;
}

double PoseDistribution::sum() const {
  double s = 0.0;
  for (double p : probs) s += p;
  return s;
}

PreparedBev prepare_bev(const FeatureMap& bev, const std::vector<std::uint8_t>& mask,
                        const MatchParams& params, double q_a) {
  if (mask.size() != static_cast<std::size_t>(bev.height) * bev.width)
    throw std::invalid_argument("prepare_bev: mask size mismatch");
  if (q_a > bev.resolution + 1e-9)
    throw std::invalid_argument("prepare_bev: q_a must not exceed the BEV resolution");

  const double factor = bev.resolution / q_a;
  const int th = static_cast<int>(std::lround(bev.height * factor));
  const int tw = static_cast<int>(std::lround(bev.width * factor));

  FeatureMap up = resize_bilinear(bev, th, tw);
  up.resolution = static_cast<float>(q_a);

  FeatureMap mask_map(bev.height, bev.width, 1, bev.resolution);
  for (std::size_t i = 0; i < mask.size(); ++i) mask_map.data[i] = mask[i] ? 1.0f : 0.0f;
  FeatureMap mask_up = resize_bilinear(mask_map, th, tw);

  PreparedBev out;
  out.features = apply_pointwise(up, params.projection);
  out.features.resolution = static_cast<float>(q_a);
  out.mask.resize(static_cast<std::size_t>(th) * tw);
  for (std::size_t i = 0; i < out.mask.size(); ++i)
    out.mask[i] = mask_up.data[i] >= 0.5f ? 1 : 0;
  // Mask applied after the projection, before correlation.
  for (std::size_t i = 0; i < out.mask.size(); ++i)
    if (!out.mask[i])
      std::fill_n(out.features.data.begin() +
                      static_cast<std::ptrdiff_t>(i) * out.features.channels,
                  out.features.channels, 0.0f);
  return out;
}

double scale_factor(const std::vector<std::uint8_t>& mask, int c_a) {
  if (c_a < 1) throw std::invalid_argument("scale_factor: c_a must be >= 1");
  std::size_t n_valid = 0;
  for (auto m : mask)
    if (m) ++n_valid;
  if (n_valid == 0) throw std::invalid_argument("scale_factor: mask has no valid cell");
  return 1.0 / std::sqrt(static_cast<double>(n_valid) * c_a);
}

LogitVolume score_hypotheses(const FeatureMap& aerial, const FeatureMap& bev_projected,
                             const std::vector<std::uint8_t>& mask, const HypothesisGrid& grid) {
  grid.validate();
  if (aerial.channels != bev_projected.channels)
    throw std::invalid_argument("score_hypotheses: channel mismatch");
  if (std::abs(aerial.resolution - grid.q_a) > 1e-4 * grid.q_a ||
      std::abs(bev_projected.resolution - grid.q_a) > 1e-4 * grid.q_a)
    throw std::invalid_argument("score_hypotheses: resolutions must equal q_a");
  if (aerial.height < bev_projected.height || aerial.width < bev_projected.width)
    throw std::invalid_argument("score_hypotheses: aerial map smaller than the BEV");
  if ((aerial.height - bev_projected.height) % 2 != 0 ||
      (aerial.width - bev_projected.width) % 2 != 0)
    throw std::invalid_argument(
        "score_hypotheses: aerial/BEV dims must have equal parity so grid "
        "translations land on integer offsets");

  const double k = scale_factor(mask, aerial.channels);
  const int th = bev_projected.height, tw = bev_projected.width;
  const int base_dy = (aerial.height - th) / 2;
  const int base_dx = (aerial.width - tw) / 2;

  LogitVolume out;
  out.grid = grid;
  out.values.assign(grid.volume(), 0.0);

  CorrelationEngine engine(aerial, th, tw);
  for (int p = 0; p < grid.planes(); ++p) {
    const FeatureMap rotated = rigid_warp(bev_projected, se2(0.0, 0.0, grid.rotations[p]), th,
                                          tw, static_cast<float>(grid.q_a));
    const CorrelationMap corr = engine.correlate(rotated);
    for (int iy = 0; iy < grid.cells(); ++iy) {
      const int dy = base_dy + iy - grid.half_cells;
      for (int ix = 0; ix < grid.cells(); ++ix) {
        if (!grid.admissible(iy, ix)) continue;
        const int dx = base_dx + ix - grid.half_cells;
        double value = 0.0;
        if (dy >= corr.offset_row0 && dy < corr.offset_row0 + corr.height &&
            dx >= corr.offset_col0 && dx < corr.offset_col0 + corr.width)
          value = corr.at_offset(0, dy, dx);
        out.values[grid.index(p, iy, ix)] = k * value;
      }
    }
  }
  return out;
}

PoseDistribution to_distribution(const LogitVolume& logits) {
  return softmax_distribution(logits.grid, logits.values);
}

PoseDistribution gaussian_target(const SE2Pose& gt, const HypothesisGrid& grid, double sigma_t,
                                 double sigma_alpha) {
  grid.validate();
  if (!(sigma_t > 0.0) || !(sigma_alpha > 0.0))
    throw std::invalid_argument("gaussian_target: sigmas must be > 0");
  if (std::hypot(gt.x, gt.y) > grid.radius + 1e-9)
    throw std::out_of_range("gaussian_target: pose outside the translation radius");

  std::vector<double> scores(grid.volume(), 0.0);
  const double inv_t = 1.0 / (2.0 * sigma_t * sigma_t);
  const double inv_a = 1.0 / (2.0 * sigma_alpha * sigma_alpha);
  for (int p = 0; p < grid.planes(); ++p) {
    const double da = wrap_angle(grid.rotations[p] - gt.yaw);
    for (int iy = 0; iy < grid.cells(); ++iy)
      for (int ix = 0; ix < grid.cells(); ++ix) {
        if (!grid.admissible(iy, ix)) continue;
        const double dx = grid.tx(ix) - gt.x, dy = grid.ty(iy) - gt.y;
        scores[grid.index(p, iy, ix)] = -(dx * dx + dy * dy) * inv_t - da * da * inv_a;
      }
  }
  return softmax_distribution(grid, scores);
}

double cross_entropy_loss(const PoseDistribution& p, const PoseDistribution& p_true) {
  check_same_layout(p.grid, p_true.grid, "cross_entropy_loss");
  double loss = 0.0;
  for (std::size_t i = 0; i < p_true.probs.size(); ++i)
    if (p_true.probs[i] > 0.0) loss -= p_true.probs[i] * p.log_probs[i];
  return loss;
}

LogitVolume loss_gradient(const LogitVolume& logits, const PoseDistribution& p_true) {
  check_same_layout(logits.grid, p_true.grid, "loss_gradient");
  const PoseDistribution p = to_distribution(logits);
  LogitVolume grad;
  grad.grid = logits.grid;
  grad.values.assign(logits.grid.volume(), 0.0);
  for (int pl = 0; pl < grad.grid.planes(); ++pl)
    for (int iy = 0; iy < grad.grid.cells(); ++iy)
      for (int ix = 0; ix < grad.grid.cells(); ++ix)
        if (grad.grid.admissible(iy, ix)) {
          const std::size_t i = grad.grid.index(pl, iy, ix);
          grad.values[i] = p.probs[i] - p_true.probs[i];
        }
  return grad;
}

SE2Pose distribution_mode(const PoseDistribution& dist) {
  const auto& grid = dist.grid;
  double best = -kInf;
  SE2Pose mode;
  for (int p = 0; p < grid.planes(); ++p)
    for (int iy = 0; iy < grid.cells(); ++iy)
      for (int ix = 0; ix < grid.cells(); ++ix) {
        const double v = dist.probs[grid.index(p, iy, ix)];
        if (v > best) {
          best = v;
          mode = se2(grid.tx(ix), grid.ty(iy), grid.rotations[p]);
        }
      }
  return mode;
}

FeatureMap distribution_to_feature_map(const PoseDistribution& dist) {
  const auto& grid = dist.grid;
  FeatureMap map(grid.cells(), grid.cells(), grid.planes(), static_cast<float>(grid.q_a));
  for (int p = 0; p < grid.planes(); ++p)
    for (int iy = 0; iy < grid.cells(); ++iy)
      for (int ix = 0; ix < grid.cells(); ++ix)
        map.at(iy, ix, p) = static_cast<float>(dist.probs[grid.index(p, iy, ix)]);
  return map;
}

PoseDistribution distribution_from_feature_map(const FeatureMap& map,
                                               const HypothesisGrid& grid) {
  if (map.height != grid.cells() || map.width != grid.cells() || map.channels != grid.planes())
    throw std::invalid_argument("distribution_from_feature_map: dims do not match grid");
  PoseDistribution dist;
  dist.grid = grid;
  dist.probs.assign(grid.volume(), 0.0);
  dist.log_probs.assign(grid.volume(), -kInf);
  double total = 0.0;
  for (int p = 0; p < grid.planes(); ++p)
    for (int iy = 0; iy < grid.cells(); ++iy)
      for (int ix = 0; ix < grid.cells(); ++ix)
        if (grid.admissible(iy, ix)) {
          const double v = std::max(0.0, static_cast<double>(map.at(iy, ix, p)));
          dist.probs[grid.index(p, iy, ix)] = v;
          total += v;
        }
  if (!(total > 0.0))
    throw std::invalid_argument("distribution_from_feature_map: all-zero distribution");
  for (int p = 0; p < grid.planes(); ++p)
    for (int iy = 0; iy < grid.cells(); ++iy)
      for (int ix = 0; ix < grid.cells(); ++ix)
        if (grid.admissible(iy, ix)) {
          const std::size_t i = grid.index(p, iy, ix);
          dist.probs[i] /= total;
          dist.log_probs[i] = dist.probs[i] > 0.0 ? std::log(dist.probs[i]) : -kInf;
        }
  return dist;
}

std::string format_distribution_sidecar(const HypothesisGrid& grid, double anchor_x,
                                        double anchor_y) {
  std::ostringstream out;
  out.precision(17);
  out << "radius " << grid.radius << '\n';
  out << "q_a " << grid.q_a << '\n';
  out << "rotations";
  for (double r : grid.rotations) out << ' ' << r;
  out << '\n';
  out << "anchor " << anchor_x << ' ' << anchor_y << '\n';
  return out.str();
}

DistributionSidecar parse_distribution_sidecar(const std::string& text) {
  DistributionSidecar sc;
  double radius = 0.0, q_a = 0.0;
  std::vector<double> rotations;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "radius") {
      ls >> radius;
    } else if (key == "q_a") {
      ls >> q_a;
    } else if (key == "rotations") {
      double r;
      while (ls >> r) rotations.push_back(r);
    } else if (key == "anchor") {
      ls >> sc.anchor_x >> sc.anchor_y;
    } else {
      throw std::invalid_argument("distribution sidecar: unknown key '" + key + "'");
    }
  }
  sc.grid = make_hypothesis_grid(radius, q_a, std::move(rotations));
  return sc;
}

void save_distribution(const PoseDistribution& dist, const std::string& fmap_path,
                       const std::string& sidecar_path, double anchor_x, double anchor_y) {
  save_fmap(distribution_to_feature_map(dist), fmap_path);
  atomic_write(sidecar_path, format_distribution_sidecar(dist.grid, anchor_x, anchor_y));
}

LoadedDistribution load_distribution(const std::string& fmap_path,
                                     const std::string& sidecar_path) {
  const DistributionSidecar sc = parse_distribution_sidecar(read_text_file(sidecar_path));
  LoadedDistribution out;
  out.dist = distribution_from_feature_map(load_fmap(fmap_path), sc.grid);
  out.anchor_x = sc.anchor_x;
  out.anchor_y = sc.anchor_y;
  return out;
}

void save_heatmap_pgm(const PoseDistribution& dist, const std::string& path) {
  const auto& grid = dist.grid;
  std::vector<double> marginal(static_cast<std::size_t>(grid.cells()) * grid.cells(), 0.0);
  for (int p = 0; p < grid.planes(); ++p)
    for (int iy = 0; iy < grid.cells(); ++iy)
      for (int ix = 0; ix < grid.cells(); ++ix)
        marginal[static_cast<std::size_t>(iy) * grid.cells() + ix] +=
            dist.probs[grid.index(p, iy, ix)];
  save_pgm16(marginal, grid.cells(), grid.cells(), path);
}

}  // namespace bevloc
