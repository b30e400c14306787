#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "bevloc/feature_map.hpp"
#include "bevloc/nn.hpp"
#include "bevloc/se2.hpp"

namespace bevloc {

/// Discrete SE(2) hypothesis set: a centered square grid of translations at
/// pixel resolution q_a (cells farther than `radius` from the origin are
/// excluded) crossed with a sorted list of rotation angles.
struct HypothesisGrid {
  double radius = 0.0;  // meters
  double q_a = 0.3;     // meters per translation cell
  std::vector<double> rotations;
  int half_cells = 0;

  int cells() const { return 2 * half_cells + 1; }
  int planes() const { return static_cast<int>(rotations.size()); }
  std::size_t volume() const {
    return static_cast<std::size_t>(planes()) * cells() * cells();
  }
  std::size_t index(int plane, int iy, int ix) const {
    return (static_cast<std::size_t>(plane) * cells() + iy) * cells() + ix;
  }
  double tx(int ix) const { return (ix - half_cells) * q_a; }
  double ty(int iy) const { return (iy - half_cells) * q_a; }
  bool admissible(int iy, int ix) const {
    return std::hypot(tx(ix), ty(iy)) <= radius + 1e-9;
  }
  std::size_t admissible_count() const;
  bool same_layout(const HypothesisGrid& other) const;
  void validate() const;
};

HypothesisGrid make_hypothesis_grid(double radius, double q_a, std::vector<double> rotations);

/// Rotation bins covering [center - bound, center + bound] at the given
/// spacing (default 2 degrees), wrapped into (-pi, pi], sorted, deduplicated.
std::vector<double> make_rotation_set(double center, double bound,
                                      double step = 2.0 * 3.14159265358979323846 / 180.0);

/// Matching-head parameters. sigma values parametrize the training target.
struct MatchParams {
  int c_a = 8;                                  // matching channels
  Linear projection;                            // c_b -> c_a, applied per pixel
  int d_a = 512;                                // full-scale aerial patch side (metadata)
  double sigma_t = 0.5;                         // meters
  double sigma_alpha = 2.0 * 3.14159265358979323846 / 180.0;  // radians
};

MatchParams make_match_params(int c_b, int c_a, std::uint64_t seed);

/// Hypothesis logits over a grid; entries at inadmissible cells are zero and
/// ignored by the softmax.
struct LogitVolume {
  HypothesisGrid grid;
  std::vector<double> values;
};

/// Normalized probabilities over the hypothesis grid. log_probs holds
/// logit - log_partition for admissible cells and -inf elsewhere.
struct PoseDistribution {
  HypothesisGrid grid;
  std::vector<double> probs;
  std::vector<double> log_probs;
  double log_partition = 0.0;

  double sum() const;
};

struct PreparedBev {
  FeatureMap features;             // at q_a, c_a channels, masked
  std::vector<std::uint8_t> mask;  // per pixel of `features`
};

/// Upsamples the BEV grid and its mask to resolution q_a (bilinear,
/// mask thresholded at 0.5), then projects to c_a channels and zeroes
/// masked-out pixels. Requires q_a <= the BEV resolution.
PreparedBev prepare_bev(const FeatureMap& bev, const std::vector<std::uint8_t>& mask,
                        const MatchParams& params, double q_a);

/// k = 1 / sqrt(N_valid * c_a); the empty mask is invalid.
double scale_factor(const std::vector<std::uint8_t>& mask, int c_a);

/// Scores every hypothesis: for each rotation the masked BEV is rigidly
/// rotated, cross-correlated against the aerial features in the Fourier
/// domain, and scaled by k. The aerial map must share the grid resolution
/// and channel count and be at least as large as the BEV, with matching
/// parity so integer correlation offsets land on grid translations.
LogitVolume score_hypotheses(const FeatureMap& aerial, const FeatureMap& bev_projected,
                             const std::vector<std::uint8_t>& mask, const HypothesisGrid& grid);

/// Joint softmax over all admissible hypotheses (max-subtracted).
PoseDistribution to_distribution(const LogitVolume& logits);

/// Discretized normal target centered on the ground-truth pose,
/// normalized over the admissible hypotheses. Throws std::out_of_range if
/// the pose lies outside the translation radius.
PoseDistribution gaussian_target(const SE2Pose& gt, const HypothesisGrid& grid, double sigma_t,
                                 double sigma_alpha);

/// L = -sum P_true(h) ln P(h); grids must have the same layout.
double cross_entropy_loss(const PoseDistribution& p, const PoseDistribution& p_true);

/// dL/dlogit_h = P(h) - P_true(h).
LogitVolume loss_gradient(const LogitVolume& logits, const PoseDistribution& p_true);

/// Argmax hypothesis of a distribution as (tx, ty, yaw).
SE2Pose distribution_mode(const PoseDistribution& dist);

/// FMAP1 export: rotation planes become channels; resolution is q_a.
FeatureMap distribution_to_feature_map(const PoseDistribution& dist);
/// Inverse of the above given the sidecar grid; probabilities are
/// renormalized to absorb the float32 round trip.
PoseDistribution distribution_from_feature_map(const FeatureMap& map, const HypothesisGrid& grid);

/// Text sidecar with grid metadata plus the world anchor the grid
/// translations are relative to.
std::string format_distribution_sidecar(const HypothesisGrid& grid, double anchor_x,
                                        double anchor_y);
struct DistributionSidecar {
  HypothesisGrid grid;
  double anchor_x = 0.0;
  double anchor_y = 0.0;
};
DistributionSidecar parse_distribution_sidecar(const std::string& text);

void save_distribution(const PoseDistribution& dist, const std::string& fmap_path,
                       const std::string& sidecar_path, double anchor_x, double anchor_y);
struct LoadedDistribution {
  PoseDistribution dist;
  double anchor_x = 0.0;
  double anchor_y = 0.0;
};
LoadedDistribution load_distribution(const std::string& fmap_path,
                                     const std::string& sidecar_path);

/// Rotation-marginalized heatmap as 16-bit PGM, scaled so the peak is 65535.
void save_heatmap_pgm(const PoseDistribution& dist, const std::string& path);

}  // namespace bevloc
