#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <optional>
#include <string>
#include <vector>

#include "bevloc/se2.hpp"

namespace bevloc {

/// Minimum depth in front of a camera for a point to count as visible.
inline constexpr double kNearPlane = 0.1;

/// Pinhole camera with a rigid vehicle-to-camera extrinsic transform.
/// Camera frame: +Z forward, +X along image columns, +Y along image rows.
struct PinholeCamera {
  std::string id;
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int image_width = 0, image_height = 0;
  Eigen::Quaterniond rotation{1, 0, 0, 0};  // vehicle -> camera
  Eigen::Vector3d translation{0, 0, 0};

  void validate() const;

  /// Projects a vehicle-frame point. Returns the pixel (u, v) if the point is
  /// in front of the near plane and inside the image rectangle
  /// [0, W-1] x [0, H-1]; empty otherwise.
  std::optional<Eigen::Vector2d> project(const Eigen::Vector3d& point_vehicle) const;
};

struct CameraRig {
  std::vector<PinholeCamera> cameras;

  void validate() const;

  /// Camera list positions ordered by ascending camera id. Value gathering
  /// and attention slots use this order so results do not depend on the
  /// order cameras were listed in.
  std::vector<int> id_order() const;
};

/// Lifts a BEV cell center into a vertical pillar of z points with heights
/// uniformly spaced over [h_min, h_max], endpoints inclusive.
/// Requires z >= 2 and h_max > h_min.
std::vector<Eigen::Vector3d> lift_pillar(double cell_x, double cell_y, int z, double h_min,
                                         double h_max);

/// Parses a rig config: one camera per line,
///   cam <id> fx fy cx cy width height qw qx qy qz tx ty tz
/// Blank lines and lines starting with '#' are skipped.
CameraRig parse_rig(const std::string& text);
std::string format_rig(const CameraRig& rig);
CameraRig load_rig(const std::string& path);
void save_rig(const CameraRig& rig, const std::string& path);

}  // namespace bevloc
