#pragma once

#include <cmath>
#include <numbers>

namespace bevloc {

/// Wraps an angle into (-pi, pi].
inline double wrap_angle(double theta) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double t = std::remainder(theta, two_pi);
  if (t <= -std::numbers::pi) t += two_pi;
  return t;
}

/// Planar rigid pose: translation in meters, yaw in radians, yaw kept in
/// (-pi, pi]. A pose maps points from its own frame into the parent frame as
/// p' = R(yaw) * p + (x, y).
struct SE2Pose {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;
};

inline SE2Pose se2(double x, double y, double yaw) { return {x, y, wrap_angle(yaw)}; }

inline SE2Pose se2_compose(const SE2Pose& a, const SE2Pose& b) {
  const double c = std::cos(a.yaw), s = std::sin(a.yaw);
  return {a.x + c * b.x - s * b.y, a.y + s * b.x + c * b.y, wrap_angle(a.yaw + b.yaw)};
}

inline SE2Pose se2_invert(const SE2Pose& a) {
  const double c = std::cos(a.yaw), s = std::sin(a.yaw);
  // R(-yaw) * (-t)
  return {-(c * a.x + s * a.y), -(-s * a.x + c * a.y), wrap_angle(-a.yaw)};
}

/// Applies the pose to a point: R(yaw) * p + t.
inline void se2_apply(const SE2Pose& a, double px, double py, double& ox, double& oy) {
  const double c = std::cos(a.yaw), s = std::sin(a.yaw);
  ox = a.x + c * px - s * py;
  oy = a.y + s * px + c * py;
}

/// Position error decomposed in the ground-truth vehicle frame.
/// longitudinal = along the gt heading, lateral = perpendicular to it.
struct VehicleFrameError {
  double lateral = 0.0;
  double longitudinal = 0.0;
  double angular = 0.0;
};

inline VehicleFrameError vehicle_frame_error(const SE2Pose& pred, const SE2Pose& gt) {
  const double dx = pred.x - gt.x, dy = pred.y - gt.y;
  const double c = std::cos(-gt.yaw), s = std::sin(-gt.yaw);
  const double ex = c * dx - s * dy;  // along heading
  const double ey = s * dx + c * dy;  // perpendicular
  return {std::abs(ey), std::abs(ex), std::abs(wrap_angle(pred.yaw - gt.yaw))};
}

}  // namespace bevloc
