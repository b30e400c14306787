#include "bevloc/camera.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace bevloc {

void PinholeCamera::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0))
    throw std::invalid_argument("camera " + id + ": focal lengths must be > 0");
  if (image_width < 1 || image_height < 1)
    throw std::invalid_argument("camera " + id + ": image dims must be >= 1");
  if (std::abs(rotation.norm() - 1.0) > 1e-6)
    throw std::invalid_argument("camera " + id + ": quaternion must be unit-norm");
}

std::optional<Eigen::Vector2d> PinholeCamera::project(
    const Eigen::Vector3d& point_vehicle) const {
  const Eigen::Vector3d p = rotation * point_vehicle + translation;
  if (!(p.z() > kNearPlane)) return std::nullopt;
  const double u = fx * p.x() / p.z() + cx;
  const double v = fy * p.y() / p.z() + cy;
  if (u < 0.0 || u > image_width - 1 || v < 0.0 || v > image_height - 1) return std::nullopt;
  return Eigen::Vector2d(u, v);
}

void CameraRig::validate() const {
  if (cameras.empty()) throw std::invalid_argument("rig must contain at least one camera");
  for (const auto& cam : cameras) cam.validate();
}

std::vector<int> CameraRig::id_order() const {
  std::vector<int> order(cameras.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return cameras[a].id < cameras[b].id; });
  return order;
}

std::vector<Eigen::Vector3d> lift_pillar(double cell_x, double cell_y, int z, double h_min,
                                         double h_max) {
  if (z < 2) throw std::invalid_argument("lift_pillar: z must be >= 2");
  if (!(h_max > h_min)) throw std::invalid_argument("lift_pillar: h_max must exceed h_min");
  std::vector<Eigen::Vector3d> points;
  points.reserve(z);
  const double step = (h_max - h_min) / (z - 1);
  for (int j = 0; j < z; ++j) {
    const double h = (j == z - 1) ? h_max : h_min + j * step;
    points.emplace_back(cell_x, cell_y, h);
  }
  return points;
}

CameraRig parse_rig(const std::string& text) {
  CameraRig rig;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag.empty()) continue;
    if (tag != "cam")
      throw std::invalid_argument("rig config line " + std::to_string(line_no) +
                                  ": expected 'cam', got '" + tag + "'");
    PinholeCamera cam;
    double qw, qx, qy, qz;
    ls >> cam.id >> cam.fx >> cam.fy >> cam.cx >> cam.cy >> cam.image_width >>
        cam.image_height >> qw >> qx >> qy >> qz >> cam.translation.x() >>
        cam.translation.y() >> cam.translation.z();
    if (!ls)
      throw std::invalid_argument("rig config line " + std::to_string(line_no) +
                                  ": malformed camera entry");
    cam.rotation = Eigen::Quaterniond(qw, qx, qy, qz);
    rig.cameras.push_back(std::move(cam));
  }
  rig.validate();
  return rig;
}

std::string format_rig(const CameraRig& rig) {
  std::ostringstream out;
  out.precision(17);
  for (const auto& c : rig.cameras) {
    out << "cam " << c.id << ' ' << c.fx << ' ' << c.fy << ' ' << c.cx << ' ' << c.cy << ' '
        << c.image_width << ' ' << c.image_height << ' ' << c.rotation.w() << ' '
        << c.rotation.x() << ' ' << c.rotation.y() << ' ' << c.rotation.z() << ' '
        << c.translation.x() << ' ' << c.translation.y() << ' ' << c.translation.z() << '\n';
  }
  return out.str();
}

CameraRig load_rig(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open rig config: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_rig(ss.str());
}

void save_rig(const CameraRig& rig, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write rig config: " + path);
  out << format_rig(rig);
}

}  // namespace bevloc
