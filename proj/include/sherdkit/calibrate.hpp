#pragma once

#include "sherdkit/mesh.hpp"

namespace sherdkit {

/// Reference-distance scale: two points picked on the model and the real
/// distance between them.
struct ScaleCalibration {
  Vec3 point_a = Vec3::Zero();
  Vec3 point_b = Vec3::Zero();
  double real_distance = 0.0;  // mm
  double factor = 1.0;

  double measured_distance() const { return (point_a - point_b).norm(); }
};

inline ScaleCalibration compute_factor(const Vec3& a, const Vec3& b, double real_distance) {
  require(is_finite(a) && is_finite(b), "calibration points must be finite");
  require(real_distance > 0.0 && std::isfinite(real_distance), "real distance must be positive");
  const double measured = (a - b).norm();
  require(measured > 0.0, "calibration points coincide");
  return {a, b, real_distance, real_distance / measured};
}

/// Multiplies every coordinate by the calibration factor, about the origin.
/// With recenter set, the result is translated so its bounding-box centre
/// sits where the unscaled centre was.
inline TriangleMesh apply_scale(const TriangleMesh& m, const ScaleCalibration& c, bool recenter = false) {
  require(c.factor > 0.0 && std::isfinite(c.factor), "calibration factor must be positive");
  require(c.measured_distance() > 0.0, "calibration points coincide");
  std::vector<Vec3> v;
  v.reserve(m.vertex_count());
  for (const Vec3& p : m.vertices()) v.push_back(c.factor * p);
  if (recenter) {
    const Vec3 shift = m.bounds().center() * (1.0 - c.factor);
    for (Vec3& p : v) p += shift;
  }
  return TriangleMesh(std::move(v), m.triangles(), m.normals());
}

}  // namespace sherdkit
