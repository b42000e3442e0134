#pragma once

#include "sherdkit/topology.hpp"

namespace sherdkit {

class NotWatertightError : public Error {
 public:
  explicit NotWatertightError(MeshDiagnostics d)
      : Error(ErrorKind::NotWatertight, "mesh is not watertight (" + std::to_string(d.boundary_edge_count) +
                                            " boundary edges, " + std::to_string(d.nonmanifold_edge_count) +
                                            " non-manifold edges)"),
        diagnostics(std::move(d)) {}
  MeshDiagnostics diagnostics;
};

/// Signed divergence-theorem sum in mm³, positive for outward windings.
/// Vertices are taken relative to the bounding-box centre, which leaves the
/// exact value unchanged and keeps the sum well conditioned far from the origin.
inline double signed_volume_mm3(const TriangleMesh& m) {
  const Vec3 c = m.bounds().center();
  KahanSum s;
  for (std::size_t t = 0; t < m.triangle_count(); ++t) {
    const Vec3 a = m.corner(t, 0) - c, b = m.corner(t, 1) - c, d = m.corner(t, 2) - c;
    s.add(a.dot(b.cross(d)));
  }
  return s.value() / 6.0;
}

/// Volume enclosed by a closed, consistently wound surface, in cm³.
/// Refuses open or inconsistently wound input; `orient_outward` repairs the latter.
inline double enclosed_volume(const TriangleMesh& m, double weld_tolerance = kDefaultWeldTolerance) {
  const MeshDiagnostics d = diagnose(m, weld_tolerance);
  if (!d.is_watertight) throw NotWatertightError(d);
  if (!d.is_consistently_oriented)
    fail(ErrorKind::Orientation, "triangle windings are inconsistent; run orient_outward first");
  return mm3_to_cm3(std::abs(signed_volume_mm3(m)));
}

}  // namespace sherdkit
