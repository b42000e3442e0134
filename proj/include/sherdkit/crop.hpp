#pragma once

#include "sherdkit/mesh.hpp"

namespace sherdkit {

enum class CropKeep { Inside, Outside };

inline CropKeep parse_crop_keep(const std::string& s) {
  if (s == "inside") return CropKeep::Inside;
  if (s == "outside") return CropKeep::Outside;
  fail(ErrorKind::InvalidArgument, "crop keep must be inside or outside, not '" + s + "'");
}

/// Keeps the triangles whose centroids fall on the chosen side of the box
/// (the boundary counts as inside). Cut edges are left open.
inline TriangleMesh crop_fragment(const TriangleMesh& m, const Box& box, CropKeep keep) {
  require(!box.empty() && is_finite(box.min) && is_finite(box.max), "crop box is invalid");
  std::vector<std::size_t> kept;
  for (std::size_t t = 0; t < m.triangle_count(); ++t)
    if (box.contains(triangle_centroid(m, t)) == (keep == CropKeep::Inside)) kept.push_back(t);
  if (kept.empty()) fail(ErrorKind::EmptyResult, "crop removed every triangle");
  if (kept.size() == m.triangle_count()) return m;
  return extract_triangles(m, kept);
}

}  // namespace sherdkit
