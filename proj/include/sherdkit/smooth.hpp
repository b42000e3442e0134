#pragma once

#include "sherdkit/mesh.hpp"

namespace sherdkit {

inline std::vector<std::vector<Index>> vertex_neighbors(const TriangleMesh& m) {
  std::vector<std::vector<Index>> nb(m.vertex_count());
  for (const auto& t : m.triangles())
    for (int k = 0; k < 3; ++k) {
      nb[t[k]].push_back(t[(k + 1) % 3]);
      nb[t[k]].push_back(t[(k + 2) % 3]);
    }
  for (auto& n : nb) {
    std::sort(n.begin(), n.end());
    n.erase(std::unique(n.begin(), n.end()), n.end());
  }
  return nb;
}

/// Umbrella-operator smoothing: every pass moves each vertex a fraction
/// `lambda` of the way to the centroid of its edge neighbours (Jacobi
/// update). Connectivity is unchanged; normals are dropped.
inline TriangleMesh laplacian_smooth(const TriangleMesh& m, int iterations, double lambda) {
  require(iterations >= 0, "iterations must be >= 0");
  require(lambda >= 0.0 && lambda <= 1.0, "lambda must lie in [0, 1]");
  if (iterations == 0) return m;
  const auto nb = vertex_neighbors(m);
  std::vector<Vec3> cur = m.vertices(), next(cur.size());
  for (int it = 0; it < iterations; ++it) {
    for (std::size_t i = 0; i < cur.size(); ++i) {
      if (nb[i].empty()) {
        next[i] = cur[i];
        continue;
      }
      Vec3 c = Vec3::Zero();
      for (Index j : nb[i]) c += cur[j];
      c /= static_cast<double>(nb[i].size());
      next[i] = cur[i] + lambda * (c - cur[i]);
    }
    std::swap(cur, next);
  }
  return TriangleMesh(std::move(cur), m.triangles());
}

}  // namespace sherdkit
