#pragma once

#include "sherdkit/mesh.hpp"
#include "sherdkit/spatial.hpp"

#include <map>
#include <unordered_map>

namespace sherdkit {

inline constexpr double kDefaultWeldTolerance = 1e-4;  // mm

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), std::size_t{0}); }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  // The smaller index always becomes the root.
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);
    parent_[b] = a;
  }

 private:
  std::vector<std::size_t> parent_;
};

struct WeldResult {
  TriangleMesh mesh;
  std::vector<Index> vertex_map;  // input vertex -> welded vertex
  std::size_t dropped_triangles = 0;
};

/// Merges vertices closer than `tolerance` (spatial hash, cell = tolerance).
/// Each cluster keeps the position of its lowest-index member. Triangles that
/// collapse are dropped. tolerance 0 merges bit-identical positions only.
inline WeldResult weld(const TriangleMesh& m, double tolerance = kDefaultWeldTolerance) {
  require(tolerance >= 0.0, "weld tolerance must be non-negative");
  const std::size_t n = m.vertex_count();
  UnionFind uf(n);
  const auto& v = m.vertices();
  if (tolerance == 0.0) {
    std::map<std::array<double, 3>, std::size_t> seen;
    for (std::size_t i = 0; i < n; ++i) {
      auto [it, inserted] = seen.emplace(std::array<double, 3>{v[i].x(), v[i].y(), v[i].z()}, i);
      if (!inserted) uf.unite(it->second, i);
    }
  } else {
    struct KeyHash {
      std::size_t operator()(const std::array<std::int64_t, 3>& k) const {
        return static_cast<std::size_t>(k[0] * 73856093LL ^ k[1] * 19349663LL ^ k[2] * 83492791LL);
      }
    };
    std::unordered_map<std::array<std::int64_t, 3>, std::vector<Index>, KeyHash> cells;
    auto key = [&](const Vec3& p) {
      return std::array<std::int64_t, 3>{static_cast<std::int64_t>(std::floor(p.x() / tolerance)),
                                         static_cast<std::int64_t>(std::floor(p.y() / tolerance)),
                                         static_cast<std::int64_t>(std::floor(p.z() / tolerance))};
    };
    const double tol_sq = tolerance * tolerance;
    for (std::size_t i = 0; i < n; ++i) {
      const auto k = key(v[i]);
      for (std::int64_t dx = -1; dx <= 1; ++dx)
        for (std::int64_t dy = -1; dy <= 1; ++dy)
          for (std::int64_t dz = -1; dz <= 1; ++dz) {
            auto it = cells.find({k[0] + dx, k[1] + dy, k[2] + dz});
            if (it == cells.end()) continue;
            for (Index j : it->second)
              if ((v[j] - v[i]).squaredNorm() < tol_sq) uf.unite(j, i);
          }
      cells[k].push_back(static_cast<Index>(i));
    }
  }

  WeldResult out;
  out.vertex_map.assign(n, 0);
  std::vector<Index> root_to_new(n, std::numeric_limits<Index>::max());
  std::vector<Vec3> verts;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = uf.find(i);
    if (root_to_new[r] == std::numeric_limits<Index>::max()) {
      root_to_new[r] = static_cast<Index>(verts.size());
      verts.push_back(v[r]);
    }
    out.vertex_map[i] = root_to_new[r];
  }
  std::vector<Triangle> tris;
  tris.reserve(m.triangle_count());
  for (const auto& t : m.triangles()) {
    const Triangle w{out.vertex_map[t[0]], out.vertex_map[t[1]], out.vertex_map[t[2]]};
    if (w[0] == w[1] || w[1] == w[2] || w[0] == w[2]) {
      ++out.dropped_triangles;
      continue;
    }
    tris.push_back(w);
  }
  out.mesh = TriangleMesh(std::move(verts), std::move(tris));
  return out;
}

namespace detail {

inline std::uint64_t edge_key(Index a, Index b) {
  if (a > b) std::swap(a, b);
  return (static_cast<std::uint64_t>(a) << 32) | b;
}

struct EdgeUse {
  std::vector<std::pair<std::size_t, bool>> uses;  // (triangle, traversed low->high)
};

// Ordered map so every iteration over edges is deterministic.
inline std::map<std::uint64_t, EdgeUse> edge_uses(const std::vector<Triangle>& tris) {
  std::map<std::uint64_t, EdgeUse> edges;
  for (std::size_t t = 0; t < tris.size(); ++t)
    for (int k = 0; k < 3; ++k) {
      const Index a = tris[t][k], b = tris[t][(k + 1) % 3];
      edges[edge_key(a, b)].uses.push_back({t, a < b});
    }
  return edges;
}

}  // namespace detail

struct MeshDiagnostics {
  std::size_t vertex_count = 0;
  std::size_t triangle_count = 0;
  std::size_t boundary_edge_count = 0;
  std::size_t nonmanifold_edge_count = 0;
  std::size_t connected_components = 0;
  bool is_watertight = false;
  bool is_orientable = false;             // some consistent winding exists
  bool is_consistently_oriented = false;  // the current winding is consistent
  long euler_characteristic = 0;          // on the welded mesh
  Box bounding_box;
};

/// Topological report on the mesh after welding vertices closer than
/// weld_tolerance. Counts (vertex/triangle) describe the input mesh.
inline MeshDiagnostics diagnose(const TriangleMesh& m, double weld_tolerance = kDefaultWeldTolerance) {
  MeshDiagnostics d;
  d.vertex_count = m.vertex_count();
  d.triangle_count = m.triangle_count();
  d.bounding_box = m.bounds();
  const WeldResult w = weld(m, weld_tolerance);
  const auto& tris = w.mesh.triangles();
  const auto edges = detail::edge_uses(tris);

  bool consistent = true;
  for (const auto& [key, e] : edges) {
    if (e.uses.size() == 1) ++d.boundary_edge_count;
    if (e.uses.size() > 2) ++d.nonmanifold_edge_count;
    if (e.uses.size() == 2 && e.uses[0].second == e.uses[1].second) consistent = false;
  }

  // 2-colour the triangle adjacency graph to decide orientability.
  std::vector<std::vector<std::pair<std::size_t, bool>>> adj(tris.size());
  for (const auto& [key, e] : edges) {
    if (e.uses.size() != 2) continue;
    const bool same_dir = e.uses[0].second == e.uses[1].second;
    adj[e.uses[0].first].push_back({e.uses[1].first, same_dir});
    adj[e.uses[1].first].push_back({e.uses[0].first, same_dir});
  }
  std::vector<int> flip(tris.size(), -1);
  bool orientable = true;
  for (std::size_t s = 0; s < tris.size() && orientable; ++s) {
    if (flip[s] >= 0) continue;
    flip[s] = 0;
    std::vector<std::size_t> stack{s};
    while (!stack.empty() && orientable) {
      const std::size_t t = stack.back();
      stack.pop_back();
      for (auto [u, same_dir] : adj[t]) {
        const int want = flip[t] ^ (same_dir ? 1 : 0);
        if (flip[u] < 0) {
          flip[u] = want;
          stack.push_back(u);
        } else if (flip[u] != want) {
          orientable = false;
          break;
        }
      }
    }
  }

  UnionFind uf(w.mesh.vertex_count());
  std::vector<char> referenced(w.mesh.vertex_count(), 0);
  for (const auto& t : tris) {
    for (Index v : t) referenced[v] = 1;
    uf.unite(t[0], t[1]);
    uf.unite(t[1], t[2]);
  }
  std::size_t nverts = 0;
  for (std::size_t i = 0; i < referenced.size(); ++i) {
    if (!referenced[i]) continue;
    ++nverts;
    if (uf.find(i) == i) ++d.connected_components;
  }
  d.is_watertight = !tris.empty() && d.boundary_edge_count == 0 && d.nonmanifold_edge_count == 0;
  d.is_orientable = orientable && d.nonmanifold_edge_count == 0;
  d.is_consistently_oriented = consistent && d.nonmanifold_edge_count == 0;
  d.euler_characteristic =
      static_cast<long>(nverts) - static_cast<long>(edges.size()) + static_cast<long>(tris.size());
  return d;
}

/// Component label per triangle (connectivity through shared welded
/// vertices), labels numbered by first triangle.
inline std::vector<std::size_t> triangle_components(const TriangleMesh& m, std::size_t& count,
                                                    double weld_tolerance = kDefaultWeldTolerance) {
  const WeldResult w = weld(m, weld_tolerance);
  UnionFind uf(w.mesh.vertex_count());
  for (const auto& t : m.triangles()) {
    uf.unite(w.vertex_map[t[0]], w.vertex_map[t[1]]);
    uf.unite(w.vertex_map[t[1]], w.vertex_map[t[2]]);
  }
  std::vector<std::size_t> label(m.triangle_count());
  std::unordered_map<std::size_t, std::size_t> root_label;
  for (std::size_t t = 0; t < m.triangle_count(); ++t) {
    const std::size_t r = uf.find(w.vertex_map[m.triangle(t)[0]]);
    auto [it, inserted] = root_label.emplace(r, root_label.size());
    label[t] = it->second;
  }
  count = root_label.size();
  return label;
}

/// Component with the most triangles; ties go to the earlier component.
inline TriangleMesh largest_component(const TriangleMesh& m, double weld_tolerance = kDefaultWeldTolerance) {
  if (m.empty()) return m;
  std::size_t count = 0;
  const auto label = triangle_components(m, count, weld_tolerance);
  std::vector<std::size_t> sizes(count, 0);
  for (std::size_t l : label) ++sizes[l];
  const std::size_t best = static_cast<std::size_t>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  std::vector<std::size_t> keep;
  for (std::size_t t = 0; t < label.size(); ++t)
    if (label[t] == best) keep.push_back(t);
  return extract_triangles(m, keep);
}

/// Makes windings consistent within each component, then flips whole
/// components so they face outward by majority ray parity: a ray shot along
/// a triangle's normal that crosses its own component an odd number of times
/// started on an inward-facing triangle.
inline TriangleMesh orient_outward(const TriangleMesh& m, double weld_tolerance = kDefaultWeldTolerance) {
  if (m.empty()) return m;
  const WeldResult w = weld(m, weld_tolerance);
  std::vector<Triangle> welded_tris;
  welded_tris.reserve(m.triangle_count());
  std::vector<std::size_t> src;  // welded triangle -> input triangle
  for (std::size_t t = 0; t < m.triangle_count(); ++t) {
    const auto& tri = m.triangle(t);
    const Triangle wt{w.vertex_map[tri[0]], w.vertex_map[tri[1]], w.vertex_map[tri[2]]};
    if (wt[0] == wt[1] || wt[1] == wt[2] || wt[0] == wt[2]) continue;
    welded_tris.push_back(wt);
    src.push_back(t);
  }
  const auto edges = detail::edge_uses(welded_tris);
  std::vector<std::vector<std::pair<std::size_t, bool>>> adj(welded_tris.size());
  for (const auto& [key, e] : edges) {
    if (e.uses.size() != 2) continue;
    const bool same_dir = e.uses[0].second == e.uses[1].second;
    adj[e.uses[0].first].push_back({e.uses[1].first, same_dir});
    adj[e.uses[1].first].push_back({e.uses[0].first, same_dir});
  }
  std::vector<int> flip(welded_tris.size(), -1);
  std::vector<std::size_t> comp(welded_tris.size(), 0);
  std::vector<std::vector<std::size_t>> members;
  for (std::size_t s = 0; s < welded_tris.size(); ++s) {
    if (flip[s] >= 0) continue;
    members.emplace_back();
    flip[s] = 0;
    std::vector<std::size_t> stack{s};
    while (!stack.empty()) {
      const std::size_t t = stack.back();
      stack.pop_back();
      comp[t] = members.size() - 1;
      members.back().push_back(t);
      for (auto [u, same_dir] : adj[t]) {
        if (flip[u] >= 0) continue;  // non-orientable conflicts are left as found
        flip[u] = flip[t] ^ (same_dir ? 1 : 0);
        stack.push_back(u);
      }
    }
  }

  std::vector<Triangle> out = m.triangles();
  for (std::size_t i = 0; i < welded_tris.size(); ++i)
    if (flip[i]) std::swap(out[src[i]][1], out[src[i]][2]);
  const TriangleMesh consistent(m.vertices(), out);

  for (const auto& mem : members) {
    std::vector<std::size_t> input_ids;
    input_ids.reserve(mem.size());
    for (std::size_t i : mem) input_ids.push_back(src[i]);
    std::sort(input_ids.begin(), input_ids.end());
    const TriangleMesh part = extract_triangles(consistent, input_ids);
    const TriangleBvh bvh(part);
    const std::size_t samples = std::min<std::size_t>(15, part.triangle_count());
    int inward = 0, outward = 0;
    for (std::size_t s = 0; s < samples; ++s) {
      const std::size_t t = s * part.triangle_count() / samples;
      const Vec3 n = triangle_cross(part, t);
      if (n.norm() == 0.0) continue;
      // Small fixed tilt keeps the ray off shared edges.
      const Vec3 dir = (n.normalized() + Vec3(1.3e-4, -2.1e-4, 0.7e-4)).normalized();
      const Vec3 origin = triangle_centroid(part, t);
      std::size_t crossings = 0;
      for (const auto& h : bvh.raycast_all(origin, dir, 1e-9 * (1.0 + part.bounds().diagonal())))
        if (h.triangle != t) ++crossings;
      (crossings % 2 ? inward : outward)++;
    }
    if (inward > outward)
      for (std::size_t i : input_ids) std::swap(out[i][1], out[i][2]);
  }
  return TriangleMesh(m.vertices(), std::move(out));
}

}  // namespace sherdkit
