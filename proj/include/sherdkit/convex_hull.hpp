#pragma once

#include "sherdkit/mesh.hpp"

#include <span>
#include <unordered_map>

namespace sherdkit {

/// 3-D convex hull by quickhull. Output is closed and wound outward; only
/// hull vertices are kept. Throws DegenerateError (dimension 0, 1 or 2) when
/// the points do not span a volume; the tolerance is 1e-9 of the bounding-box
/// diagonal.
inline TriangleMesh convex_hull(std::span<const Vec3> points) {
  if (points.size() < 4) throw DegenerateError("convex hull needs at least 4 points", points.empty() ? -1 : 0);
  for (const Vec3& p : points) require(is_finite(p), "convex hull input contains a non-finite point");

  const Box bb = bounding_box(points);
  const double eps = 1e-9 * bb.diagonal();
  if (!(bb.diagonal() > 0.0)) throw DegenerateError("all points coincide (dimension 0)", 0);

  // Initial simplex from extreme points.
  std::size_t i0 = 0;
  for (std::size_t i = 1; i < points.size(); ++i)
    if (points[i].x() < points[i0].x()) i0 = i;
  std::size_t i1 = i0;
  double best = -1;
  for (std::size_t i = 0; i < points.size(); ++i)
    if (const double d = (points[i] - points[i0]).squaredNorm(); d > best) best = d, i1 = i;
  if (std::sqrt(best) <= eps) throw DegenerateError("all points coincide (dimension 0)", 0);
  const Vec3 dir01 = (points[i1] - points[i0]).normalized();
  std::size_t i2 = i0;
  best = -1;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec3 v = points[i] - points[i0];
    if (const double d = (v - v.dot(dir01) * dir01).squaredNorm(); d > best) best = d, i2 = i;
  }
  if (std::sqrt(best) <= eps) throw DegenerateError("points are collinear (dimension 1)", 1);
  const Vec3 n012 = (points[i1] - points[i0]).cross(points[i2] - points[i0]).normalized();
  std::size_t i3 = i0;
  best = -1;
  for (std::size_t i = 0; i < points.size(); ++i)
    if (const double d = std::abs((points[i] - points[i0]).dot(n012)); d > best) best = d, i3 = i;
  if (best <= eps) throw DegenerateError("points are coplanar (dimension 2)", 2);

  struct Face {
    std::array<std::size_t, 3> v;
    Vec3 normal;
    double offset;
    bool alive = true;
    std::vector<std::size_t> outside;
  };
  std::vector<Face> faces;
  std::unordered_map<std::uint64_t, std::size_t> edge_face;  // directed edge -> face
  auto ekey = [](std::size_t a, std::size_t b) { return (static_cast<std::uint64_t>(a) << 32) | b; };

  auto add_face = [&](std::size_t a, std::size_t b, std::size_t c) {
    Face f;
    f.v = {a, b, c};
    f.normal = (points[b] - points[a]).cross(points[c] - points[a]);
    const double len = f.normal.norm();
    f.normal = len > 0 ? Vec3(f.normal / len) : Vec3::Zero();
    f.offset = f.normal.dot(points[a]);
    faces.push_back(std::move(f));
    const std::size_t id = faces.size() - 1;
    edge_face[ekey(a, b)] = id;
    edge_face[ekey(b, c)] = id;
    edge_face[ekey(c, a)] = id;
    return id;
  };
  auto dist = [&](const Face& f, std::size_t p) { return f.normal.dot(points[p]) - f.offset; };

  {
    const Vec3 inner = (points[i0] + points[i1] + points[i2] + points[i3]) / 4.0;
    const std::array<std::array<std::size_t, 3>, 4> tets{{{i0, i1, i2}, {i0, i3, i1}, {i0, i2, i3}, {i1, i3, i2}}};
    const bool flip = ((points[i1] - points[i0]).cross(points[i2] - points[i0])).dot(inner - points[i0]) > 0;
    for (auto t : tets) {
      if (flip) std::swap(t[1], t[2]);
      add_face(t[0], t[1], t[2]);
    }
  }
  for (std::size_t p = 0; p < points.size(); ++p) {
    if (p == i0 || p == i1 || p == i2 || p == i3) continue;
    for (std::size_t f = 0; f < 4; ++f)
      if (dist(faces[f], p) > eps) {
        faces[f].outside.push_back(p);
        break;
      }
  }

  std::vector<std::size_t> pending{0, 1, 2, 3};
  std::vector<char> visible_mark;
  while (!pending.empty()) {
    const std::size_t fid = pending.back();
    pending.pop_back();
    if (!faces[fid].alive || faces[fid].outside.empty()) continue;

    std::size_t apex = faces[fid].outside.front();
    double far = dist(faces[fid], apex);
    for (std::size_t p : faces[fid].outside)
      if (const double d = dist(faces[fid], p); d > far || (d == far && p < apex)) far = d, apex = p;

    // Visible region grown from fid across shared edges.
    visible_mark.assign(faces.size(), 0);
    std::vector<std::size_t> visible{fid};
    visible_mark[fid] = 1;
    for (std::size_t k = 0; k < visible.size(); ++k) {
      const Face& f = faces[visible[k]];
      for (int e = 0; e < 3; ++e) {
        const auto it = edge_face.find(ekey(f.v[(e + 1) % 3], f.v[e]));
        if (it == edge_face.end()) continue;
        const std::size_t nb = it->second;
        if (visible_mark[nb] || !faces[nb].alive) continue;
        if (dist(faces[nb], apex) > eps) {
          visible_mark[nb] = 1;
          visible.push_back(nb);
        }
      }
    }
    // Horizon: edges of visible faces whose twin face is not visible.
    std::vector<std::pair<std::size_t, std::size_t>> horizon;
    std::vector<std::size_t> orphans;
    for (std::size_t vf : visible) {
      const Face& f = faces[vf];
      for (int e = 0; e < 3; ++e) {
        const std::size_t a = f.v[e], b = f.v[(e + 1) % 3];
        const auto it = edge_face.find(ekey(b, a));
        if (it != edge_face.end() && !visible_mark[it->second]) horizon.push_back({a, b});
      }
    }
    for (std::size_t vf : visible) {
      Face& f = faces[vf];
      f.alive = false;
      for (int e = 0; e < 3; ++e) {
        const auto it = edge_face.find(ekey(f.v[e], f.v[(e + 1) % 3]));
        if (it != edge_face.end() && it->second == vf) edge_face.erase(it);
      }
      for (std::size_t p : f.outside)
        if (p != apex) orphans.push_back(p);
      f.outside.clear();
      f.outside.shrink_to_fit();
    }
    std::vector<std::size_t> created;
    created.reserve(horizon.size());
    for (auto [a, b] : horizon) created.push_back(add_face(a, b, apex));
    std::sort(orphans.begin(), orphans.end());
    for (std::size_t p : orphans) {
      for (std::size_t nf : created)
        if (dist(faces[nf], p) > eps) {
          faces[nf].outside.push_back(p);
          break;
        }
    }
    for (std::size_t nf : created)
      if (!faces[nf].outside.empty()) pending.push_back(nf);
  }

  std::vector<Index> remap(points.size(), std::numeric_limits<Index>::max());
  std::vector<Vec3> verts;
  std::vector<Triangle> tris;
  for (const Face& f : faces) {
    if (!f.alive) continue;
    Triangle t;
    for (int k = 0; k < 3; ++k) {
      const std::size_t p = f.v[k];
      if (remap[p] == std::numeric_limits<Index>::max()) {
        remap[p] = static_cast<Index>(verts.size());
        verts.push_back(points[p]);
      }
      t[k] = remap[p];
    }
    tris.push_back(t);
  }
  return TriangleMesh(std::move(verts), std::move(tris));
}

inline TriangleMesh convex_hull(const std::vector<Vec3>& points) { return convex_hull(std::span<const Vec3>(points)); }

/// Signed distance of p to the hull's supporting planes (max over faces);
/// <= 0 inside.
inline double hull_plane_distance(const TriangleMesh& hull, const Vec3& p) {
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < hull.triangle_count(); ++t) {
    const Vec3 n = triangle_cross(hull, t);
    const double len = n.norm();
    if (len == 0.0) continue;
    worst = std::max(worst, n.dot(p - hull.corner(t, 0)) / len);
  }
  return worst;
}

}  // namespace sherdkit
