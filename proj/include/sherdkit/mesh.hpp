#pragma once

#include "sherdkit/core.hpp"

#include <span>

namespace sherdkit {

using Triangle = std::array<Index, 3>;

/// Indexed triangle surface. Vertex coordinates are millimetres, indices are
/// 0-based. The invariants (indices in range, no repeated corner, finite
/// coordinates, unit normals when present) are checked on construction, and
/// a constructed mesh is never modified in place: operations return new meshes.
class TriangleMesh {
 public:
  TriangleMesh() = default;

  TriangleMesh(std::vector<Vec3> vertices, std::vector<Triangle> triangles, std::vector<Vec3> normals = {})
      : vertices_(std::move(vertices)), triangles_(std::move(triangles)), normals_(std::move(normals)) {
    validate();
  }

  const std::vector<Vec3>& vertices() const { return vertices_; }
  const std::vector<Triangle>& triangles() const { return triangles_; }
  const std::vector<Vec3>& normals() const { return normals_; }
  bool has_normals() const { return !normals_.empty(); }

  std::size_t vertex_count() const { return vertices_.size(); }
  std::size_t triangle_count() const { return triangles_.size(); }
  bool empty() const { return triangles_.empty(); }

  const Vec3& vertex(Index i) const { return vertices_[i]; }
  const Triangle& triangle(std::size_t t) const { return triangles_[t]; }
  const Vec3& corner(std::size_t t, int k) const { return vertices_[triangles_[t][k]]; }

  Box bounds() const { return bounding_box(vertices_); }

  friend bool operator==(const TriangleMesh& a, const TriangleMesh& b) {
    return a.vertices_ == b.vertices_ && a.triangles_ == b.triangles_ && a.normals_ == b.normals_;
  }

 private:
  void validate() const {
    const auto n = vertices_.size();
    if (n > std::numeric_limits<Index>::max()) fail(ErrorKind::InvalidArgument, "too many vertices");
    for (std::size_t i = 0; i < n; ++i)
      if (!is_finite(vertices_[i]))
        fail(ErrorKind::InvalidArgument, "vertex " + std::to_string(i) + " has a non-finite coordinate");
    for (std::size_t t = 0; t < triangles_.size(); ++t) {
      const auto& tri = triangles_[t];
      for (Index v : tri)
        if (v >= n)
          fail(ErrorKind::InvalidArgument,
               "triangle " + std::to_string(t) + " references vertex " + std::to_string(v) + " of " + std::to_string(n));
      if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2])
        fail(ErrorKind::InvalidArgument, "triangle " + std::to_string(t) + " repeats a vertex");
    }
    if (!normals_.empty()) {
      if (normals_.size() != n) fail(ErrorKind::InvalidArgument, "normal count does not match vertex count");
      for (const Vec3& nv : normals_)
        if (!is_finite(nv) || std::abs(nv.norm() - 1.0) > 1e-6)
          fail(ErrorKind::InvalidArgument, "normals must be unit length");
    }
  }

  std::vector<Vec3> vertices_;
  std::vector<Triangle> triangles_;
  std::vector<Vec3> normals_;
};

// Area-weighted normal direction (unnormalized, length = 2 * area).
inline Vec3 triangle_cross(const TriangleMesh& m, std::size_t t) {
  const Vec3& a = m.corner(t, 0);
  return (m.corner(t, 1) - a).cross(m.corner(t, 2) - a);
}

inline double triangle_area(const TriangleMesh& m, std::size_t t) { return 0.5 * triangle_cross(m, t).norm(); }

inline Vec3 triangle_centroid(const TriangleMesh& m, std::size_t t) {
  return (m.corner(t, 0) + m.corner(t, 1) + m.corner(t, 2)) / 3.0;
}

inline double surface_area(const TriangleMesh& m) {
  KahanSum s;
  for (std::size_t t = 0; t < m.triangle_count(); ++t) s.add(triangle_area(m, t));
  return s.value();
}

/// Area-weighted vertex normals from the triangle winding. Vertices with no
/// incident area get +Z.
inline std::vector<Vec3> vertex_normals(const TriangleMesh& m) {
  std::vector<Vec3> acc(m.vertex_count(), Vec3::Zero());
  for (std::size_t t = 0; t < m.triangle_count(); ++t) {
    const Vec3 n = triangle_cross(m, t);
    for (Index v : m.triangle(t)) acc[v] += n;
  }
  for (Vec3& n : acc) {
    const double len = n.norm();
    n = len > 0.0 ? Vec3(n / len) : Vec3::UnitZ();
  }
  return acc;
}

inline TriangleMesh with_vertex_normals(const TriangleMesh& m) {
  return TriangleMesh(m.vertices(), m.triangles(), vertex_normals(m));
}

/// Applies an affine map to positions; normals follow the linear part.
inline TriangleMesh transformed(const TriangleMesh& m, const Eigen::Affine3d& xf) {
  std::vector<Vec3> v;
  v.reserve(m.vertex_count());
  for (const Vec3& p : m.vertices()) v.push_back(xf * p);
  std::vector<Vec3> n;
  if (m.has_normals()) {
    const Mat3 nm = xf.linear().inverse().transpose();
    n.reserve(m.vertex_count());
    for (const Vec3& q : m.normals()) n.push_back((nm * q).normalized());
  }
  return TriangleMesh(std::move(v), m.triangles(), std::move(n));
}

inline TriangleMesh translated(const TriangleMesh& m, const Vec3& d) {
  return transformed(m, Eigen::Affine3d(Eigen::Translation3d(d)));
}

inline TriangleMesh flipped(const TriangleMesh& m) {
  std::vector<Triangle> tris = m.triangles();
  for (auto& t : tris) std::swap(t[1], t[2]);
  std::vector<Vec3> n = m.normals();
  for (auto& q : n) q = -q;
  return TriangleMesh(m.vertices(), std::move(tris), std::move(n));
}

/// Union of vertex and triangle lists, indices of later meshes offset.
inline TriangleMesh concatenate(std::span<const TriangleMesh> parts) {
  std::vector<Vec3> v;
  std::vector<Triangle> t;
  std::vector<Vec3> n;
  const bool normals = !parts.empty() && std::all_of(parts.begin(), parts.end(), [](const TriangleMesh& m) {
    return m.has_normals() || m.vertex_count() == 0;
  });
  for (const auto& m : parts) {
    const auto offset = static_cast<Index>(v.size());
    v.insert(v.end(), m.vertices().begin(), m.vertices().end());
    if (normals) n.insert(n.end(), m.normals().begin(), m.normals().end());
    for (Triangle tri : m.triangles()) {
      for (Index& i : tri) i += offset;
      t.push_back(tri);
    }
  }
  return TriangleMesh(std::move(v), std::move(t), std::move(n));
}

inline TriangleMesh concatenate(const TriangleMesh& a, const TriangleMesh& b) {
  const std::array<TriangleMesh, 2> parts{a, b};
  return concatenate(std::span<const TriangleMesh>(parts));
}

/// Sub-mesh made of the selected triangles; unreferenced vertices dropped and
/// the survivors renumbered in their original order.
inline TriangleMesh extract_triangles(const TriangleMesh& m, std::span<const std::size_t> selected) {
  constexpr Index kUnset = std::numeric_limits<Index>::max();
  std::vector<Index> remap(m.vertex_count(), kUnset);
  std::vector<char> used(m.vertex_count(), 0);
  for (std::size_t t : selected)
    for (Index v : m.triangle(t)) used[v] = 1;
  std::vector<Vec3> v;
  std::vector<Vec3> n;
  for (std::size_t i = 0; i < m.vertex_count(); ++i) {
    if (!used[i]) continue;
    remap[i] = static_cast<Index>(v.size());
    v.push_back(m.vertices()[i]);
    if (m.has_normals()) n.push_back(m.normals()[i]);
  }
  std::vector<Triangle> tris;
  tris.reserve(selected.size());
  for (std::size_t t : selected) {
    const auto& tri = m.triangle(t);
    tris.push_back({remap[tri[0]], remap[tri[1]], remap[tri[2]]});
  }
  return TriangleMesh(std::move(v), std::move(tris), std::move(n));
}

}  // namespace sherdkit
