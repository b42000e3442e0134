#pragma once

#include "sherdkit/grid.hpp"
#include "sherdkit/measure.hpp"
#include "sherdkit/spatial.hpp"

namespace sherdkit {

/// Occupancy on a grid whose nodes are voxel centres; values are 0 or 1.
// Node values in [0, 1]; above 0.5 is material. Fractional values move the
// surface off the midpoint between centres.
struct VoxelSolid {
  ScalarGrid grid;

  double voxel_size() const { return grid.spacing(); }
  bool occupied(std::size_t n) const { return grid[n] > 0.5; }
  std::size_t count() const {
    std::size_t c = 0;
    for (double v : grid.values()) c += v > 0.5;
    return c;
  }
  double volume_mm3() const { return static_cast<double>(count()) * std::pow(voxel_size(), 3); }
};

/// Grid of voxel centres covering `bounds` with cubes of edge h.
inline ScalarGrid voxel_grid(const Box& bounds, double h) {
  require(h > 0 && std::isfinite(h), "voxel size must be positive");
  require(!bounds.empty(), "voxel bounds are empty");
  ScalarGrid::Dims dims{};
  for (int a = 0; a < 3; ++a) dims[a] = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(bounds.extent()[a] / h - 1e-9)));
  return ScalarGrid(bounds.min + Vec3::Constant(h / 2), h, dims, 0.0);
}

namespace voxel_detail {

inline bool grazing(const std::vector<RayHit>& hits) {
  constexpr double eps = 1e-9;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    const auto& h = hits[i];
    if (h.u < eps || h.v < eps || 1.0 - h.u - h.v < eps) return true;
    if (i > 0 && hits[i].t - hits[i - 1].t < 1e-12 * (1.0 + std::abs(h.t))) return true;
  }
  return false;
}

// Crossing parameters of a ray along +X through (y, z), starting at x0. Rays
// that graze an edge or vertex are retried with small deterministic offsets.
inline std::vector<double> row_crossings(const TriangleBvh& bvh, double x0, double y, double z, double scale) {
  for (int attempt = 0; attempt < 16; ++attempt) {
    const double jy = attempt == 0 ? 0.0 : scale * 1e-4 * std::sin(1.7 * attempt + 0.3);
    const double jz = attempt == 0 ? 0.0 : scale * 1e-4 * std::cos(2.3 * attempt + 0.1);
    const auto hits = bvh.raycast_all(Vec3(x0, y + jy, z + jz), Vec3::UnitX());
    if ((hits.size() % 2 == 0 && !grazing(hits)) || attempt == 15) {
      std::vector<double> xs;
      xs.reserve(hits.size());
      for (const auto& h : hits) xs.push_back(x0 + h.t);
      return xs;
    }
  }
  return {};
}

inline void require_closed(const TriangleMesh& m) {
  const MeshDiagnostics d = diagnose(m);
  if (!d.is_watertight) throw NotWatertightError(d);
}

}  // namespace voxel_detail

/// Point-in-solid by ray parity, with the same grazing retry as voxelize.
inline bool inside_solid(const TriangleBvh& bvh, const Vec3& p) {
  const Box b = bvh.mesh().bounds();
  if (!b.contains(p)) return false;
  const double x0 = b.min.x() - 1.0 - 0.01 * b.diagonal();
  const auto xs = voxel_detail::row_crossings(bvh, x0, p.y(), p.z(), std::max(b.diagonal(), 1e-9));
  std::size_t below = 0;
  for (double x : xs) below += x < p.x();
  return below % 2 == 1;
}

/// Voxels of edge `voxel_size` tiling `bounds`; a voxel is occupied when its
/// centre lies inside the closed mesh (ray parity along +X).
inline VoxelSolid voxelize(const TriangleMesh& mesh, double voxel_size, const Box& bounds) {
  voxel_detail::require_closed(mesh);
  VoxelSolid s{voxel_grid(bounds, voxel_size)};
  const Box mb = mesh.bounds();
  if (!mb.intersects(bounds)) return s;
  const TriangleBvh bvh(mesh);
  const auto [nx, ny, nz] = s.grid.dims();
  const double x0 = std::min(mb.min.x(), s.grid.origin().x()) - 1.0 - 0.01 * mb.diagonal();
  for (std::size_t k = 0; k < nz; ++k)
    for (std::size_t j = 0; j < ny; ++j) {
      const Vec3 p0 = s.grid.position(0, j, k);
      if (p0.y() < mb.min.y() || p0.y() > mb.max.y() || p0.z() < mb.min.z() || p0.z() > mb.max.z()) continue;
      const auto xs = voxel_detail::row_crossings(bvh, x0, p0.y(), p0.z(), mb.diagonal());
      std::size_t h = 0;
      for (std::size_t i = 0; i < nx; ++i) {
        const double x = s.grid.position(i, j, k).x();
        while (h < xs.size() && xs[h] < x) ++h;
        if (h % 2 == 1) s.grid.at(i, j, k) = 1.0;
      }
    }
  return s;
}

/// Squared Euclidean distance (in voxel units) from every node to the nearest
/// node flagged in `feature`; separable lower-envelope transform of
/// Felzenszwalb and Huttenlocher. Nodes with no feature anywhere get 1e20.
inline std::vector<double> squared_distance_transform(const std::vector<std::uint8_t>& feature, const ScalarGrid::Dims& dims) {
  constexpr double kFar = 1e20;
  const std::size_t n = dims[0] * dims[1] * dims[2];
  require(feature.size() == n, "feature mask does not match the grid");
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = feature[i] ? 0.0 : kFar;

  const std::size_t longest = std::max({dims[0], dims[1], dims[2]});
  std::vector<double> f(longest), out(longest), z(longest + 1);
  std::vector<std::size_t> v(longest);
  auto pass = [&](std::size_t len) {
    std::size_t k = 0;
    v[0] = 0;
    z[0] = -kFar;
    z[1] = kFar;
    auto meet = [&](std::size_t q, std::size_t p) {
      const auto dq = static_cast<double>(q), dp = static_cast<double>(p);
      return ((f[q] + dq * dq) - (f[p] + dp * dp)) / (2.0 * (dq - dp));
    };
    for (std::size_t q = 1; q < len; ++q) {
      double s = meet(q, v[k]);
      while (s <= z[k]) s = meet(q, v[--k]);
      ++k;
      v[k] = q;
      z[k] = s;
      z[k + 1] = kFar;
    }
    k = 0;
    for (std::size_t q = 0; q < len; ++q) {
      while (z[k + 1] < static_cast<double>(q)) ++k;
      const double diff = static_cast<double>(q) - static_cast<double>(v[k]);
      out[q] = std::min(kFar, diff * diff + f[v[k]]);
    }
  };

  const std::size_t stride[3] = {1, dims[0], dims[0] * dims[1]};
  for (int axis = 0; axis < 3; ++axis) {
    const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
    for (std::size_t j = 0; j < dims[a2]; ++j)
      for (std::size_t i = 0; i < dims[a1]; ++i) {
        const std::size_t base = i * stride[a1] + j * stride[a2];
        for (std::size_t q = 0; q < dims[axis]; ++q) f[q] = d[base + q * stride[axis]];
        pass(dims[axis]);
        for (std::size_t q = 0; q < dims[axis]; ++q) d[base + q * stride[axis]] = out[q];
      }
  }
  return d;
}

/// Closed surface around the occupied voxels (iso level 0.5 between centres).
inline TriangleMesh voxel_surface(const VoxelSolid& s) {
  const auto [nx, ny, nz] = s.grid.dims();
  // Pad by one empty layer so the surface cannot touch the grid boundary.
  ScalarGrid g(s.grid.origin() - Vec3::Constant(s.voxel_size()), s.voxel_size(), {nx + 2, ny + 2, nz + 2}, 0.0);
  for (std::size_t k = 0; k < nz; ++k)
    for (std::size_t j = 0; j < ny; ++j)
      for (std::size_t i = 0; i < nx; ++i) g.at(i + 1, j + 1, k + 1) = -s.grid.at(i, j, k);
  return extract_isosurface(g, -0.5).mesh;
}

}  // namespace sherdkit
