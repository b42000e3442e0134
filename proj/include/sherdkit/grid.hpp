#pragma once

#include "sherdkit/mesh.hpp"

#include <bit>
#include <filesystem>
#include <fstream>
#include <unordered_map>

namespace sherdkit {

/// Regular grid of scalars at nodes origin + spacing * (i, j, k), x fastest.
class ScalarGrid {
 public:
  using Dims = std::array<std::size_t, 3>;

  ScalarGrid() = default;
  ScalarGrid(Vec3 origin, double spacing, Dims dims, double fill = 0.0)
      : origin_(std::move(origin)), spacing_(spacing), dims_(dims) {
    require(spacing > 0.0 && std::isfinite(spacing), "grid spacing must be positive");
    require(is_finite(origin_), "grid origin must be finite");
    require(dims[0] > 0 && dims[1] > 0 && dims[2] > 0, "grid dimensions must be positive");
    values_.assign(dims[0] * dims[1] * dims[2], fill);
  }

  const Vec3& origin() const { return origin_; }
  double spacing() const { return spacing_; }
  const Dims& dims() const { return dims_; }
  std::size_t size() const { return values_.size(); }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const { return i + dims_[0] * (j + dims_[1] * k); }
  double& at(std::size_t i, std::size_t j, std::size_t k) { return values_[index(i, j, k)]; }
  double at(std::size_t i, std::size_t j, std::size_t k) const { return values_[index(i, j, k)]; }
  double& operator[](std::size_t n) { return values_[n]; }
  double operator[](std::size_t n) const { return values_[n]; }

  Vec3 position(std::size_t i, std::size_t j, std::size_t k) const {
    return origin_ + spacing_ * Vec3(static_cast<double>(i), static_cast<double>(j), static_cast<double>(k));
  }
  Box bounds() const {
    return {origin_, position(dims_[0] - 1, dims_[1] - 1, dims_[2] - 1)};
  }
  bool on_boundary(std::size_t i, std::size_t j, std::size_t k) const {
    return i == 0 || j == 0 || k == 0 || i + 1 == dims_[0] || j + 1 == dims_[1] || k + 1 == dims_[2];
  }

  /// Trilinear interpolation; points outside are clamped to the grid.
  double sample(const Vec3& p) const {
    const Vec3 g = (p - origin_) / spacing_;
    std::size_t base[3];
    double f[3];
    for (int a = 0; a < 3; ++a) {
      const double hi = static_cast<double>(dims_[a] - 1);
      const double x = std::clamp(g[a], 0.0, hi);
      const double fl = std::min(std::floor(x), std::max(hi - 1.0, 0.0));
      base[a] = static_cast<std::size_t>(fl);
      f[a] = dims_[a] > 1 ? x - fl : 0.0;
    }
    double v = 0.0;
    for (int c = 0; c < 8; ++c) {
      const std::size_t i = std::min(base[0] + (c & 1), dims_[0] - 1);
      const std::size_t j = std::min(base[1] + ((c >> 1) & 1), dims_[1] - 1);
      const std::size_t k = std::min(base[2] + ((c >> 2) & 1), dims_[2] - 1);
      const double w = ((c & 1) ? f[0] : 1 - f[0]) * (((c >> 1) & 1) ? f[1] : 1 - f[1]) * (((c >> 2) & 1) ? f[2] : 1 - f[2]);
      v += w * at(i, j, k);
    }
    return v;
  }

 private:
  Vec3 origin_ = Vec3::Zero();
  double spacing_ = 1.0;
  Dims dims_{0, 0, 0};
  std::vector<double> values_;
};

/// Writes `<stem>.raw` (little-endian float32, x fastest) and `<stem>.hdr`
/// (origin, spacing, dims as text).
inline void dump_grid(const ScalarGrid& g, const std::filesystem::path& stem) {
  auto raw_path = stem;
  raw_path += ".raw";
  auto hdr_path = stem;
  hdr_path += ".hdr";
  std::ofstream raw(raw_path, std::ios::binary);
  if (!raw) fail(ErrorKind::Io, "cannot write " + raw_path.string());
  std::vector<unsigned char> buf(4 * g.size());
  for (std::size_t n = 0; n < g.size(); ++n) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(g[n]));
    for (int b = 0; b < 4; ++b) buf[4 * n + b] = static_cast<unsigned char>(bits >> (8 * b));
  }
  raw.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  std::ofstream hdr(hdr_path);
  if (!hdr) fail(ErrorKind::Io, "cannot write " + hdr_path.string());
  char line[256];
  std::snprintf(line, sizeof line, "origin %.17g %.17g %.17g\nspacing %.17g\ndims %zu %zu %zu\ntype float32 little-endian x-fastest\n",
                g.origin().x(), g.origin().y(), g.origin().z(), g.spacing(), g.dims()[0], g.dims()[1], g.dims()[2]);
  hdr << line;
}

inline ScalarGrid load_grid_dump(const std::filesystem::path& stem) {
  auto raw_path = stem;
  raw_path += ".raw";
  auto hdr_path = stem;
  hdr_path += ".hdr";
  std::ifstream hdr(hdr_path);
  if (!hdr) fail(ErrorKind::Io, "cannot read " + hdr_path.string());
  std::string word;
  Vec3 origin;
  double spacing = 0;
  ScalarGrid::Dims dims{};
  hdr >> word >> origin.x() >> origin.y() >> origin.z() >> word >> spacing >> word >> dims[0] >> dims[1] >> dims[2];
  if (!hdr) throw ParseError("malformed grid header", 0);
  ScalarGrid g(origin, spacing, dims);
  std::ifstream raw(raw_path, std::ios::binary);
  std::vector<unsigned char> buf(4 * g.size());
  raw.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (raw.gcount() != static_cast<std::streamsize>(buf.size())) fail(ErrorKind::Io, "grid data is truncated");
  for (std::size_t n = 0; n < g.size(); ++n) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(buf[4 * n + b]) << (8 * b);
    g[n] = std::bit_cast<float>(bits);
  }
  return g;
}

struct Isosurface {
  TriangleMesh mesh;
  bool touches_boundary = false;  // some boundary node is inside: the surface may be open there
};

/// Isosurface by marching tetrahedra: each cell is split into the six
/// tetrahedra around its main diagonal, which tile the grid conformingly, so
/// the surface is closed and manifold wherever it stays off the boundary.
/// Nodes with value < iso are inside; triangles face away from them.
inline Isosurface extract_isosurface(const ScalarGrid& g, double iso) {
  const auto [nx, ny, nz] = g.dims();
  require(std::isfinite(iso), "iso value must be finite");
  Isosurface out;
  if (nx < 2 || ny < 2 || nz < 2) return out;

  for (std::size_t k = 0; k < nz; ++k)
    for (std::size_t j = 0; j < ny; ++j)
      for (std::size_t i = 0; i < nx; ++i)
        if (g.on_boundary(i, j, k) && g.at(i, j, k) < iso) out.touches_boundary = true;

  std::vector<Vec3> verts;
  std::vector<Triangle> tris;
  std::unordered_map<std::uint64_t, Index> edge_vertex;
  const std::uint64_t total = g.size();

  auto vertex_on = [&](std::size_t a, std::size_t b, double va, double vb) {
    if (a > b) {
      std::swap(a, b);
      std::swap(va, vb);
    }
    const std::uint64_t key = static_cast<std::uint64_t>(a) * total + b;
    auto it = edge_vertex.find(key);
    if (it != edge_vertex.end()) return it->second;
    const Vec3 qa = g.position(a % nx, (a / nx) % ny, a / (nx * ny));
    const Vec3 qb = g.position(b % nx, (b / nx) % ny, b / (nx * ny));
    const double t = std::clamp((iso - va) / (vb - va), 0.01, 0.99);
    verts.push_back(qa + t * (qb - qa));
    const auto id = static_cast<Index>(verts.size() - 1);
    edge_vertex.emplace(key, id);
    return id;
  };

  // Corner c of a cell is offset (c&1, c>>1&1, c>>2&1).
  static constexpr int kTets[6][4] = {{0, 1, 3, 7}, {0, 3, 2, 7}, {0, 2, 6, 7}, {0, 6, 4, 7}, {0, 4, 5, 7}, {0, 5, 1, 7}};

  for (std::size_t k = 0; k + 1 < nz; ++k)
    for (std::size_t j = 0; j + 1 < ny; ++j)
      for (std::size_t i = 0; i + 1 < nx; ++i) {
        std::size_t id[8];
        double val[8];
        bool any_in = false, any_out = false;
        for (int c = 0; c < 8; ++c) {
          id[c] = g.index(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1));
          val[c] = g[id[c]];
          (val[c] < iso ? any_in : any_out) = true;
        }
        if (!any_in || !any_out) continue;
        Vec3 pos[8];
        for (int c = 0; c < 8; ++c) pos[c] = g.position(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1));

        for (const auto& tet : kTets) {
          int in[4], outv[4], ni = 0, no = 0;
          for (int c : tet) (val[c] < iso ? in[ni++] : outv[no++]) = c;
          if (ni == 0 || no == 0) continue;
          Vec3 cin = Vec3::Zero(), cout = Vec3::Zero();
          for (int a = 0; a < ni; ++a) cin += pos[in[a]];
          for (int a = 0; a < no; ++a) cout += pos[outv[a]];
          const Vec3 outward = cout / no - cin / ni;
          auto edge = [&](int a, int b) { return vertex_on(id[a], id[b], val[a], val[b]); };
          auto emit = [&](Index a, Index b, Index c) {
            if (a == b || b == c || a == c) return;
            const Vec3 n = (verts[b] - verts[a]).cross(verts[c] - verts[a]);
            if (n.dot(outward) < 0) std::swap(b, c);
            tris.push_back({a, b, c});
          };
          if (ni == 1 || no == 1) {
            const int apex = ni == 1 ? in[0] : outv[0];
            const int* rest = ni == 1 ? outv : in;
            emit(edge(apex, rest[0]), edge(apex, rest[1]), edge(apex, rest[2]));
          } else {
            const Index a = edge(in[0], outv[0]), b = edge(in[0], outv[1]);
            const Index c = edge(in[1], outv[1]), d = edge(in[1], outv[0]);
            emit(a, b, c);
            emit(a, c, d);
          }
        }
      }
  out.mesh = TriangleMesh(std::move(verts), std::move(tris));
  return out;
}

}  // namespace sherdkit
