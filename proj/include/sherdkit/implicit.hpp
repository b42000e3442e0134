#pragma once

#include "sherdkit/grid.hpp"
#include "sherdkit/measure.hpp"
#include "sherdkit/profile.hpp"
#include "sherdkit/spatial.hpp"
#include "sherdkit/topology.hpp"

#include <Eigen/Dense>

#include <optional>
#include <queue>

namespace sherdkit {

struct OrientedPointCloud {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;

  std::size_t size() const { return points.size(); }
  void validate() const {
    require(points.size() == normals.size(), "point and normal counts differ");
    for (std::size_t i = 0; i < points.size(); ++i) {
      require(is_finite(points[i]), "point cloud contains a non-finite point");
      require(std::abs(normals[i].norm() - 1.0) <= 1e-6, "point cloud normals must be unit length");
    }
  }
};

struct NormalEstimate {
  OrientedPointCloud cloud;
  std::vector<std::uint8_t> borrowed;  // 1 where the neighbourhood was degenerate
  std::size_t components = 0;          // of the k-NN graph, each oriented on its own
};

/// PCA normals over k nearest neighbours, made consistent by propagation along
/// a minimum spanning tree of the k-NN graph (weight 1 - |ni . nj|). Each
/// connected piece of the graph is then flipped so most of its normals point
/// away from the centroid of the whole cloud.
inline NormalEstimate estimate_normals(std::span<const Vec3> points, std::size_t k) {
  if (k < 3 || points.size() <= k) fail(ErrorKind::InvalidArgument, "normal estimation needs 3 <= k < point count");
  const std::size_t n = points.size();
  const KdTree tree(std::vector<Vec3>(points.begin(), points.end()));

  NormalEstimate out;
  out.cloud.points.assign(points.begin(), points.end());
  out.cloud.normals.assign(n, Vec3::UnitZ());
  out.borrowed.assign(n, 0);
  std::vector<std::vector<Index>> adj(n);

  for (std::size_t i = 0; i < n; ++i) {
    const auto nb = tree.knn(points[i], k + 1);
    Vec3 c = Vec3::Zero();
    for (const auto& q : nb) c += points[q.index];
    c /= static_cast<double>(nb.size());
    Mat3 cov = Mat3::Zero();
    for (const auto& q : nb) cov += (points[q.index] - c) * (points[q.index] - c).transpose();
    const Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    const auto ev = es.eigenvalues();
    if (!(ev[2] > 0.0) || ev[1] <= 1e-10 * ev[2])
      out.borrowed[i] = 1;
    else
      out.cloud.normals[i] = es.eigenvectors().col(0).normalized();
    for (const auto& q : nb)
      if (q.index != i) {
        adj[i].push_back(q.index);
        adj[q.index].push_back(static_cast<Index>(i));
      }
  }
  for (auto& a : adj) {
    std::sort(a.begin(), a.end());
    a.erase(std::unique(a.begin(), a.end()), a.end());
  }

  std::vector<Vec3> good;
  std::vector<Index> good_id;
  for (std::size_t i = 0; i < n; ++i)
    if (!out.borrowed[i]) {
      good.push_back(points[i]);
      good_id.push_back(static_cast<Index>(i));
    }
  if (good.empty()) throw DegenerateError("every neighbourhood is degenerate; normals undefined", 1);
  if (good.size() < n) {
    const KdTree good_tree(good);
    for (std::size_t i = 0; i < n; ++i)
      if (out.borrowed[i]) out.cloud.normals[i] = out.cloud.normals[good_id[good_tree.nearest(points[i]).index]];
  }

  Vec3 centroid = Vec3::Zero();
  for (const Vec3& p : points) centroid += p;
  centroid /= static_cast<double>(n);

  auto& nrm = out.cloud.normals;
  std::vector<std::uint8_t> done(n, 0);
  using Item = std::tuple<double, Index, Index>;  // weight, node, parent
  for (std::size_t root = 0; root < n; ++root) {
    if (done[root]) continue;
    ++out.components;
    std::vector<Index> members;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    pq.emplace(0.0, static_cast<Index>(root), static_cast<Index>(root));
    while (!pq.empty()) {
      const auto [w, v, parent] = pq.top();
      pq.pop();
      if (done[v]) continue;
      done[v] = 1;
      members.push_back(v);
      if (v != parent && nrm[v].dot(nrm[parent]) < 0) nrm[v] = -nrm[v];
      for (Index u : adj[v])
        if (!done[u]) pq.emplace(1.0 - std::abs(nrm[v].dot(nrm[u])), u, v);
    }
    std::size_t away = 0;
    for (Index v : members)
      if (nrm[v].dot(points[v] - centroid) > 0) ++away;
    if (2 * away < members.size())
      for (Index v : members) nrm[v] = -nrm[v];
  }
  return out;
}

inline NormalEstimate estimate_normals(const std::vector<Vec3>& points, std::size_t k) {
  return estimate_normals(std::span<const Vec3>(points), k);
}

struct PoissonOptions {
  std::size_t grid = 128;   // nodes per axis
  double padding = 0.1;     // fraction of the largest bounding-box extent, per side
  double tolerance = 1e-6;  // relative residual
  int max_iterations = 5000;
  std::size_t area_neighbors = 8;
};

struct PoissonResult {
  ScalarGrid chi;         // about -1 inside, 0 outside
  ScalarGrid divergence;  // right-hand side of lap(chi) = div V
  double iso_value = 0.0;
  int iterations = 0;
  double relative_residual = 0.0;
  bool converged = false;
};

namespace implicit_detail {

// Zero-Dirichlet 7-point Laplacian (times h^2) on interior nodes.
inline void apply_laplacian(const ScalarGrid& g, const std::vector<double>& x, std::vector<double>& y) {
  const auto [nx, ny, nz] = g.dims();
  const std::size_t sy = nx, sz = nx * ny;
  std::fill(y.begin(), y.end(), 0.0);
  for (std::size_t k = 1; k + 1 < nz; ++k)
    for (std::size_t j = 1; j + 1 < ny; ++j) {
      const std::size_t row = g.index(0, j, k);
      for (std::size_t i = 1; i + 1 < nx; ++i) {
        const std::size_t c = row + i;
        y[c] = x[c - 1] + x[c + 1] + x[c - sy] + x[c + sy] + x[c - sz] + x[c + sz] - 6.0 * x[c];
      }
    }
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace implicit_detail

/// ||lap(chi) - div V|| / ||div V|| over interior nodes.
inline double poisson_residual(const PoissonResult& r) {
  const double h2 = r.chi.spacing() * r.chi.spacing();
  std::vector<double> lap(r.chi.size());
  implicit_detail::apply_laplacian(r.chi, r.chi.values(), lap);
  double num = 0.0, den = 0.0;
  const auto [nx, ny, nz] = r.chi.dims();
  for (std::size_t k = 1; k + 1 < nz; ++k)
    for (std::size_t j = 1; j + 1 < ny; ++j)
      for (std::size_t i = 1; i + 1 < nx; ++i) {
        const std::size_t c = r.chi.index(i, j, k);
        const double d = lap[c] / h2 - r.divergence[c];
        num += d * d;
        den += r.divergence[c] * r.divergence[c];
      }
  return den > 0 ? std::sqrt(num / den) : std::sqrt(num);
}

/// Indicator function from oriented points on a regular cubic grid: normals,
/// weighted by a local area estimate, are splatted trilinearly onto a
/// staggered vector field V; lap(chi) = div V is solved by conjugate gradients
/// with chi = 0 on the grid faces.
inline PoissonResult poisson_reconstruct(const OrientedPointCloud& cloud, const PoissonOptions& opt = {}) {
  cloud.validate();
  if (cloud.size() < 100) fail(ErrorKind::InvalidArgument, "poisson reconstruction needs at least 100 oriented points");
  if (opt.grid < 16) fail(ErrorKind::InvalidArgument, "poisson grid must be at least 16 nodes per axis");
  require(opt.padding >= 0.0, "padding must be non-negative");

  const Box box = bounding_box(cloud.points);
  const double extent = std::max(box.extent().maxCoeff(), 1e-9);
  const std::size_t n = opt.grid;
  const double h = extent * (1.0 + 2.0 * opt.padding) / static_cast<double>(n - 1);
  const Vec3 origin = box.center() - Vec3::Constant(h * static_cast<double>(n - 1) / 2.0);

  PoissonResult out;
  out.chi = ScalarGrid(origin, h, {n, n, n});
  out.divergence = ScalarGrid(origin, h, {n, n, n});

  // Per-point area from the distance to the m-th neighbour.
  const KdTree tree(cloud.points);
  const std::size_t m = std::min(opt.area_neighbors, cloud.size() - 1);
  std::vector<double> area(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto nb = tree.knn(cloud.points[i], m + 1);
    area[i] = kPi * nb.back().distance_sq / static_cast<double>(m);
  }

  // V component a lives at node + 0.5 e_a; stored at the node's index.
  std::array<std::vector<double>, 3> field;
  for (auto& f : field) f.assign(out.chi.size(), 0.0);
  const double inv_h3 = 1.0 / (h * h * h);
  for (std::size_t p = 0; p < cloud.size(); ++p) {
    for (int a = 0; a < 3; ++a) {
      Vec3 g = (cloud.points[p] - origin) / h;
      g[a] -= 0.5;
      std::array<long, 3> base{};
      std::array<double, 3> f{};
      for (int d = 0; d < 3; ++d) {
        base[d] = static_cast<long>(std::floor(g[d]));
        f[d] = g[d] - static_cast<double>(base[d]);
      }
      const double value = area[p] * cloud.normals[p][a] * inv_h3;
      for (int c = 0; c < 8; ++c) {
        const long i = base[0] + (c & 1), j = base[1] + ((c >> 1) & 1), k = base[2] + ((c >> 2) & 1);
        if (i < 0 || j < 0 || k < 0 || i >= static_cast<long>(n) || j >= static_cast<long>(n) || k >= static_cast<long>(n))
          continue;
        const double w = ((c & 1) ? f[0] : 1 - f[0]) * (((c >> 1) & 1) ? f[1] : 1 - f[1]) * (((c >> 2) & 1) ? f[2] : 1 - f[2]);
        field[a][out.chi.index(i, j, k)] += w * value;
      }
    }
  }

  const std::size_t sy = n, sz = n * n;
  std::vector<double> b(out.chi.size(), 0.0);
  for (std::size_t k = 1; k + 1 < n; ++k)
    for (std::size_t j = 1; j + 1 < n; ++j)
      for (std::size_t i = 1; i + 1 < n; ++i) {
        const std::size_t c = out.chi.index(i, j, k);
        const double div = (field[0][c] - field[0][c - 1] + field[1][c] - field[1][c - sy] + field[2][c] - field[2][c - sz]) / h;
        out.divergence[c] = div;
        b[c] = -div * h * h;  // system (-h^2 lap) chi = -h^2 div V
      }
  for (auto& f : field) std::vector<double>().swap(f);

  auto& x = out.chi.values();
  const double bnorm = std::sqrt(implicit_detail::dot(b, b));
  if (bnorm == 0.0) {
    out.converged = true;
  } else {
    std::vector<double> r = b, p = b, ap(x.size());
    double rr = implicit_detail::dot(r, r);
    // Unconverged runs return the last iterate, which has the smallest
    // energy-norm error of all iterates.
    for (int it = 0; it < opt.max_iterations; ++it) {
      implicit_detail::apply_laplacian(out.chi, p, ap);
      for (double& v : ap) v = -v;
      const double alpha = rr / implicit_detail::dot(p, ap);
      for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] += alpha * p[i];
        r[i] -= alpha * ap[i];
      }
      const double rr_new = implicit_detail::dot(r, r);
      out.iterations = it + 1;
      if (std::sqrt(rr_new) / bnorm <= opt.tolerance) {
        out.converged = true;
        break;
      }
      const double beta = rr_new / rr;
      for (std::size_t i = 0; i < x.size(); ++i) p[i] = r[i] + beta * p[i];
      rr = rr_new;
    }
  }
  out.relative_residual = poisson_residual(out);

  KahanSum iso;
  for (const Vec3& p : cloud.points) iso.add(out.chi.sample(p));
  out.iso_value = iso.value() / static_cast<double>(cloud.size());
  return out;
}

enum class SheetSelection { All, Inner, Outer };

inline SheetSelection parse_sheet_selection(const std::string& s) {
  if (s == "all") return SheetSelection::All;
  if (s == "inner") return SheetSelection::Inner;
  if (s == "outer") return SheetSelection::Outer;
  fail(ErrorKind::InvalidArgument, "unknown sheet selection '" + s + "' (expected all, inner or outer)");
}

struct ReconstructionSettings {
  std::size_t normal_neighbors = 10;
  PoissonOptions poisson;
  /// Which wall of a thick vessel to rebuild. Inner keeps surface points whose
  /// mesh normal faces the pooled centroid, giving the capacity surface;
  /// outer keeps the rest.
  SheetSelection sheet = SheetSelection::All;
  /// Inner sheet only: close the open mouth with a disk in the plane of the
  /// rim, so the volume is the capacity to the brim. The rim circle is fitted
  /// to the inner points within `mouth_band` mm of the highest one (+Z up).
  bool cap_mouth = true;
  double mouth_band = 5.0;
};

struct Reconstruction {
  TriangleMesh mesh;
  double volume_cm3 = 0.0;
  std::size_t point_count = 0;
  std::size_t normal_components = 0;
  int cg_iterations = 0;
  double cg_residual = 0.0;
  bool cg_converged = false;
  bool touches_boundary = false;
  std::optional<Circle3D> mouth;  // the capped rim, when a cap was added
};

namespace implicit_detail {

struct MouthCap {
  Circle3D rim;
  std::vector<Vec3> points;
  Vec3 normal;  // away from the cavity
};

/// Points on the disk bounded by the fitted rim, in the plane through the
/// highest rim point, on a square lattice at the
/// sample spacing, kept half a spacing inside the rim. Their normals are set
/// directly rather than estimated: propagation across the rim crease is
/// unreliable.
inline std::optional<MouthCap> mouth_cap(std::span<const Vec3> pts, double band) {
  double top = -std::numeric_limits<double>::infinity();
  Vec3 centroid = Vec3::Zero();
  for (const Vec3& p : pts) {
    top = std::max(top, p.z());
    centroid += p;
  }
  centroid /= static_cast<double>(pts.size());
  std::vector<Vec3> ring;
  for (const Vec3& p : pts)
    if (p.z() >= top - band) ring.push_back(p);
  if (ring.size() < 3) return std::nullopt;
  MouthCap cap;
  cap.rim = fit_circle(ring).circle;
  const double h = median_spacing(KdTree(std::vector<Vec3>(pts.begin(), pts.end())));
  const double r = cap.rim.radius - 0.5 * h;
  if (!(h > 0) || !(r > h)) return std::nullopt;
  cap.normal = cap.rim.normal.dot(cap.rim.center - centroid) >= 0 ? cap.rim.normal : Vec3(-cap.rim.normal);
  // The fit centres itself in the band; the cap belongs at the brim.
  double lift = 0.0;
  for (const Vec3& p : ring) lift = std::max(lift, (p - cap.rim.center).dot(cap.normal));
  cap.rim.center += lift * cap.normal;
  const auto [u, w] = profile_detail::axis_frame(cap.rim.normal);
  const int n = static_cast<int>(std::ceil(r / h));
  for (int i = -n; i <= n; ++i)
    for (int k = -n; k <= n; ++k)
      if (std::hypot(i * h, k * h) < r) cap.points.push_back(cap.rim.center + i * h * u + k * h * w);
  return cap;
}

}  // namespace implicit_detail

inline Reconstruction reconstruct_vessel(std::span<const TriangleMesh> fragments, const ReconstructionSettings& s = {}) {
  if (fragments.empty()) fail(ErrorKind::InvalidArgument, "reconstruction needs at least one fragment");
  Vec3 c = Vec3::Zero();
  std::size_t total = 0;
  for (const auto& f : fragments) {
    for (const Vec3& p : f.vertices()) c += p;
    total += f.vertex_count();
  }
  if (total == 0) fail(ErrorKind::InvalidArgument, "reconstruction needs non-empty fragments");
  c /= static_cast<double>(total);
  // A vertex belongs to a sheet when any face around it does; faces are
  // classed by whether their normal faces the pooled centroid. Vertex
  // normals would misclass the corners at the lip.
  std::vector<Vec3> pts;
  for (const auto& f : fragments) {
    if (s.sheet == SheetSelection::All) {
      pts.insert(pts.end(), f.vertices().begin(), f.vertices().end());
      continue;
    }
    std::vector<std::uint8_t> keep(f.vertex_count(), 0);
    for (std::size_t t = 0; t < f.triangle_count(); ++t) {
      const Vec3 n = (f.corner(t, 1) - f.corner(t, 0)).cross(f.corner(t, 2) - f.corner(t, 0));
      const bool inward = n.dot(triangle_centroid(f, t) - c) < 0;
      if (inward == (s.sheet == SheetSelection::Inner))
        for (int k = 0; k < 3; ++k) keep[f.triangles()[t][k]] = 1;
    }
    for (std::size_t i = 0; i < keep.size(); ++i)
      if (keep[i]) pts.push_back(f.vertex(static_cast<Index>(i)));
  }
  if (pts.empty()) fail(ErrorKind::EmptyResult, "sheet selection kept no points");
  auto normals = estimate_normals(pts, s.normal_neighbors);
  std::optional<implicit_detail::MouthCap> cap;
  if (s.sheet == SheetSelection::Inner && s.cap_mouth) cap = implicit_detail::mouth_cap(pts, s.mouth_band);
  if (cap) {
    normals.cloud.points.insert(normals.cloud.points.end(), cap->points.begin(), cap->points.end());
    normals.cloud.normals.insert(normals.cloud.normals.end(), cap->points.size(), cap->normal);
  }
  const auto solve = poisson_reconstruct(normals.cloud, s.poisson);
  const auto iso = extract_isosurface(solve.chi, solve.iso_value);
  if (iso.mesh.empty()) fail(ErrorKind::EmptyResult, "reconstruction produced no surface");

  Reconstruction out;
  out.mesh = largest_component(iso.mesh);
  out.volume_cm3 = enclosed_volume(out.mesh);
  out.point_count = normals.cloud.size();
  out.normal_components = normals.components;
  out.cg_iterations = solve.iterations;
  out.cg_residual = solve.relative_residual;
  out.cg_converged = solve.converged;
  out.touches_boundary = iso.touches_boundary;
  if (cap) out.mouth = cap->rim;
  return out;
}

inline Reconstruction reconstruct_vessel(const std::vector<TriangleMesh>& fragments, const ReconstructionSettings& s = {}) {
  return reconstruct_vessel(std::span<const TriangleMesh>(fragments), s);
}

}  // namespace sherdkit
