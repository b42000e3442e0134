#pragma once

#include "sherdkit/measure.hpp"
#include "sherdkit/random.hpp"
#include "sherdkit/register.hpp"

namespace sherdkit {

struct ProfileRow {
  double height;          // mm
  double outer_radius;    // mm
  double wall_thickness;  // mm
  friend bool operator==(const ProfileRow&, const ProfileRow&) = default;
};

/// Vessel of revolution about +Z. The wall is `wall_thickness` thick
/// radially; the base is as thick as the first row's wall.
struct VesselProfile {
  std::vector<ProfileRow> control;
  int segments = 128;
};

inline void validate(const VesselProfile& p) {
  if (p.control.size() < 2) fail(ErrorKind::InvalidArgument, "vessel profile needs at least 2 rows");
  if (p.segments < 8) fail(ErrorKind::InvalidArgument, "vessel profile needs at least 8 segments");
  for (std::size_t i = 0; i < p.control.size(); ++i) {
    const auto& r = p.control[i];
    require(std::isfinite(r.height) && std::isfinite(r.outer_radius) && std::isfinite(r.wall_thickness),
            "vessel profile values must be finite");
    if (!(r.wall_thickness > 0)) fail(ErrorKind::InvalidArgument, "wall thickness must be positive");
    if (!(r.outer_radius > r.wall_thickness))
      fail(ErrorKind::InvalidArgument, "inner radius must stay positive (outer radius > wall thickness)");
    if (i > 0 && !(r.height > p.control[i - 1].height))
      fail(ErrorKind::InvalidArgument, "vessel profile heights must increase strictly");
  }
  if (!(p.control.front().height + p.control.front().wall_thickness < p.control.back().height))
    fail(ErrorKind::InvalidArgument, "base is thicker than the vessel is tall");
}

namespace synth_detail {

// Linear interpolation of a row field at height z (clamped to the profile).
inline double lerp_at(const VesselProfile& p, double z, double ProfileRow::*field) {
  const auto& c = p.control;
  if (z <= c.front().height) return c.front().*field;
  if (z >= c.back().height) return c.back().*field;
  std::size_t i = 1;
  while (c[i].height < z) ++i;
  const double t = (z - c[i - 1].height) / (c[i].height - c[i - 1].height);
  return (1 - t) * (c[i - 1].*field) + t * (c[i].*field);
}

inline double inner_radius(const VesselProfile& p, double z) {
  return lerp_at(p, z, &ProfileRow::outer_radius) - lerp_at(p, z, &ProfileRow::wall_thickness);
}

// pi * integral of r(z)^2 for r linear on [z0, z1].
inline double frustum(double z0, double z1, double r0, double r1) {
  return kPi * (z1 - z0) * (r0 * r0 + r0 * r1 + r1 * r1) / 3.0;
}

inline double volume_between(const VesselProfile& p, double z0, double z1, double (*radius)(const VesselProfile&, double)) {
  std::vector<double> cuts{z0};
  for (const auto& r : p.control)
    if (r.height > z0 && r.height < z1) cuts.push_back(r.height);
  cuts.push_back(z1);
  double v = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) v += frustum(cuts[i], cuts[i + 1], radius(p, cuts[i]), radius(p, cuts[i + 1]));
  return v;
}

inline double outer_r(const VesselProfile& p, double z) { return lerp_at(p, z, &ProfileRow::outer_radius); }

// Heights from z0 to z1 including every control height between, with steps no
// longer than ds.
inline std::vector<double> wall_heights(const VesselProfile& p, double z0, double z1, double ds) {
  std::vector<double> knots{z0};
  for (const auto& r : p.control)
    if (r.height > z0 && r.height < z1) knots.push_back(r.height);
  knots.push_back(z1);
  std::vector<double> out{z0};
  for (std::size_t i = 0; i + 1 < knots.size(); ++i) {
    const int n = std::max(1, static_cast<int>(std::ceil((knots[i + 1] - knots[i]) / ds)));
    for (int k = 1; k <= n; ++k) out.push_back(knots[i] + (knots[i + 1] - knots[i]) * k / n);
  }
  return out;
}

// Appends radial samples from ra to rb (exclusive of ra) at height z.
inline void radial_run(std::vector<Eigen::Vector2d>& poly, double ra, double rb, double z, double ds) {
  const int n = std::max(1, static_cast<int>(std::ceil(std::abs(rb - ra) / ds)));
  for (int k = 1; k <= n; ++k) poly.emplace_back(ra + (rb - ra) * k / n, z);
}

/// Closed surface from rotating an open (rho, z) polyline whose first and
/// last points lie on the axis. Wound outward.
inline TriangleMesh revolve_generatrix(const std::vector<Eigen::Vector2d>& poly, int segments) {
  require(poly.size() >= 3 && poly.front().x() == 0.0 && poly.back().x() == 0.0, "generatrix must start and end on the axis");
  const auto seg = static_cast<Index>(segments);
  std::vector<Vec3> v;
  v.emplace_back(0, 0, poly.front().y());
  for (std::size_t i = 1; i + 1 < poly.size(); ++i)
    for (Index j = 0; j < seg; ++j) {
      const double th = 2.0 * kPi * j / segments;
      v.emplace_back(poly[i].x() * std::cos(th), poly[i].x() * std::sin(th), poly[i].y());
    }
  const auto last = static_cast<Index>(v.size());
  v.emplace_back(0, 0, poly.back().y());
  const std::size_t rings = poly.size() - 2;
  auto id = [&](std::size_t ring, Index j) { return static_cast<Index>(1 + ring * seg + (j % seg)); };
  std::vector<Triangle> t;
  for (Index j = 0; j < seg; ++j) t.push_back({0, id(0, j + 1), id(0, j)});
  for (std::size_t r = 0; r + 1 < rings; ++r)
    for (Index j = 0; j < seg; ++j) {
      t.push_back({id(r, j), id(r, j + 1), id(r + 1, j + 1)});
      t.push_back({id(r, j), id(r + 1, j + 1), id(r + 1, j)});
    }
  for (Index j = 0; j < seg; ++j) t.push_back({last, id(rings - 1, j), id(rings - 1, j + 1)});
  TriangleMesh m(std::move(v), std::move(t));
  return signed_volume_mm3(m) < 0 ? flipped(m) : m;
}

}  // namespace synth_detail

struct Vessel {
  TriangleMesh mesh;                   // closed ceramic body
  double enclosed_volume_cm3 = 0.0;    // capacity: the cavity up to the rim
  double wall_volume_cm3 = 0.0;        // the ceramic itself
  double outer_volume_cm3 = 0.0;       // everything inside the outer surface
};

/// Double-walled vessel: outer surface, inner surface offset inward by the
/// wall thickness, flat rim and flat base. Sampled along the profile about as
/// finely as around the circumference.
inline Vessel generate_vessel(const VesselProfile& p) {
  validate(p);
  const double z0 = p.control.front().height, top = p.control.back().height;
  const double floor = z0 + p.control.front().wall_thickness;
  for (const auto& r : p.control)
    if (r.height >= floor && !(r.outer_radius - r.wall_thickness > 0))
      fail(ErrorKind::InvalidArgument, "inner radius is not positive");
  if (!(synth_detail::inner_radius(p, floor) > 0)) fail(ErrorKind::InvalidArgument, "inner radius is not positive at the floor");

  double rmax = 0;
  for (const auto& r : p.control) rmax = std::max(rmax, r.outer_radius);
  const double ds = 2.0 * kPi * rmax / p.segments;

  std::vector<Eigen::Vector2d> poly{{0.0, z0}};
  synth_detail::radial_run(poly, 0.0, synth_detail::outer_r(p, z0), z0, ds);
  const auto outer_z = synth_detail::wall_heights(p, z0, top, ds);
  for (std::size_t i = 1; i < outer_z.size(); ++i) poly.emplace_back(synth_detail::outer_r(p, outer_z[i]), outer_z[i]);
  synth_detail::radial_run(poly, synth_detail::outer_r(p, top), synth_detail::inner_radius(p, top), top, ds);
  auto inner_z = synth_detail::wall_heights(p, floor, top, ds);
  for (std::size_t i = inner_z.size() - 1; i-- > 0;) poly.emplace_back(synth_detail::inner_radius(p, inner_z[i]), inner_z[i]);
  synth_detail::radial_run(poly, synth_detail::inner_radius(p, floor), 0.0, floor, ds);

  Vessel out;
  out.mesh = synth_detail::revolve_generatrix(poly, p.segments);
  const double cavity = synth_detail::volume_between(p, floor, top, synth_detail::inner_radius);
  const double outer = synth_detail::volume_between(p, z0, top, synth_detail::outer_r);
  out.enclosed_volume_cm3 = mm3_to_cm3(cavity);
  out.outer_volume_cm3 = mm3_to_cm3(outer);
  out.wall_volume_cm3 = mm3_to_cm3(outer - cavity);
  return out;
}

/// The cavity as a closed solid (inner wall, floor, and a lid at the rim), for
/// measuring capacity on a mesh.
inline TriangleMesh cavity_mesh(const VesselProfile& p) {
  validate(p);
  const double top = p.control.back().height, floor = p.control.front().height + p.control.front().wall_thickness;
  double rmax = 0;
  for (const auto& r : p.control) rmax = std::max(rmax, r.outer_radius);
  const double ds = 2.0 * kPi * rmax / p.segments;
  std::vector<Eigen::Vector2d> poly{{0.0, floor}};
  synth_detail::radial_run(poly, 0.0, synth_detail::inner_radius(p, floor), floor, ds);
  const auto zs = synth_detail::wall_heights(p, floor, top, ds);
  for (std::size_t i = 1; i < zs.size(); ++i) poly.emplace_back(synth_detail::inner_radius(p, zs[i]), zs[i]);
  synth_detail::radial_run(poly, synth_detail::inner_radius(p, top), 0.0, top, ds);
  return synth_detail::revolve_generatrix(poly, p.segments);
}

struct FracturePlan {
  int seed_count = 8;
  std::uint64_t rng_seed = 1;
  double noise_sigma = 0.0;      // mm, along vertex normals
  bool scatter = false;
  double scatter_range = 200.0;  // mm, translation drawn from [-range, range]^3
  double coverage = 1.0;         // fraction of the surface area kept; the rest is one lost patch
};

struct Sherd {
  TriangleMesh mesh;
  RigidTransform true_pose;                 // maps the sherd's place on the vessel to where it lies now
  std::vector<std::size_t> source_triangles;  // indices into the fractured mesh
};

namespace synth_detail {

inline Vec3 sample_on_triangle(const TriangleMesh& m, std::size_t t, Rng& rng) {
  const double a = rng.uniform(), b = rng.uniform();
  const double s = std::sqrt(a);
  return (1 - s) * m.corner(t, 0) + s * (1 - b) * m.corner(t, 1) + s * b * m.corner(t, 2);
}

inline std::size_t pick_by_area(const std::vector<double>& cumulative, Rng& rng) {
  const double x = rng.uniform() * cumulative.back();
  const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), x);
  return std::min(static_cast<std::size_t>(it - cumulative.begin()), cumulative.size() - 1);
}

inline Mat3 random_rotation(Rng& rng) {
  Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  q.normalize();
  return q.toRotationMatrix();
}

}  // namespace synth_detail

/// Surface-Voronoi fracture: seeds drawn uniformly by area, each triangle goes
/// to the seed nearest its centroid. Sherds are open shells. A seed left with
/// no triangle yields no sherd.
inline std::vector<Sherd> fracture(const TriangleMesh& mesh, const FracturePlan& plan) {
  if (plan.seed_count < 2) fail(ErrorKind::InvalidArgument, "fracture needs at least 2 seeds");
  if (static_cast<std::size_t>(plan.seed_count) > mesh.triangle_count())
    fail(ErrorKind::InvalidArgument, "more fracture seeds than triangles");
  require(plan.noise_sigma >= 0.0, "noise sigma must be non-negative");
  require(plan.coverage > 0.0 && plan.coverage <= 1.0, "coverage must lie in (0, 1]");
  Rng rng(plan.rng_seed);
  // Separate stream so that scattering does not change the noise.
  Rng scatter_rng(plan.rng_seed ^ 0x9E3779B97F4A7C15ULL);

  const std::size_t nt = mesh.triangle_count();
  std::vector<Vec3> centroid(nt);
  std::vector<double> area(nt);
  for (std::size_t t = 0; t < nt; ++t) {
    centroid[t] = triangle_centroid(mesh, t);
    area[t] = triangle_area(mesh, t);
  }
  auto cumulative_of = [&](const std::vector<std::uint8_t>& alive) {
    std::vector<double> c(nt);
    double s = 0.0;
    for (std::size_t t = 0; t < nt; ++t) c[t] = (s += alive[t] ? area[t] : 0.0);
    return c;
  };

  std::vector<std::uint8_t> alive(nt, 1);
  if (plan.coverage < 1.0) {
    const auto cum = cumulative_of(alive);
    const Vec3 centre = synth_detail::sample_on_triangle(mesh, synth_detail::pick_by_area(cum, rng), rng);
    std::vector<std::size_t> order(nt);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return (centroid[a] - centre).squaredNorm() < (centroid[b] - centre).squaredNorm();
    });
    double lost = 0.0;
    const double target = (1.0 - plan.coverage) * cum.back();
    for (std::size_t t : order) {
      if (lost >= target) break;
      alive[t] = 0;
      lost += area[t];
    }
  }

  const auto cum = cumulative_of(alive);
  if (!(cum.back() > 0)) fail(ErrorKind::EmptyResult, "nothing left to fracture");
  std::vector<Vec3> seeds;
  for (int s = 0; s < plan.seed_count; ++s)
    seeds.push_back(synth_detail::sample_on_triangle(mesh, synth_detail::pick_by_area(cum, rng), rng));
  const KdTree seed_tree(seeds);

  std::vector<std::vector<std::size_t>> parts(seeds.size());
  for (std::size_t t = 0; t < nt; ++t)
    if (alive[t]) parts[seed_tree.nearest(centroid[t]).index].push_back(t);

  const auto normals = vertex_normals(mesh);
  std::vector<Sherd> out;
  for (auto& part : parts) {
    if (part.empty()) continue;
    Sherd s;
    s.source_triangles = part;
    // Compact the vertices, remembering where each came from for its normal.
    std::vector<Index> remap(mesh.vertex_count(), std::numeric_limits<Index>::max());
    std::vector<Vec3> v;
    std::vector<Triangle> tris;
    for (std::size_t t : part) {
      Triangle tri{};
      for (int k = 0; k < 3; ++k) {
        const Index src = mesh.triangle(t)[k];
        if (remap[src] == std::numeric_limits<Index>::max()) {
          remap[src] = static_cast<Index>(v.size());
          Vec3 p = mesh.vertex(src);
          if (plan.noise_sigma > 0) p += rng.normal(0.0, plan.noise_sigma) * normals[src];
          v.push_back(p);
        }
        tri[k] = remap[src];
      }
      tris.push_back(tri);
    }
    TriangleMesh piece(std::move(v), std::move(tris));
    if (plan.scatter) {
      const Mat3 r = synth_detail::random_rotation(scatter_rng);
      const double w = plan.scatter_range;
      const Vec3 d(scatter_rng.uniform(-w, w), scatter_rng.uniform(-w, w), scatter_rng.uniform(-w, w));
      s.true_pose = {r, d};
      piece = transformed(piece, s.true_pose);
    }
    s.mesh = std::move(piece);
    out.push_back(std::move(s));
  }
  return out;
}

/// Splits a sherd of a thick vessel with axis `direction` (through the
/// origin) into the sheet facing the axis and the sheet facing away.
/// Triangles whose normal is within 60 degrees of the axis (rim, base) go to
/// neither.
inline std::pair<TriangleMesh, TriangleMesh> band_split(const TriangleMesh& sherd, const Vec3& direction = Vec3::UnitZ()) {
  require(direction.norm() > 0, "band split direction must be non-zero");
  const Vec3 d = direction.normalized();
  std::vector<std::size_t> inner, outer;
  for (std::size_t t = 0; t < sherd.triangle_count(); ++t) {
    const Vec3 c = triangle_centroid(sherd, t);
    Vec3 radial = c - c.dot(d) * d;
    const Vec3 cr = triangle_cross(sherd, t);
    if (radial.norm() == 0.0 || cr.norm() == 0.0) continue;
    const double agree = cr.normalized().dot(radial.normalized());
    if (agree > 0.5)
      outer.push_back(t);
    else if (agree < -0.5)
      inner.push_back(t);
  }
  if (inner.empty() || outer.empty()) fail(ErrorKind::EmptyResult, "band split left one side empty");
  return {extract_triangles(sherd, inner), extract_triangles(sherd, outer)};
}

}  // namespace sherdkit
