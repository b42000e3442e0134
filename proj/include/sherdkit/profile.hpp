#pragma once

#include "sherdkit/convex_hull.hpp"
#include "sherdkit/measure.hpp"

#include <Eigen/Dense>

#include <sstream>

namespace sherdkit {

struct Circle3D {
  Vec3 center = Vec3::Zero();
  double radius = 1.0;
  Vec3 normal = Vec3::UnitZ();
};

struct CircleFit {
  Circle3D circle;
  double rms_residual = 0.0;  // mm, RMS point-to-circle distance in 3-D
  bool refined = false;       // geometric refinement accepted
  bool refinement_failed = false;
  int iterations = 0;
};

struct CircleFitOptions {
  bool refine = true;
  int max_iterations = 50;
  double step_tolerance = 1e-10;  // mm
};

/// Distance from p to the circle curve (not the disk).
inline double distance_to_circle(const Circle3D& c, const Vec3& p) {
  const Vec3 q = p - c.center;
  const double h = q.dot(c.normal);
  const double rho = (q - h * c.normal).norm();
  return std::hypot(rho - c.radius, h);
}

namespace profile_detail {

// Deterministic sign for an axis-like unit vector: +Z first, then +Y, then +X.
inline Vec3 canonical_sign(Vec3 n) {
  const double s = std::abs(n.z()) > 1e-12 ? n.z() : (std::abs(n.y()) > 1e-12 ? n.y() : n.x());
  return s < 0 ? Vec3(-n) : n;
}

inline double sum_sq_residual(const std::vector<Eigen::Vector2d>& q, const Eigen::Vector3d& abr) {
  double s = 0.0;
  for (const auto& p : q) {
    const double d = std::hypot(p.x() - abr[0], p.y() - abr[1]) - abr[2];
    s += d * d;
  }
  return s;
}

}  // namespace profile_detail

/// Least-squares circle through 3-D points: PCA plane, algebraic fit of
/// (x-a)^2 + (y-b)^2 = r^2 in that plane, then Gauss-Newton on the true
/// in-plane point-to-circle distance. If refinement fails to decrease the
/// cost the algebraic circle is returned with refinement_failed set.
inline CircleFit fit_circle(std::span<const Vec3> points, const CircleFitOptions& opt = {}) {
  if (points.size() < 3) fail(ErrorKind::InvalidArgument, "circle fit needs at least 3 points");
  for (const Vec3& p : points) require(is_finite(p), "circle fit input contains a non-finite point");

  Vec3 centroid = Vec3::Zero();
  for (const Vec3& p : points) centroid += p;
  centroid /= static_cast<double>(points.size());
  Mat3 cov = Mat3::Zero();
  for (const Vec3& p : points) cov += (p - centroid) * (p - centroid).transpose();
  cov /= static_cast<double>(points.size());
  const Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
  const double extent = bounding_box(points).diagonal();
  {
    const Vec3 line = es.eigenvectors().col(2).normalized();
    double off = 0.0;
    for (const Vec3& p : points) {
      const Vec3 q = p - centroid;
      off = std::max(off, (q - q.dot(line) * line).norm());
    }
    if (off <= 1e-9 * std::max(extent, 1e-300)) throw DegenerateError("circle fit points are collinear", 1);
  }

  const Vec3 normal = profile_detail::canonical_sign(es.eigenvectors().col(0).normalized());
  const Vec3 u = es.eigenvectors().col(2).normalized();
  const Vec3 v = normal.cross(u);

  std::vector<Eigen::Vector2d> q;
  q.reserve(points.size());
  for (const Vec3& p : points) q.emplace_back((p - centroid).dot(u), (p - centroid).dot(v));

  // Algebraic fit: x^2 + y^2 = 2a x + 2b y + c, c = r^2 - a^2 - b^2.
  Mat3 ata = Mat3::Zero();
  Eigen::Vector3d atb = Eigen::Vector3d::Zero();
  for (const auto& p : q) {
    const Eigen::Vector3d row(p.x(), p.y(), 1.0);
    ata += row * row.transpose();
    atb += row * p.squaredNorm();
  }
  const Eigen::Vector3d sol = ata.ldlt().solve(atb);
  const double a = sol[0] / 2.0, b = sol[1] / 2.0;
  const double r2 = sol[2] + a * a + b * b;
  if (!(r2 > 0.0) || !std::isfinite(r2)) throw DegenerateError("circle fit is degenerate", 1);
  Eigen::Vector3d abr(a, b, std::sqrt(r2));

  CircleFit out;
  if (opt.refine) {
    Eigen::Vector3d cur = abr;
    double cost = profile_detail::sum_sq_residual(q, cur);
    bool ok = true;
    for (int it = 0; it < opt.max_iterations; ++it) {
      Mat3 jtj = Mat3::Zero();
      Eigen::Vector3d jtr = Eigen::Vector3d::Zero();
      for (const auto& p : q) {
        const double dx = p.x() - cur[0], dy = p.y() - cur[1];
        const double rho = std::hypot(dx, dy);
        if (rho == 0.0) continue;
        const Eigen::Vector3d j(-dx / rho, -dy / rho, -1.0);
        const double r = rho - cur[2];
        jtj += j * j.transpose();
        jtr += j * r;
      }
      const Eigen::Vector3d step = -jtj.ldlt().solve(jtr);
      if (!step.allFinite()) {
        ok = false;
        break;
      }
      // Halve until the cost does not increase.
      double scale = 1.0;
      Eigen::Vector3d trial = cur + step;
      double trial_cost = profile_detail::sum_sq_residual(q, trial);
      while (trial_cost > cost * (1.0 + 1e-12) + 1e-300 && scale > 1e-6) {
        scale *= 0.5;
        trial = cur + scale * step;
        trial_cost = profile_detail::sum_sq_residual(q, trial);
      }
      if (trial_cost > cost * (1.0 + 1e-12) + 1e-300 || !(trial[2] > 0.0)) {
        ok = false;
        break;
      }
      cur = trial;
      cost = trial_cost;
      out.iterations = it + 1;
      if ((scale * step).norm() < opt.step_tolerance) break;
    }
    if (ok) {
      abr = cur;
      out.refined = true;
    } else {
      out.refinement_failed = true;
    }
  }

  out.circle.center = centroid + abr[0] * u + abr[1] * v;
  out.circle.radius = abr[2];
  out.circle.normal = normal;
  KahanSum s;
  for (const Vec3& p : points) {
    const double d = distance_to_circle(out.circle, p);
    s.add(d * d);
  }
  out.rms_residual = std::sqrt(s.value() / static_cast<double>(points.size()));
  return out;
}

inline CircleFit fit_circle(const std::vector<Vec3>& points, const CircleFitOptions& opt = {}) {
  return fit_circle(std::span<const Vec3>(points), opt);
}

struct AxisEstimate {
  Vec3 point = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
  double coaxiality_rms = 0.0;
  bool from_normals = false;  // centres coincided; direction is the mean normal
};

/// Least-squares line through the circle centres, pointed along the mean
/// circle normal. When the centres coincide the mean normal is the axis.
inline AxisEstimate estimate_axis(std::span<const Circle3D> circles) {
  if (circles.size() < 2) fail(ErrorKind::InvalidArgument, "axis estimation needs at least 2 circles");
  Vec3 centroid = Vec3::Zero(), mean_normal = Vec3::Zero();
  double mean_radius = 0.0;
  for (const auto& c : circles) {
    centroid += c.center;
    mean_normal += c.normal.normalized();
    mean_radius += c.radius;
  }
  const double n = static_cast<double>(circles.size());
  centroid /= n;
  mean_normal /= n;
  mean_radius /= n;

  AxisEstimate out;
  out.point = centroid;
  Mat3 cov = Mat3::Zero();
  double spread = 0.0;
  for (const auto& c : circles) {
    cov += (c.center - centroid) * (c.center - centroid).transpose();
    spread = std::max(spread, (c.center - centroid).norm());
  }
  if (spread <= 1e-9 * (1.0 + mean_radius)) {
    if (mean_normal.norm() < 0.5)
      fail(ErrorKind::Degenerate, "circle centres coincide and their normals disagree; axis undefined");
    out.direction = mean_normal.normalized();
    out.from_normals = true;
  } else {
    const Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    Vec3 d = es.eigenvectors().col(2).normalized();
    const double agree = d.dot(mean_normal);
    if (std::abs(agree) > 1e-12)
      d = agree < 0 ? Vec3(-d) : d;
    else
      d = profile_detail::canonical_sign(d);
    out.direction = d;
  }
  KahanSum s;
  for (const auto& c : circles) {
    const Vec3 q = c.center - out.point;
    s.add((q - q.dot(out.direction) * out.direction).squaredNorm());
  }
  out.coaxiality_rms = std::sqrt(s.value() / n);
  return out;
}

struct Ring {
  double height;  // mm along the axis from axis_point
  double radius;  // mm
  friend bool operator==(const Ring&, const Ring&) = default;
};

/// Coaxial stack of circles summarising a vessel of revolution.
struct ProfileSkeleton {
  Vec3 axis_point = Vec3::Zero();  // the axis at height 0
  Vec3 axis_direction = Vec3::UnitZ();
  std::vector<Ring> rings;         // strictly increasing height
  double coaxiality_rms = 0.0;
  bool bottom_closed = true;       // recorded for reports; the solids are always closed

  Vec3 at(double height) const { return axis_point + height * axis_direction; }
};

inline void validate(const ProfileSkeleton& s) {
  if (s.rings.size() < 2) fail(ErrorKind::InvalidArgument, "skeleton needs at least 2 rings");
  require(std::abs(s.axis_direction.norm() - 1.0) < 1e-9, "skeleton axis direction must be unit length");
  for (std::size_t i = 0; i < s.rings.size(); ++i) {
    require(s.rings[i].radius > 0.0, "skeleton radii must be positive");
    if (i > 0) require(s.rings[i].height > s.rings[i - 1].height, "skeleton heights must increase strictly");
  }
}

inline constexpr double kRingMergeTolerance = 1e-6;  // mm

/// Projects each circle onto the estimated axis. Heights are measured from
/// the lowest circle, rings are sorted, and circles whose heights agree within
/// 1e-6 mm are merged by averaging radii. The input order does not matter.
inline ProfileSkeleton build_skeleton(std::span<const Circle3D> input, bool bottom_closed = true) {
  std::vector<Circle3D> circles(input.begin(), input.end());
  std::sort(circles.begin(), circles.end(), [](const Circle3D& a, const Circle3D& b) {
    const auto ka = std::make_tuple(a.center.x(), a.center.y(), a.center.z(), a.radius, a.normal.x(), a.normal.y(), a.normal.z());
    const auto kb = std::make_tuple(b.center.x(), b.center.y(), b.center.z(), b.radius, b.normal.x(), b.normal.y(), b.normal.z());
    return ka < kb;
  });
  const AxisEstimate axis = estimate_axis(circles);

  std::vector<Ring> raw;
  raw.reserve(circles.size());
  for (const auto& c : circles) raw.push_back({(c.center - axis.point).dot(axis.direction), c.radius});
  std::sort(raw.begin(), raw.end(), [](const Ring& a, const Ring& b) {
    return a.height < b.height || (a.height == b.height && a.radius < b.radius);
  });

  std::vector<Ring> rings;
  for (std::size_t i = 0; i < raw.size();) {
    std::size_t j = i;
    double hsum = 0.0, rsum = 0.0;
    while (j < raw.size() && raw[j].height - raw[i].height <= kRingMergeTolerance) {
      hsum += raw[j].height;
      rsum += raw[j].radius;
      ++j;
    }
    const double k = static_cast<double>(j - i);
    rings.push_back({hsum / k, rsum / k});
    i = j;
  }
  if (rings.size() < 2) fail(ErrorKind::InvalidArgument, "skeleton needs circles at 2 or more distinct heights");

  ProfileSkeleton s;
  const double base = rings.front().height;
  for (auto& r : rings) r.height -= base;
  rings.front().height = 0.0;
  s.axis_point = axis.point + base * axis.direction;
  s.axis_direction = axis.direction;
  s.rings = std::move(rings);
  s.coaxiality_rms = axis.coaxiality_rms;
  s.bottom_closed = bottom_closed;
  return s;
}

inline ProfileSkeleton build_skeleton(const std::vector<Circle3D>& circles, bool bottom_closed = true) {
  return build_skeleton(std::span<const Circle3D>(circles), bottom_closed);
}

/// pi * integral of r(z)^2 with r linear between rings (frustum sum), mm^3.
inline double solid_of_revolution_volume_mm3(std::span<const Ring> rings) {
  double v = 0.0;
  for (std::size_t i = 0; i + 1 < rings.size(); ++i) {
    const double h = rings[i + 1].height - rings[i].height;
    const double a = rings[i].radius, b = rings[i + 1].radius;
    v += h * (a * a + a * b + b * b);
  }
  return kPi * v / 3.0;
}

namespace profile_detail {

inline std::pair<Vec3, Vec3> axis_frame(const Vec3& dir) {
  const Vec3 u = any_orthogonal(dir);
  return {u, dir.cross(u)};
}

inline std::vector<Vec3> ring_points(const ProfileSkeleton& s, const Ring& ring, int segments) {
  const auto [u, v] = axis_frame(s.axis_direction);
  const Vec3 c = s.at(ring.height);
  std::vector<Vec3> pts;
  pts.reserve(segments);
  for (int j = 0; j < segments; ++j) {
    const double th = 2.0 * kPi * j / segments;
    pts.push_back(c + ring.radius * (std::cos(th) * u + std::sin(th) * v));
  }
  return pts;
}

}  // namespace profile_detail

/// Closed surface of revolution: one vertex ring per skeleton ring, quad
/// strips between them and triangle fans to the axis at both ends. Wound
/// outward.
inline TriangleMesh revolve(const ProfileSkeleton& s, int segments) {
  if (segments < 8) fail(ErrorKind::InvalidArgument, "revolve needs at least 8 segments");
  validate(s);
  const auto nr = s.rings.size();
  const auto seg = static_cast<Index>(segments);
  std::vector<Vec3> v;
  v.reserve(nr * seg + 2);
  for (const auto& r : s.rings) {
    auto pts = profile_detail::ring_points(s, r, segments);
    v.insert(v.end(), pts.begin(), pts.end());
  }
  const auto bottom = static_cast<Index>(v.size());
  v.push_back(s.at(s.rings.front().height));
  const auto top = static_cast<Index>(v.size());
  v.push_back(s.at(s.rings.back().height));

  std::vector<Triangle> t;
  t.reserve(2 * nr * seg);
  auto id = [&](std::size_t ring, Index j) { return static_cast<Index>(ring * seg + (j % seg)); };
  for (std::size_t i = 0; i + 1 < nr; ++i)
    for (Index j = 0; j < seg; ++j) {
      t.push_back({id(i, j), id(i, j + 1), id(i + 1, j + 1)});
      t.push_back({id(i, j), id(i + 1, j + 1), id(i + 1, j)});
    }
  for (Index j = 0; j < seg; ++j) {
    t.push_back({bottom, id(0, j + 1), id(0, j)});
    t.push_back({top, id(nr - 1, j), id(nr - 1, j + 1)});
  }
  return TriangleMesh(std::move(v), std::move(t));
}

struct SkeletonHull {
  TriangleMesh hull;
  double hull_volume_cm3 = 0.0;
  double revolve_volume_cm3 = 0.0;
  double gap_percent = 0.0;  // (hull - revolve) / revolve * 100
};

/// Convex hull of the sampled rings and its volume, with the revolve volume
/// at the same sampling alongside. The hull over-estimates any waisted
/// profile; gap_percent records by how much.
inline SkeletonHull skeleton_hull_volume(const ProfileSkeleton& s, int segments) {
  if (segments < 8) fail(ErrorKind::InvalidArgument, "hull sampling needs at least 8 segments");
  validate(s);
  std::vector<Vec3> pts;
  for (const auto& r : s.rings) {
    auto ring = profile_detail::ring_points(s, r, segments);
    pts.insert(pts.end(), ring.begin(), ring.end());
  }
  SkeletonHull out;
  out.hull = convex_hull(pts);
  out.hull_volume_cm3 = enclosed_volume(out.hull);
  out.revolve_volume_cm3 = enclosed_volume(revolve(s, segments));
  out.gap_percent = 100.0 * (out.hull_volume_cm3 - out.revolve_volume_cm3) / out.revolve_volume_cm3;
  return out;
}

/// "height_mm,radius_mm" rows for profile drawings.
inline std::string skeleton_csv(const ProfileSkeleton& s) {
  std::string out = "height_mm,radius_mm\n";
  char buf[96];
  for (const auto& r : s.rings) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f\n", r.height, r.radius);
    out += buf;
  }
  return out;
}

inline std::vector<Ring> parse_skeleton_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<Ring> rings;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.starts_with("height")) continue;
    Ring r{};
    if (std::sscanf(line.c_str(), "%lf,%lf", &r.height, &r.radius) != 2) throw ParseError("expected height,radius", line_no);
    rings.push_back(r);
  }
  return rings;
}

}  // namespace sherdkit
