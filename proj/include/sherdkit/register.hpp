#pragma once

#include "sherdkit/spatial.hpp"

#include <Eigen/Dense>

namespace sherdkit {

/// Proper rigid motion p -> R p + t.
struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }
  static RigidTransform from_axis_angle(const Vec3& axis, double radians, const Vec3& t = Vec3::Zero()) {
    return {Eigen::AngleAxisd(radians, axis.normalized()).toRotationMatrix(), t};
  }
  static RigidTransform about_z(double radians, double dz = 0.0) {
    return from_axis_angle(Vec3::UnitZ(), radians, Vec3(0, 0, dz));
  }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  Vec3 operator()(const Vec3& p) const { return apply(p); }

  /// (a * b)(p) = a(b(p))
  friend RigidTransform operator*(const RigidTransform& a, const RigidTransform& b) {
    return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
  }
  RigidTransform inverse() const {
    const Mat3 rt = rotation.transpose();
    return {rt, -(rt * translation)};
  }
  Eigen::Affine3d affine() const {
    Eigen::Affine3d a = Eigen::Affine3d::Identity();
    a.linear() = rotation;
    a.translation() = translation;
    return a;
  }
  /// Rotation angle in radians, in [0, pi].
  double angle() const { return Eigen::AngleAxisd(rotation).angle(); }

  bool is_rigid(double tol = 1e-9) const {
    return (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
           std::abs(rotation.determinant() - 1.0) <= tol && is_finite(translation);
  }
  friend bool operator==(const RigidTransform&, const RigidTransform&) = default;
};

/// Nearest rotation (polar factor via SVD), with the reflection removed.
inline Mat3 orthonormalize(const Mat3& m) {
  const Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

/// Rigid motion minimizing sum |T src_i - dst_i|^2 (Kabsch / Arun).
inline RigidTransform kabsch(std::span<const Vec3> src, std::span<const Vec3> dst) {
  require(src.size() == dst.size(), "kabsch needs paired point lists");
  if (src.size() < 3) fail(ErrorKind::InvalidArgument, "kabsch needs at least 3 pairs");
  Vec3 cs = Vec3::Zero(), cd = Vec3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    cs += src[i];
    cd += dst[i];
  }
  cs /= static_cast<double>(src.size());
  cd /= static_cast<double>(src.size());
  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) h += (src[i] - cs) * (dst[i] - cd).transpose();
  const Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0 ? -1.0 : 1.0;
  const Mat3 r = svd.matrixV() * d * svd.matrixU().transpose();
  return {r, cd - r * cs};
}

inline TriangleMesh transformed(const TriangleMesh& m, const RigidTransform& t) { return transformed(m, t.affine()); }

/// Every k-th point after sorting indices, so that at most max_count remain.
inline std::vector<Vec3> stride_subsample(std::span<const Vec3> pts, std::size_t max_count) {
  if (max_count == 0 || pts.size() <= max_count) return {pts.begin(), pts.end()};
  const std::size_t k = (pts.size() + max_count - 1) / max_count;
  std::vector<Vec3> out;
  out.reserve(max_count);
  for (std::size_t i = 0; i < pts.size(); i += k) out.push_back(pts[i]);
  return out;
}

struct ZAlignment {
  double theta = 0.0;  // radians, [0, 2 pi)
  double dz = 0.0;     // mm
  double mean_residual = 0.0;
  bool degenerate = false;  // residual nearly flat in theta: rotation not identifiable
  double grid_best_residual = 0.0;

  RigidTransform transform() const { return RigidTransform::about_z(theta, dz); }
};

struct AlignZOptions {
  int theta_steps = 360;
  double dz_min = -10.0;
  double dz_max = 10.0;
  int dz_steps = 100;
  std::size_t max_samples = 5000;
  double theta_tolerance = 1e-5;  // rad
  double dz_tolerance = 1e-4;     // mm
};

namespace register_detail {

// Mean distance from R_z(theta) p + dz to the surface. Returns +inf as soon
// as the running sum exceeds bound * n, which cannot change an argmin.
inline double z_objective(const TriangleBvh& bvh, std::span<const Vec3> pts, double theta, double dz,
                          double bound = std::numeric_limits<double>::infinity()) {
  const double c = std::cos(theta), s = std::sin(theta);
  const double n = static_cast<double>(pts.size());
  const double budget_total = bound * n;
  double sum = 0.0;
  for (const Vec3& p : pts) {
    const Vec3 q(c * p.x() - s * p.y(), s * p.x() + c * p.y(), p.z() + dz);
    const double budget = budget_total - sum;
    if (budget < 0) return std::numeric_limits<double>::infinity();
    const auto hit = bvh.closest(q, budget == std::numeric_limits<double>::infinity() ? budget : budget * (1 + 1e-12) + 1e-300);
    if (!hit.found) return std::numeric_limits<double>::infinity();
    sum += hit.distance;
  }
  return sum / n;
}

inline double wrap_angle(double a) {
  a = std::fmod(a, 2.0 * kPi);
  if (a < 0) a += 2.0 * kPi;
  if (a >= 2.0 * kPi) a = 0.0;
  return a;
}

}  // namespace register_detail

/// Rotation about Z then slide along Z taking `moving` onto `fixed`:
/// exhaustive (theta, dz) grid then coordinate descent with step halving.
/// Ties go to the lowest theta, then the lowest dz.
inline ZAlignment align_z(const TriangleMesh& moving, const TriangleMesh& fixed, const AlignZOptions& opt = {}) {
  if (moving.vertex_count() == 0 || fixed.empty()) fail(ErrorKind::InvalidArgument, "align-z needs two non-empty meshes");
  if (opt.theta_steps < 8) fail(ErrorKind::InvalidArgument, "align-z needs at least 8 theta steps");
  if (!(opt.dz_min <= opt.dz_max) || opt.dz_steps < 1) fail(ErrorKind::InvalidArgument, "align-z dz range is empty");

  const TriangleBvh bvh(fixed);
  const auto pts = stride_subsample(moving.vertices(), opt.max_samples);
  const double dtheta = 2.0 * kPi / opt.theta_steps;
  const double ddz = opt.dz_steps > 1 ? (opt.dz_max - opt.dz_min) / (opt.dz_steps - 1) : 0.0;

  ZAlignment best;
  best.mean_residual = std::numeric_limits<double>::infinity();
  std::vector<double> row_min(opt.theta_steps, std::numeric_limits<double>::infinity());
  for (int i = 0; i < opt.theta_steps; ++i) {
    const double th = i * dtheta;
    for (int j = 0; j < opt.dz_steps; ++j) {
      const double dz = opt.dz_min + j * ddz;
      const double r = register_detail::z_objective(bvh, pts, th, dz, row_min[i]);
      if (r < row_min[i]) row_min[i] = r;
      if (r < best.mean_residual) {
        best.mean_residual = r;
        best.theta = th;
        best.dz = dz;
      }
    }
  }
  best.grid_best_residual = best.mean_residual;

  double mean = 0.0;
  for (double r : row_min) mean += r;
  mean /= static_cast<double>(row_min.size());
  const auto [lo, hi] = std::minmax_element(row_min.begin(), row_min.end());
  best.degenerate = (*hi - *lo) < 0.01 * mean;

  double step_t = dtheta / 2.0, step_z = ddz > 0 ? ddz / 2.0 : 0.0;
  while (step_t >= opt.theta_tolerance || step_z >= opt.dz_tolerance) {
    bool moved = false;
    if (step_t >= opt.theta_tolerance)
      for (double sgn : {-1.0, 1.0}) {
        const double th = best.theta + sgn * step_t;
        const double r = register_detail::z_objective(bvh, pts, th, best.dz, best.mean_residual);
        if (r < best.mean_residual) {
          best.mean_residual = r;
          best.theta = th;
          moved = true;
          break;
        }
      }
    if (step_z >= opt.dz_tolerance)
      for (double sgn : {-1.0, 1.0}) {
        const double dz = best.dz + sgn * step_z;
        const double r = register_detail::z_objective(bvh, pts, best.theta, dz, best.mean_residual);
        if (r < best.mean_residual) {
          best.mean_residual = r;
          best.dz = dz;
          moved = true;
          break;
        }
      }
    if (!moved) {
      step_t *= 0.5;
      step_z *= 0.5;
    }
  }
  best.theta = register_detail::wrap_angle(best.theta);
  return best;
}

/// Mean surface distance for a given alignment, as align_z scores it.
inline double z_alignment_residual(const TriangleMesh& moving, const TriangleMesh& fixed, double theta, double dz,
                                   std::size_t max_samples = 5000) {
  const TriangleBvh bvh(fixed);
  const auto pts = stride_subsample(moving.vertices(), max_samples);
  return register_detail::z_objective(bvh, pts, theta, dz);
}

struct IcpOptions {
  int max_iterations = 200;
  double convergence_mm = 1e-6;
  double rejection_radius = 0.0;  // mm; 0 = 10x the median vertex spacing of `fixed`
  double rejection_factor = 10.0;
  int max_extrapolation_doublings = 4;  // 0 gives textbook ICP
};

struct IcpResult {
  RigidTransform pose;
  /// Trimmed RMS: correspondences beyond the rejection radius count at the
  /// radius. With a fixed radius this cannot increase between iterations.
  double rms = 0.0;
  double inlier_rms = 0.0;
  std::size_t inliers = 0;
  int iterations = 0;
  bool converged = false;
  double rejection_radius = 0.0;
  std::vector<double> rms_history;  // entry 0 is the seed pose
};

/// Point-to-point ICP of `moving` onto the surface of `fixed`: each moving
/// point is paired with its closest point on the fixed triangles.
inline IcpResult icp_rigid(std::span<const Vec3> moving, const TriangleMesh& fixed, const RigidTransform& seed = {},
                           const IcpOptions& opt = {}) {
  if (moving.empty() || fixed.empty()) fail(ErrorKind::InvalidArgument, "icp needs non-empty inputs");
  require(opt.max_iterations >= 1, "icp needs at least one iteration");
  const KdTree tree(fixed.vertices());
  const TriangleBvh bvh(fixed);
  IcpResult out;
  out.rejection_radius = opt.rejection_radius > 0 ? opt.rejection_radius : opt.rejection_factor * median_spacing(tree);
  if (!(out.rejection_radius > 0)) fail(ErrorKind::InvalidArgument, "icp rejection radius is zero");
  const double r2 = out.rejection_radius * out.rejection_radius;

  struct Matching {
    std::vector<Vec3> src, dst;
    double rms = 0.0, inlier_rms = 0.0;
  };
  auto match = [&](const RigidTransform& pose) {
    Matching m;
    KahanSum trimmed, inl;
    for (const Vec3& p : moving) {
      const auto hit = bvh.closest(pose(p), out.rejection_radius);
      if (hit.found) {
        const double d2 = hit.distance * hit.distance;
        m.src.push_back(p);
        m.dst.push_back(hit.point);
        trimmed.add(d2);
        inl.add(d2);
      } else {
        trimmed.add(r2);
      }
    }
    if (m.src.size() < 3) fail(ErrorKind::NoCorrespondence, "no correspondences within the icp rejection radius");
    m.inlier_rms = std::sqrt(inl.value() / static_cast<double>(m.src.size()));
    m.rms = std::sqrt(trimmed.value() / static_cast<double>(moving.size()));
    return m;
  };

  out.pose = seed;
  out.pose.rotation = orthonormalize(seed.rotation);
  Matching cur = match(out.pose);
  out.rms_history.push_back(cur.rms);
  for (int it = 0; it < opt.max_iterations; ++it) {
    out.iterations = it + 1;
    RigidTransform next = kabsch(cur.src, cur.dst);
    next.rotation = orthonormalize(next.rotation);
    Matching trial = match(next);
    if (trial.rms > cur.rms) {  // rounding at convergence; keep the better pose
      out.converged = true;
      break;
    }
    // On shapes that nearly slide along themselves the plain update creeps;
    // repeat the same step while that keeps lowering the error.
    const RigidTransform step = next * out.pose.inverse();
    RigidTransform power = step;
    for (int k = 0; k < opt.max_extrapolation_doublings; ++k) {
      power = power * power;
      RigidTransform cand = power * out.pose;
      cand.rotation = orthonormalize(cand.rotation);
      Matching m = match(cand);
      if (!(m.rms < trial.rms)) break;
      next = cand;
      trial = std::move(m);
    }
    const double prev = cur.rms;
    out.pose = next;
    cur = std::move(trial);
    out.rms_history.push_back(cur.rms);
    if (prev - cur.rms < opt.convergence_mm) {
      out.converged = true;
      break;
    }
  }
  out.rms = cur.rms;
  out.inlier_rms = cur.inlier_rms;
  out.inliers = cur.src.size();
  return out;
}

inline IcpResult icp_rigid(const TriangleMesh& moving, const TriangleMesh& fixed, const RigidTransform& seed = {},
                           const IcpOptions& opt = {}) {
  return icp_rigid(std::span<const Vec3>(moving.vertices()), fixed, seed, opt);
}

/// Inner shell moved by the alignment, then both shells concatenated with no
/// welding.
inline TriangleMesh merge_shells(const TriangleMesh& inner, const TriangleMesh& outer, const ZAlignment& a) {
  if (inner.empty() || outer.empty()) fail(ErrorKind::InvalidArgument, "merge needs two non-empty shells");
  if (a.theta == 0.0 && a.dz == 0.0) return concatenate(inner, outer);
  return concatenate(transformed(inner, a.transform()), outer);
}

/// Largest one-sided distance from a's vertices to b's surface, both ways.
inline double hausdorff_vertices(const TriangleMesh& a, const TriangleMesh& b) {
  const TriangleBvh ba(a), bb(b);
  double h = 0.0;
  for (const Vec3& p : a.vertices()) h = std::max(h, bb.distance(p));
  for (const Vec3& p : b.vertices()) h = std::max(h, ba.distance(p));
  return h;
}

}  // namespace sherdkit
