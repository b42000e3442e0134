#pragma once

#include "sherdkit/measure.hpp"

#include <map>
#include <optional>

namespace sherdkit {

enum class SeamAxis { X, Y, Z, Auto };

inline SeamAxis parse_seam_axis(const std::string& s) {
  if (s == "x") return SeamAxis::X;
  if (s == "y") return SeamAxis::Y;
  if (s == "z") return SeamAxis::Z;
  if (s == "auto") return SeamAxis::Auto;
  fail(ErrorKind::InvalidArgument, "seam axis must be x, y, z or auto, not '" + s + "'");
}

inline constexpr double kBuildMargin = 2.0;  // mm kept free on every side

namespace split_detail {

inline const char* axis_name(int a) { return a == 0 ? "x" : a == 1 ? "y" : "z"; }

inline double cross2(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c) {
  return (b - a).x() * (c - a).y() - (b - a).y() * (c - a).x();
}

inline double signed_area(const std::vector<Index>& loop, const std::vector<Eigen::Vector2d>& p) {
  double s = 0;
  for (std::size_t i = 0; i < loop.size(); ++i) {
    const auto& a = p[loop[i]];
    const auto& b = p[loop[(i + 1) % loop.size()]];
    s += a.x() * b.y() - b.x() * a.y();
  }
  return 0.5 * s;
}

inline bool point_in_loop(const Eigen::Vector2d& q, const std::vector<Index>& loop, const std::vector<Eigen::Vector2d>& p) {
  bool in = false;
  for (std::size_t i = 0, j = loop.size() - 1; i < loop.size(); j = i++) {
    const auto& a = p[loop[i]];
    const auto& b = p[loop[j]];
    if ((a.y() > q.y()) != (b.y() > q.y()) && q.x() < (b.x() - a.x()) * (q.y() - a.y()) / (b.y() - a.y()) + a.x()) in = !in;
  }
  return in;
}

// Splices a hole (clockwise) into a counter-clockwise outer loop through a
// mutually visible vertex pair.
inline void bridge_hole(std::vector<Index>& outer, const std::vector<Index>& hole, const std::vector<Eigen::Vector2d>& p) {
  std::size_t hm = 0;
  for (std::size_t i = 1; i < hole.size(); ++i)
    if (p[hole[i]].x() > p[hole[hm]].x()) hm = i;
  const Eigen::Vector2d m = p[hole[hm]];

  // Nearest crossing of the ray m + t(1, 0) with an outer edge.
  double best_x = std::numeric_limits<double>::infinity();
  std::size_t best_edge = 0;
  for (std::size_t i = 0; i < outer.size(); ++i) {
    const auto& a = p[outer[i]];
    const auto& b = p[outer[(i + 1) % outer.size()]];
    if ((a.y() > m.y()) == (b.y() > m.y())) continue;
    const double x = a.x() + (m.y() - a.y()) * (b.x() - a.x()) / (b.y() - a.y());
    if (x >= m.x() && x < best_x) {
      best_x = x;
      best_edge = i;
    }
  }
  require(std::isfinite(best_x), "cap hole is not enclosed by its outer loop");
  const std::size_t ea = best_edge, eb = (best_edge + 1) % outer.size();
  std::size_t pick = p[outer[ea]].x() > p[outer[eb]].x() ? ea : eb;
  const Eigen::Vector2d hit(best_x, m.y());
  const Eigen::Vector2d cand = p[outer[pick]];
  // Any outer vertex inside triangle (m, hit, cand) would block the bridge;
  // then the one closest in angle to the ray is visible.
  double best_angle = std::numeric_limits<double>::infinity(), best_d = 0;
  for (std::size_t i = 0; i < outer.size(); ++i) {
    const auto& q = p[outer[i]];
    if (i == pick || q == cand) continue;
    const double s1 = cross2(m, hit, q), s2 = cross2(hit, cand, q), s3 = cross2(cand, m, q);
    const bool inside = (s1 >= 0 && s2 >= 0 && s3 >= 0) || (s1 <= 0 && s2 <= 0 && s3 <= 0);
    if (!inside || q.x() < m.x()) continue;
    const double ang = std::abs(std::atan2(q.y() - m.y(), q.x() - m.x()));
    const double d = (q - m).squaredNorm();
    if (ang < best_angle || (ang == best_angle && d < best_d)) {
      best_angle = ang;
      best_d = d;
      pick = i;
    }
  }
  std::vector<Index> merged;
  merged.reserve(outer.size() + hole.size() + 2);
  for (std::size_t i = 0; i <= pick; ++i) merged.push_back(outer[i]);
  for (std::size_t k = 0; k <= hole.size(); ++k) merged.push_back(hole[(hm + k) % hole.size()]);
  for (std::size_t i = pick; i < outer.size(); ++i) merged.push_back(outer[i]);
  outer = std::move(merged);
}

// Ear clipping of a counter-clockwise (possibly bridged) polygon.
inline void ear_clip(std::vector<Index> poly, const std::vector<Eigen::Vector2d>& p, std::vector<Triangle>& out) {
  auto inside_tri = [&](const Eigen::Vector2d& q, const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c) {
    return cross2(a, b, q) >= 0 && cross2(b, c, q) >= 0 && cross2(c, a, q) >= 0;
  };
  while (poly.size() > 3) {
    const std::size_t n = poly.size();
    std::optional<std::size_t> ear;
    std::size_t fallback = 0;
    double fallback_area = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n && !ear; ++i) {
      const Index ia = poly[(i + n - 1) % n], ib = poly[i], ic = poly[(i + 1) % n];
      const auto &a = p[ia], &b = p[ib], &c = p[ic];
      const double area = cross2(a, b, c);
      if (area > fallback_area) {
        fallback_area = area;
        fallback = i;
      }
      if (area <= 0) continue;
      bool blocked = false;
      for (std::size_t k = 0; k < n && !blocked; ++k) {
        const Index iq = poly[k];
        if (iq == ia || iq == ib || iq == ic) continue;
        const auto& q = p[iq];
        if (q == a || q == b || q == c) continue;
        blocked = inside_tri(q, a, b, c);
      }
      if (!blocked) ear = i;
    }
    const std::size_t i = ear.value_or(fallback);
    const Index ia = poly[(i + n - 1) % n], ib = poly[i], ic = poly[(i + 1) % n];
    if (ia != ib && ib != ic && ia != ic) out.push_back({ia, ib, ic});
    poly.erase(poly.begin() + static_cast<std::ptrdiff_t>(i));
  }
  if (poly.size() == 3 && poly[0] != poly[1] && poly[1] != poly[2] && poly[0] != poly[2]) out.push_back({poly[0], poly[1], poly[2]});
}

struct Clipper {
  const TriangleMesh& mesh;
  int axis;
  double level;
  std::vector<double> dist;
  std::map<std::pair<Index, Index>, Vec3> crossings;

  Clipper(const TriangleMesh& m, int a, double c) : mesh(m), axis(a), level(c) {
    dist.resize(m.vertex_count());
    for (std::size_t i = 0; i < m.vertex_count(); ++i) dist[i] = m.vertex(static_cast<Index>(i))[a] - c;
  }

  Vec3 crossing(Index a, Index b) {
    if (a > b) std::swap(a, b);
    auto [it, inserted] = crossings.try_emplace({a, b});
    if (inserted) {
      const double t = dist[a] / (dist[a] - dist[b]);
      it->second = mesh.vertex(a) + t * (mesh.vertex(b) - mesh.vertex(a));
      it->second[axis] = level;
    }
    return it->second;
  }

  // The closed piece on one side (below: dist < 0), capped on the plane.
  TriangleMesh side(bool below) {
    std::vector<Vec3> verts;
    std::vector<Triangle> tris;
    std::map<Index, Index> kept;
    std::map<std::pair<Index, Index>, Index> cut;
    auto keep_vertex = [&](Index v) {
      auto [it, inserted] = kept.try_emplace(v, static_cast<Index>(verts.size()));
      if (inserted) verts.push_back(mesh.vertex(v));
      return it->second;
    };
    auto cut_vertex = [&](Index a, Index b) {
      const std::pair<Index, Index> key = a < b ? std::pair{a, b} : std::pair{b, a};
      auto [it, inserted] = cut.try_emplace(key, static_cast<Index>(verts.size()));
      if (inserted) verts.push_back(crossing(a, b));
      return it->second;
    };
    auto on_side = [&](Index v) { return below ? dist[v] < 0 : dist[v] > 0; };

    std::vector<std::pair<Index, Index>> boundary;  // directed, on the plane
    for (const auto& t : mesh.triangles()) {
      const bool in[3] = {on_side(t[0]), on_side(t[1]), on_side(t[2])};
      const int count = in[0] + in[1] + in[2];
      if (count == 0) continue;
      if (count == 3) {
        tris.push_back({keep_vertex(t[0]), keep_vertex(t[1]), keep_vertex(t[2])});
        continue;
      }
      std::vector<Index> poly;
      std::vector<bool> on_plane;
      for (int k = 0; k < 3; ++k) {
        const Index a = t[k], b = t[(k + 1) % 3];
        if (in[k]) {
          poly.push_back(keep_vertex(a));
          on_plane.push_back(false);
        }
        if (in[k] != in[(k + 1) % 3]) {
          poly.push_back(cut_vertex(a, b));
          on_plane.push_back(true);
        }
      }
      for (std::size_t k = 1; k + 1 < poly.size(); ++k) tris.push_back({poly[0], poly[k], poly[k + 1]});
      for (std::size_t k = 0; k < poly.size(); ++k) {
        const std::size_t nk = (k + 1) % poly.size();
        if (on_plane[k] && on_plane[nk]) boundary.emplace_back(poly[k], poly[nk]);
      }
    }
    if (tris.empty()) return {};

    // The cap runs every boundary edge backwards.
    std::multimap<Index, Index> next;
    for (auto [a, b] : boundary) next.emplace(b, a);
    std::vector<std::vector<Index>> loops;
    while (!next.empty()) {
      auto it = next.begin();
      std::vector<Index> loop{it->first};
      Index cur = it->second;
      next.erase(it);
      while (cur != loop.front()) {
        loop.push_back(cur);
        auto nx = next.find(cur);
        if (nx == next.end()) fail(ErrorKind::NotWatertight, "cut boundary does not close; is the mesh watertight?");
        cur = nx->second;
        next.erase(nx);
      }
      if (loop.size() >= 3) loops.push_back(std::move(loop));
    }

    // 2D frame with u x v along the cap's outward normal.
    const int ua = (axis + 1) % 3, va = (axis + 2) % 3;
    const double sign = below ? 1.0 : -1.0;
    std::vector<Eigen::Vector2d> p2(verts.size());
    for (std::size_t i = 0; i < verts.size(); ++i) p2[i] = Eigen::Vector2d(verts[i][ua], sign * verts[i][va]);

    std::vector<double> area(loops.size());
    for (std::size_t i = 0; i < loops.size(); ++i) area[i] = signed_area(loops[i], p2);
    std::vector<std::vector<Index>> outers;
    std::vector<std::size_t> outer_src;
    for (std::size_t i = 0; i < loops.size(); ++i)
      if (area[i] > 0) {
        outers.push_back(loops[i]);
        outer_src.push_back(i);
      }
    std::vector<std::vector<std::size_t>> holes_of(outers.size());
    for (std::size_t i = 0; i < loops.size(); ++i) {
      if (area[i] >= 0) continue;
      // Smallest outer loop containing the hole.
      std::optional<std::size_t> parent;
      for (std::size_t o = 0; o < outers.size(); ++o)
        if (point_in_loop(p2[loops[i][0]], outers[o], p2) && (!parent || area[outer_src[o]] < area[outer_src[*parent]])) parent = o;
      if (!parent) fail(ErrorKind::Validation, "cut produced a hole outside every outer loop");
      holes_of[*parent].push_back(i);
    }
    for (std::size_t o = 0; o < outers.size(); ++o) {
      auto& hs = holes_of[o];
      auto max_x = [&](std::size_t h) {
        double m = -std::numeric_limits<double>::infinity();
        for (Index v : loops[h]) m = std::max(m, p2[v].x());
        return m;
      };
      std::sort(hs.begin(), hs.end(), [&](std::size_t a, std::size_t b) { return max_x(a) > max_x(b); });
      for (std::size_t h : hs) bridge_hole(outers[o], loops[h], p2);
      ear_clip(outers[o], p2, tris);
    }
    return TriangleMesh(std::move(verts), std::move(tris));
  }
};

}  // namespace split_detail

/// Cuts a closed mesh by planes perpendicular to one axis into the fewest
/// slabs whose bounding boxes fit the build volume less a margin on every
/// side. Each part is capped on its cut faces and stays closed. Parts are
/// returned in increasing order along the seam axis.
inline std::vector<TriangleMesh> split_for_build(const TriangleMesh& mesh, const Vec3& build_volume, SeamAxis seam = SeamAxis::Auto,
                                                 double margin = kBuildMargin) {
  require((build_volume.array() > 2 * margin).all(), "build volume must exceed twice the margin");
  const WeldResult w = weld(mesh);
  const MeshDiagnostics diag = diagnose(w.mesh);
  if (!diag.is_watertight) throw NotWatertightError(diag);
  const TriangleMesh& m = w.mesh;
  const Box box = m.bounds();
  const Vec3 ext = box.extent();
  const Vec3 usable = build_volume - Vec3::Constant(2 * margin);

  auto violations = [&](int axis) {
    std::vector<int> bad;
    for (int a = 0; a < 3; ++a)
      if (a != axis && ext[a] > usable[a]) bad.push_back(a);
    return bad;
  };
  auto parts_needed = [&](int axis) { return std::max(1, static_cast<int>(std::ceil(ext[axis] / usable[axis] - 1e-12))); };

  int axis = 2;
  if (seam == SeamAxis::Auto) {
    int best = -1;
    for (int a : {2, 0, 1})
      if (violations(a).empty() && (best < 0 || parts_needed(a) < parts_needed(best))) best = a;
    if (best >= 0) axis = best;
  } else {
    axis = static_cast<int>(seam);
  }
  const auto bad = violations(axis);
  if (!bad.empty()) {
    std::string what;
    for (std::size_t i = 0; i < bad.size(); ++i) what += (i ? " and " : "") + std::string(split_detail::axis_name(bad[i]));
    char buf[160];
    std::snprintf(buf, sizeof buf, " (extent %.1f x %.1f x %.1f mm, usable %.1f x %.1f x %.1f mm)", ext.x(), ext.y(), ext.z(),
                  usable.x(), usable.y(), usable.z());
    fail(ErrorKind::Infeasible, "mesh does not fit the build volume across the seam: " + what + " too large" + buf);
  }

  const int n = parts_needed(axis);
  if (n == 1) return {mesh};
  std::vector<TriangleMesh> parts;
  TriangleMesh rest = m;
  const double step = ext[axis] / n;
  for (int i = 1; i < n; ++i) {
    double level = box.min[axis] + step * i;
    // Keep vertices off the plane so every crossing is a proper edge split.
    const double nudge = 1e-6 * (1.0 + box.diagonal());
    for (int tries = 0; tries < 100; ++tries) {
      bool clear = true;
      for (const Vec3& v : rest.vertices())
        if (std::abs(v[axis] - level) < nudge) {
          clear = false;
          break;
        }
      if (clear) break;
      level += 3.7 * nudge;
    }
    split_detail::Clipper clip(rest, axis, level);
    TriangleMesh lower = clip.side(true);
    TriangleMesh upper = clip.side(false);
    if (!lower.empty()) parts.push_back(std::move(lower));
    rest = std::move(upper);
    if (rest.empty()) break;
  }
  if (!rest.empty()) parts.push_back(std::move(rest));
  return parts;
}

/// True when the mesh's bounding box fits the build volume less the margin.
inline bool fits_build_volume(const TriangleMesh& m, const Vec3& build_volume, double margin = kBuildMargin) {
  return (m.bounds().extent().array() <= (build_volume - Vec3::Constant(2 * margin)).array() + 1e-9).all();
}

}  // namespace sherdkit
