#pragma once

#include "sherdkit/mesh.hpp"

#include <numeric>
#include <optional>
#include <queue>

namespace sherdkit {

/// Static 3-d tree over a point set. Queries are exact; ties on distance are
/// broken by the lower point index so results do not depend on traversal order.
class KdTree {
 public:
  struct Neighbor {
    Index index;
    double distance_sq;
    friend bool operator<(const Neighbor& a, const Neighbor& b) {
      return a.distance_sq < b.distance_sq || (a.distance_sq == b.distance_sq && a.index < b.index);
    }
  };

  KdTree() = default;
  explicit KdTree(std::vector<Vec3> points) : points_(std::move(points)) {
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), Index{0});
    if (!points_.empty()) {
      nodes_.reserve(2 * points_.size() / kLeafSize + 2);
      build(0, points_.size());
    }
  }

  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  const std::vector<Vec3>& points() const { return points_; }

  Neighbor nearest(const Vec3& q) const {
    if (empty()) fail(ErrorKind::InvalidArgument, "nearest-neighbour query on an empty tree");
    Neighbor best{0, std::numeric_limits<double>::infinity()};
    nearest_rec(0, q, best);
    return best;
  }

  /// Up to k nearest points, closest first.
  std::vector<Neighbor> knn(const Vec3& q, std::size_t k) const {
    std::vector<Neighbor> heap;
    if (k == 0 || empty()) return heap;
    heap.reserve(k + 1);
    knn_rec(0, q, k, heap);
    std::sort_heap(heap.begin(), heap.end());
    return heap;
  }

  std::vector<Neighbor> within(const Vec3& q, double radius) const {
    std::vector<Neighbor> out;
    if (!empty()) radius_rec(0, q, radius * radius, out);
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  static constexpr std::size_t kLeafSize = 8;

  struct Node {
    std::size_t begin, end;
    int axis = -1;  // -1 for leaves
    double split = 0.0;
    std::size_t left = 0, right = 0;
    Box box;
  };

  std::size_t build(std::size_t begin, std::size_t end) {
    const std::size_t id = nodes_.size();
    nodes_.push_back(Node{begin, end, -1, 0.0, 0, 0, Box{}});
    Box box;
    for (std::size_t i = begin; i < end; ++i) box.extend(points_[order_[i]]);
    nodes_[id].box = box;
    if (end - begin <= kLeafSize) return id;
    int axis;
    box.extent().maxCoeff(&axis);
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end, [&](Index a, Index b) {
      const double pa = points_[a][axis], pb = points_[b][axis];
      return pa < pb || (pa == pb && a < b);
    });
    nodes_[id].axis = axis;
    nodes_[id].split = points_[order_[mid]][axis];
    const std::size_t l = build(begin, mid);
    const std::size_t r = build(mid, end);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  static double box_distance_sq(const Box& b, const Vec3& q) {
    const Vec3 d = (b.min - q).cwiseMax(q - b.max).cwiseMax(Vec3::Zero());
    return d.squaredNorm();
  }

  void nearest_rec(std::size_t id, const Vec3& q, Neighbor& best) const {
    const Node& n = nodes_[id];
    if (box_distance_sq(n.box, q) > best.distance_sq) return;
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        const Neighbor c{order_[i], (points_[order_[i]] - q).squaredNorm()};
        if (c < best) best = c;
      }
      return;
    }
    const bool left_first = q[n.axis] < n.split;
    nearest_rec(left_first ? n.left : n.right, q, best);
    nearest_rec(left_first ? n.right : n.left, q, best);
  }

  void knn_rec(std::size_t id, const Vec3& q, std::size_t k, std::vector<Neighbor>& heap) const {
    const Node& n = nodes_[id];
    if (heap.size() == k && box_distance_sq(n.box, q) > heap.front().distance_sq) return;
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        const Neighbor c{order_[i], (points_[order_[i]] - q).squaredNorm()};
        if (heap.size() < k) {
          heap.push_back(c);
          std::push_heap(heap.begin(), heap.end());
        } else if (c < heap.front()) {
          std::pop_heap(heap.begin(), heap.end());
          heap.back() = c;
          std::push_heap(heap.begin(), heap.end());
        }
      }
      return;
    }
    const bool left_first = q[n.axis] < n.split;
    knn_rec(left_first ? n.left : n.right, q, k, heap);
    knn_rec(left_first ? n.right : n.left, q, k, heap);
  }

  void radius_rec(std::size_t id, const Vec3& q, double r2, std::vector<Neighbor>& out) const {
    const Node& n = nodes_[id];
    if (box_distance_sq(n.box, q) > r2) return;
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        const double d2 = (points_[order_[i]] - q).squaredNorm();
        if (d2 <= r2) out.push_back({order_[i], d2});
      }
      return;
    }
    radius_rec(n.left, q, r2, out);
    radius_rec(n.right, q, r2, out);
  }

  std::vector<Vec3> points_;
  std::vector<Index> order_;
  std::vector<Node> nodes_;
};

/// Closest point on triangle abc to p (Ericson, Real-Time Collision Detection).
inline Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return a;
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return a + ab * (d1 / (d1 - d3));
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return a + ac * (d2 / (d2 - d6));
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

struct RayHit {
  double t;
  std::size_t triangle;
  double u, v;  // barycentric weights of corners 1 and 2
};

/// Möller–Trumbore; hits with t > t_min only.
inline std::optional<RayHit> intersect_ray_triangle(const Vec3& o, const Vec3& d, const Vec3& a, const Vec3& b,
                                                     const Vec3& c, double t_min = 0.0) {
  const Vec3 e1 = b - a, e2 = c - a;
  const Vec3 pv = d.cross(e2);
  const double det = e1.dot(pv);
  if (std::abs(det) < 1e-300) return std::nullopt;
  const double inv = 1.0 / det;
  const Vec3 tv = o - a;
  const double u = tv.dot(pv) * inv;
  if (u < 0.0 || u > 1.0) return std::nullopt;
  const Vec3 qv = tv.cross(e1);
  const double v = d.dot(qv) * inv;
  if (v < 0.0 || u + v > 1.0) return std::nullopt;
  const double t = e2.dot(qv) * inv;
  if (t <= t_min) return std::nullopt;
  return RayHit{t, 0, u, v};
}

/// Bounding-volume hierarchy over the triangles of a mesh, for exact
/// closest-point and ray queries. Holds its own copy of the mesh.
class TriangleBvh {
 public:
  struct Closest {
    double distance = std::numeric_limits<double>::infinity();
    Vec3 point = Vec3::Zero();
    std::size_t triangle = 0;
    bool found = false;  // false when nothing lies within the query's max_distance
  };

  TriangleBvh() = default;
  explicit TriangleBvh(TriangleMesh mesh) : mesh_(std::move(mesh)) {
    const std::size_t n = mesh_.triangle_count();
    order_.resize(n);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    centroids_.resize(n);
    boxes_.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
      centroids_[t] = triangle_centroid(mesh_, t);
      for (int k = 0; k < 3; ++k) boxes_[t].extend(mesh_.corner(t, k));
    }
    if (n > 0) build(0, n);
  }

  const TriangleMesh& mesh() const { return mesh_; }
  bool empty() const { return mesh_.empty(); }

  Closest closest(const Vec3& p, double max_distance = std::numeric_limits<double>::infinity()) const {
    Closest best;
    best.distance = max_distance;
    double best_sq = max_distance == std::numeric_limits<double>::infinity() ? max_distance : max_distance * max_distance;
    if (!empty()) closest_rec(0, p, best, best_sq);
    if (best_sq < std::numeric_limits<double>::infinity()) best.distance = std::sqrt(best_sq);
    return best;
  }

  double distance(const Vec3& p) const { return closest(p).distance; }

  /// Every triangle crossing of the ray with t > t_min, sorted by t.
  std::vector<RayHit> raycast_all(const Vec3& o, const Vec3& d, double t_min = 0.0) const {
    std::vector<RayHit> hits;
    if (!empty()) ray_rec(0, o, d, t_min, hits);
    std::sort(hits.begin(), hits.end(), [](const RayHit& a, const RayHit& b) {
      return a.t < b.t || (a.t == b.t && a.triangle < b.triangle);
    });
    return hits;
  }

  std::optional<RayHit> first_hit(const Vec3& o, const Vec3& d, double t_min = 0.0) const {
    auto hits = raycast_all(o, d, t_min);
    if (hits.empty()) return std::nullopt;
    return hits.front();
  }

 private:
  static constexpr std::size_t kLeafSize = 4;
  struct Node {
    Box box;
    std::size_t begin, end;
    std::size_t left = 0, right = 0;
    bool leaf = true;
  };

  std::size_t build(std::size_t begin, std::size_t end) {
    const std::size_t id = nodes_.size();
    nodes_.push_back(Node{Box{}, begin, end, 0, 0, true});
    Box box, cbox;
    for (std::size_t i = begin; i < end; ++i) {
      box.extend(boxes_[order_[i]]);
      cbox.extend(centroids_[order_[i]]);
    }
    nodes_[id].box = box;
    if (end - begin <= kLeafSize) return id;
    int axis;
    cbox.extent().maxCoeff(&axis);
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::size_t a, std::size_t b) {
                       const double ca = centroids_[a][axis], cb = centroids_[b][axis];
                       return ca < cb || (ca == cb && a < b);
                     });
    const std::size_t l = build(begin, mid);
    const std::size_t r = build(mid, end);
    nodes_[id].left = l;
    nodes_[id].right = r;
    nodes_[id].leaf = false;
    return id;
  }

  static double box_distance_sq(const Box& b, const Vec3& q) {
    return (b.min - q).cwiseMax(q - b.max).cwiseMax(Vec3::Zero()).squaredNorm();
  }

  void closest_rec(std::size_t id, const Vec3& p, Closest& best, double& best_sq) const {
    const Node& n = nodes_[id];
    if (box_distance_sq(n.box, p) > best_sq) return;
    if (n.leaf) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        const std::size_t t = order_[i];
        const Vec3 c = closest_point_on_triangle(p, mesh_.corner(t, 0), mesh_.corner(t, 1), mesh_.corner(t, 2));
        const double d2 = (c - p).squaredNorm();
        if (d2 < best_sq || (d2 == best_sq && t < best.triangle)) {
          best_sq = d2;
          best.point = c;
          best.triangle = t;
          best.found = true;
        }
      }
      return;
    }
    const double dl = box_distance_sq(nodes_[n.left].box, p);
    const double dr = box_distance_sq(nodes_[n.right].box, p);
    if (dl <= dr) {
      closest_rec(n.left, p, best, best_sq);
      closest_rec(n.right, p, best, best_sq);
    } else {
      closest_rec(n.right, p, best, best_sq);
      closest_rec(n.left, p, best, best_sq);
    }
  }

  static bool ray_hits_box(const Box& b, const Vec3& o, const Vec3& d) {
    double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
      if (d[a] == 0.0) {
        if (o[a] < b.min[a] || o[a] > b.max[a]) return false;
        continue;
      }
      double ta = (b.min[a] - o[a]) / d[a];
      double tb = (b.max[a] - o[a]) / d[a];
      if (ta > tb) std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
      if (t0 > t1 * (1 + 1e-12) + 1e-12) return false;
    }
    return true;
  }

  void ray_rec(std::size_t id, const Vec3& o, const Vec3& d, double t_min, std::vector<RayHit>& hits) const {
    const Node& n = nodes_[id];
    if (!ray_hits_box(n.box.expanded(1e-9 * (1.0 + n.box.diagonal())), o, d)) return;
    if (n.leaf) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        const std::size_t t = order_[i];
        if (auto h = intersect_ray_triangle(o, d, mesh_.corner(t, 0), mesh_.corner(t, 1), mesh_.corner(t, 2), t_min)) {
          h->triangle = t;
          hits.push_back(*h);
        }
      }
      return;
    }
    ray_rec(n.left, o, d, t_min, hits);
    ray_rec(n.right, o, d, t_min, hits);
  }

  TriangleMesh mesh_;
  std::vector<std::size_t> order_;
  std::vector<Vec3> centroids_;
  std::vector<Box> boxes_;
  std::vector<Node> nodes_;
};

/// Median distance from each point to its nearest other point.
inline double median_spacing(const KdTree& tree) {
  const auto& pts = tree.points();
  if (pts.size() < 2) return 0.0;
  std::vector<double> d;
  d.reserve(pts.size());
  for (const Vec3& p : pts) {
    const auto nn = tree.knn(p, 2);
    d.push_back(std::sqrt(nn.back().distance_sq));
  }
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return *mid;
}

}  // namespace sherdkit
