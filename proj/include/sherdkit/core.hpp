#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sherdkit {

// Millimetres everywhere unless a name says otherwise.
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Index = std::uint32_t;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kMm3PerCm3 = 1000.0;

inline double mm3_to_cm3(double v) { return v / kMm3PerCm3; }
inline double cm3_to_mm3(double v) { return v * kMm3PerCm3; }

enum class ErrorKind {
  InvalidArgument,
  Parse,
  Io,
  Degenerate,
  NotWatertight,
  Orientation,
  NoCorrespondence,
  Infeasible,
  EmptyResult,
  Validation,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::InvalidArgument: return "invalid_argument";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Io: return "io";
    case ErrorKind::Degenerate: return "degenerate";
    case ErrorKind::NotWatertight: return "not_watertight";
    case ErrorKind::Orientation: return "orientation";
    case ErrorKind::NoCorrespondence: return "no_correspondence";
    case ErrorKind::Infeasible: return "infeasible";
    case ErrorKind::EmptyResult: return "empty_result";
    case ErrorKind::Validation: return "validation";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(ErrorKind::Parse, "line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Thrown when an input spans fewer dimensions than an operation needs.
class DegenerateError : public Error {
 public:
  DegenerateError(const std::string& what, int dimension)
      : Error(ErrorKind::Degenerate, what), dimension_(dimension) {}
  int dimension() const noexcept { return dimension_; }

 private:
  int dimension_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, const std::string& what) {
  if (!cond) throw Error(ErrorKind::InvalidArgument, what);
}

struct Box {
  Vec3 min = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 max = Vec3::Constant(-std::numeric_limits<double>::infinity());

  Box() = default;
  Box(const Vec3& lo, const Vec3& hi) : min(lo), max(hi) {}

  bool empty() const { return (min.array() > max.array()).any(); }
  void extend(const Vec3& p) {
    min = min.cwiseMin(p);
    max = max.cwiseMax(p);
  }
  void extend(const Box& b) {
    min = min.cwiseMin(b.min);
    max = max.cwiseMax(b.max);
  }
  Vec3 extent() const { return empty() ? Vec3::Zero() : Vec3(max - min); }
  Vec3 center() const { return 0.5 * (min + max); }
  double diagonal() const { return extent().norm(); }
  bool contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
  bool intersects(const Box& b) const {
    return !empty() && !b.empty() && (min.array() <= b.max.array()).all() &&
           (b.min.array() <= max.array()).all();
  }
  Box expanded(double margin) const {
    return {min - Vec3::Constant(margin), max + Vec3::Constant(margin)};
  }
};

template <class Range>
Box bounding_box(const Range& points) {
  Box b;
  for (const Vec3& p : points) b.extend(p);
  return b;
}

inline bool is_finite(const Vec3& p) { return std::isfinite(p.x()) && std::isfinite(p.y()) && std::isfinite(p.z()); }

// Any unit vector orthogonal to n.
inline Vec3 any_orthogonal(const Vec3& n) {
  Vec3 a = std::abs(n.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  return n.cross(a).normalized();
}

// Neumaier-compensated accumulator; keeps long reductions order-stable.
class KahanSum {
 public:
  void add(double v) {
    double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v))
      comp_ += (sum_ - t) + v;
    else
      comp_ += (v - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

}  // namespace sherdkit
