#pragma once

#include "sherdkit/smooth.hpp"
#include "sherdkit/voxel.hpp"

#include <optional>

namespace sherdkit {

struct SupportSpec {
  double shell_thickness = 4.0;  // mm
  double clearance = 0.4;        // mm
  double voxel_size = 0.8;       // mm
  Vec3 build_volume{200.0, 200.0, 200.0};
  std::string label_text;
  double label_depth = 1.0;
  std::optional<Box> label_region;
  int smooth_passes = 2;
  double smooth_lambda = 0.2;
};

inline void validate(const SupportSpec& s) {
  require(s.shell_thickness > 0 && std::isfinite(s.shell_thickness), "shell thickness must be positive");
  require(s.clearance >= 0 && std::isfinite(s.clearance), "clearance must be >= 0");
  require(s.voxel_size > 0 && std::isfinite(s.voxel_size), "voxel size must be positive");
  require(s.clearance < s.shell_thickness, "clearance must be smaller than the shell thickness");
  require(s.voxel_size <= s.shell_thickness / 3.0 + 1e-12, "voxel size must be at most a third of the shell thickness");
  require((s.build_volume.array() > 0).all(), "build volume must be positive");
  if (!s.label_text.empty()) {
    require(s.label_depth > 0, "label depth must be positive");
    require(s.label_region.has_value() && !s.label_region->empty(), "a label needs a region");
  }
}

// ---------------------------------------------------------------------------
// 5x7 dot-matrix font. Each glyph is seven rows, top first; bit 4 is the
// leftmost column.

namespace font_detail {

struct Glyph {
  char c;
  std::array<std::uint8_t, 7> rows;
};

inline constexpr Glyph kGlyphs[] = {
    {'A', {0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001}},
    {'B', {0b11110, 0b10001, 0b10001, 0b11110, 0b10001, 0b10001, 0b11110}},
    {'C', {0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110}},
    {'D', {0b11100, 0b10010, 0b10001, 0b10001, 0b10001, 0b10010, 0b11100}},
    {'E', {0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111}},
    {'F', {0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000}},
    {'G', {0b01110, 0b10001, 0b10000, 0b10111, 0b10001, 0b10001, 0b01111}},
    {'H', {0b10001, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001}},
    {'I', {0b01110, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110}},
    {'J', {0b00111, 0b00010, 0b00010, 0b00010, 0b00010, 0b10010, 0b01100}},
    {'K', {0b10001, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010, 0b10001}},
    {'L', {0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b11111}},
    {'M', {0b10001, 0b11011, 0b10101, 0b10101, 0b10001, 0b10001, 0b10001}},
    {'N', {0b10001, 0b10001, 0b11001, 0b10101, 0b10011, 0b10001, 0b10001}},
    {'O', {0b01110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110}},
    {'P', {0b11110, 0b10001, 0b10001, 0b11110, 0b10000, 0b10000, 0b10000}},
    {'Q', {0b01110, 0b10001, 0b10001, 0b10001, 0b10101, 0b10010, 0b01101}},
    {'R', {0b11110, 0b10001, 0b10001, 0b11110, 0b10100, 0b10010, 0b10001}},
    {'S', {0b01111, 0b10000, 0b10000, 0b01110, 0b00001, 0b00001, 0b11110}},
    {'T', {0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100}},
    {'U', {0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110}},
    {'V', {0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100}},
    {'W', {0b10001, 0b10001, 0b10001, 0b10101, 0b10101, 0b10101, 0b01010}},
    {'X', {0b10001, 0b10001, 0b01010, 0b00100, 0b01010, 0b10001, 0b10001}},
    {'Y', {0b10001, 0b10001, 0b10001, 0b01010, 0b00100, 0b00100, 0b00100}},
    {'Z', {0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b10000, 0b11111}},
    {'0', {0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110}},
    {'1', {0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110}},
    {'2', {0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111}},
    {'3', {0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110}},
    {'4', {0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010}},
    {'5', {0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110}},
    {'6', {0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110}},
    {'7', {0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000}},
    {'8', {0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110}},
    {'9', {0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100}},
    {' ', {0, 0, 0, 0, 0, 0, 0}},
    {'.', {0, 0, 0, 0, 0, 0b01100, 0b01100}},
    {'-', {0, 0, 0, 0b11111, 0, 0, 0}},
};

}  // namespace font_detail

inline constexpr int kGlyphColumns = 5;
inline constexpr int kGlyphRows = 7;

/// Rows of the glyph for c; unsupported characters raise InvalidArgument.
inline const std::array<std::uint8_t, 7>& glyph(char c) {
  for (const auto& g : font_detail::kGlyphs)
    if (g.c == c) return g.rows;
  fail(ErrorKind::InvalidArgument, std::string("unsupported label character '") + c + "' (allowed: A-Z 0-9 space . -)");
}

/// Lit dots of a text line, one blank column between glyphs: (column, row)
/// with row 0 at the top.
inline std::vector<std::pair<int, int>> text_dots(const std::string& text) {
  std::vector<std::pair<int, int>> dots;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto& rows = glyph(text[i]);
    for (int r = 0; r < kGlyphRows; ++r)
      for (int c = 0; c < kGlyphColumns; ++c)
        if (rows[r] & (1 << (kGlyphColumns - 1 - c))) dots.emplace_back(static_cast<int>(i) * (kGlyphColumns + 1) + c, r);
  }
  return dots;
}

// ---------------------------------------------------------------------------

struct LabelLayout {
  int depth_axis = 2;       // extrusion axis (smallest region extent)
  int text_axis = 0;        // reading direction, +
  int up_axis = 1;          // glyph rows run toward -up
  bool from_max = true;     // carving enters from the region's max face along depth_axis
  double pitch = 0.0;       // mm per dot
  Vec3 start = Vec3::Zero();  // top-left corner of the first glyph
  std::size_t columns = 0;
};

/// Rasterizes `text` into the region and removes `depth` of material below
/// the solid's surface under every lit dot.
inline VoxelSolid engrave_label(const VoxelSolid& solid, const std::string& text, const Box& region, double depth,
                                LabelLayout* layout_out = nullptr) {
  require(!text.empty(), "label text is empty");
  require(depth > 0 && std::isfinite(depth), "label depth must be positive");
  require(!region.empty(), "label region is empty");
  const auto dots = text_dots(text);
  const double h = solid.voxel_size();
  const Vec3 ext = region.extent();

  LabelLayout L;
  ext.minCoeff(&L.depth_axis);
  const int a1 = (L.depth_axis + 1) % 3, a2 = (L.depth_axis + 2) % 3;
  L.text_axis = ext[a1] >= ext[a2] ? a1 : a2;
  L.up_axis = L.text_axis == a1 ? a2 : a1;
  L.columns = text.size() * (kGlyphColumns + 1) - 1;
  L.pitch = std::min(ext[L.text_axis] / static_cast<double>(L.columns), ext[L.up_axis] / kGlyphRows);
  if (L.pitch < 3.0 * h)
    fail(ErrorKind::InvalidArgument, "label region too small: " + std::to_string(L.pitch / h) +
                                         " voxels per dot, need at least 3");

  const Box gb = solid.grid.bounds().expanded(h / 2);
  if (!gb.intersects(region)) fail(ErrorKind::InvalidArgument, "label region does not intersect the solid");

  L.start = region.center();
  L.start[L.text_axis] -= 0.5 * L.pitch * static_cast<double>(L.columns);
  L.start[L.up_axis] += 0.5 * L.pitch * kGlyphRows;

  const auto& dims = solid.grid.dims();
  auto range = [&](int a, double lo, double hi) {
    const double o = solid.grid.origin()[a];
    const long first = static_cast<long>(std::ceil((lo - o) / h - 1e-9));
    const long last = static_cast<long>(std::floor((hi - o) / h + 1e-9));
    return std::pair<long, long>{std::max(0L, first), std::min(static_cast<long>(dims[a]) - 1, last)};
  };
  const auto [d0, d1] = range(L.depth_axis, region.min[L.depth_axis], region.max[L.depth_axis]);
  const auto [t0, t1] = range(L.text_axis, region.min[L.text_axis], region.max[L.text_axis]);
  const auto [u0, u1] = range(L.up_axis, region.min[L.up_axis], region.max[L.up_axis]);
  if (d0 > d1 || t0 > t1 || u0 > u1) fail(ErrorKind::InvalidArgument, "label region does not intersect the solid");

  auto node = [&](long d, long t, long u) {
    std::size_t ijk[3];
    ijk[L.depth_axis] = static_cast<std::size_t>(d);
    ijk[L.text_axis] = static_cast<std::size_t>(t);
    ijk[L.up_axis] = static_cast<std::size_t>(u);
    return solid.grid.index(ijk[0], ijk[1], ijk[2]);
  };

  // Enter from whichever region face has more empty voxels.
  std::size_t empty_lo = 0, empty_hi = 0;
  for (long t = t0; t <= t1; ++t)
    for (long u = u0; u <= u1; ++u) {
      empty_lo += !solid.occupied(node(d0, t, u));
      empty_hi += !solid.occupied(node(d1, t, u));
    }
  L.from_max = empty_hi >= empty_lo;

  std::vector<std::uint8_t> lit(L.columns * kGlyphRows, 0);
  for (auto [c, r] : dots) lit[static_cast<std::size_t>(r) * L.columns + static_cast<std::size_t>(c)] = 1;

  VoxelSolid out = solid;
  const long layers = std::max(1L, std::lround(depth / h));
  bool hit_surface = false;
  for (long t = t0; t <= t1; ++t)
    for (long u = u0; u <= u1; ++u) {
      const double pt = solid.grid.origin()[L.text_axis] + h * static_cast<double>(t);
      const double pu = solid.grid.origin()[L.up_axis] + h * static_cast<double>(u);
      const double fc = (pt - L.start[L.text_axis]) / L.pitch, fr = (L.start[L.up_axis] - pu) / L.pitch;
      if (fc < 0 || fr < 0) continue;
      const auto c = static_cast<std::size_t>(fc), r = static_cast<std::size_t>(fr);
      if (c >= L.columns || r >= static_cast<std::size_t>(kGlyphRows) || !lit[r * L.columns + c]) continue;
      const long step = L.from_max ? -1 : 1;
      long d = L.from_max ? d1 : d0;
      const long end = L.from_max ? d0 - 1 : d1 + 1;
      while (d != end && !solid.occupied(node(d, t, u))) d += step;
      if (d == end) continue;
      hit_surface = true;
      for (long n = 0; n < layers && d >= 0 && d < static_cast<long>(dims[L.depth_axis]); ++n, d += step)
        out.grid[node(d, t, u)] = 0.0;
    }
  if (!hit_surface) fail(ErrorKind::InvalidArgument, "label region does not intersect the solid surface");
  if (layout_out) *layout_out = L;
  return out;
}

// ---------------------------------------------------------------------------

struct Protrusion {
  std::string fragment_id;
  double max_protrusion_mm = 0.0;
};

/// Per fragment, the largest distance of a vertex lying outside the vessel.
inline std::vector<Protrusion> protrusion_report(const TriangleMesh& vessel, std::span<const TriangleMesh> fragments,
                                                 std::span<const std::string> ids = {}) {
  voxel_detail::require_closed(vessel);
  const TriangleBvh bvh(vessel);
  std::vector<Protrusion> out;
  for (std::size_t f = 0; f < fragments.size(); ++f) {
    Protrusion p{f < ids.size() ? ids[f] : std::to_string(f), 0.0};
    for (const Vec3& v : fragments[f].vertices())
      if (!inside_solid(bvh, v)) p.max_protrusion_mm = std::max(p.max_protrusion_mm, bvh.distance(v));
    out.push_back(std::move(p));
  }
  return out;
}

inline std::string protrusion_csv(std::span<const Protrusion> report) {
  std::string s = "fragment_id,max_protrusion_mm\n";
  char buf[64];
  for (const auto& p : report) {
    std::snprintf(buf, sizeof buf, "%.4f", p.max_protrusion_mm);
    s += p.fragment_id + "," + buf + "\n";
  }
  return s;
}

class ProtrusionError : public Error {
 public:
  explicit ProtrusionError(std::vector<Protrusion> r, double clearance)
      : Error(ErrorKind::Validation, message(r, clearance)), report(std::move(r)) {}
  std::vector<Protrusion> report;

 private:
  static std::string message(const std::vector<Protrusion>& r, double clearance) {
    std::string s = "fragments protrude outside the vessel by more than the clearance (" + std::to_string(clearance) + " mm):";
    for (const auto& p : r)
      if (p.max_protrusion_mm > clearance) s += " " + p.fragment_id + "=" + std::to_string(p.max_protrusion_mm);
    return s;
  }
};

struct SupportResult {
  TriangleMesh mesh;
  VoxelSolid solid;
  std::vector<Protrusion> protrusions;
  std::size_t removed_for_fragments = 0;  // voxels
};

namespace support_detail {

// Generalized winding number of a (possibly open) surface about p.
inline double winding_number(const TriangleMesh& m, const Vec3& p) {
  double total = 0.0;
  for (std::size_t t = 0; t < m.triangle_count(); ++t) {
    const Vec3 a = m.corner(t, 0) - p, b = m.corner(t, 1) - p, c = m.corner(t, 2) - p;
    const double la = a.norm(), lb = b.norm(), lc = c.norm();
    const double num = a.dot(b.cross(c));
    const double den = la * lb * lc + a.dot(b) * lc + b.dot(c) * la + c.dot(a) * lb;
    total += 2.0 * std::atan2(num, den);
  }
  return total / (4.0 * kPi);
}

// Voxels counted as fragment material beyond the clearance band: clearly
// enclosed by a thick open sherd. A single sheet reaches only about 0.5 on
// its concave side, so it is never filled.
inline constexpr double kSherdWinding = 0.75;

}  // namespace support_detail

/// Hollow display support: the outer `shell_thickness` of the vessel solid,
/// minus every fragment grown by `clearance`, minus an optional engraved
/// label, meshed at the 0.5 occupancy level and lightly smoothed.
inline SupportResult make_support(const TriangleMesh& vessel, std::span<const TriangleMesh> fragments, const SupportSpec& spec,
                                  std::span<const std::string> fragment_ids = {}) {
  validate(spec);
  voxel_detail::require_closed(vessel);
  const double h = spec.voxel_size;

  SupportResult res;
  res.protrusions = protrusion_report(vessel, fragments, fragment_ids);
  for (const auto& p : res.protrusions)
    if (p.max_protrusion_mm > spec.clearance) throw ProtrusionError(res.protrusions, spec.clearance);

  const Box bounds = vessel.bounds().expanded(2 * h);
  VoxelSolid solid = voxelize(vessel, h, bounds);
  const auto& dims = solid.grid.dims();
  const std::size_t n = solid.grid.size();

  std::vector<std::uint8_t> outside(n), inside(n);
  for (std::size_t i = 0; i < n; ++i) {
    outside[i] = !solid.occupied(i);
    inside[i] = !outside[i];
  }
  const auto d_out = squared_distance_transform(outside, dims);
  const auto d_in = squared_distance_transform(inside, dims);

  // Material margin m (mm, positive inside the support) near every skin,
  // stored as 0.5 + m / 2h clamped to [0, 1] so the 0.5 level falls where
  // m = 0 instead of halfway between voxel centres.
  const TriangleBvh vb(vessel);
  std::vector<double> margin(n, -h);
  for (std::size_t k = 0; k < dims[2]; ++k)
    for (std::size_t j = 0; j < dims[1]; ++j)
      for (std::size_t i = 0; i < dims[0]; ++i) {
        const std::size_t id = solid.grid.index(i, j, k);
        const bool in = solid.occupied(id);
        const double voxels = std::sqrt(in ? d_out[id] : d_in[id]);
        if (in && voxels * h > spec.shell_thickness + 2 * h) continue;
        if (!in && voxels > 2) continue;
        const double depth = vb.distance(solid.grid.position(i, j, k));
        margin[id] = in ? std::min(depth, spec.shell_thickness - depth) : -depth;
      }

  for (const TriangleMesh& frag : fragments) {
    if (frag.empty()) continue;
    const TriangleBvh fb(frag);
    const Box fbox = frag.bounds().expanded(spec.clearance + 2 * h);
    for (std::size_t k = 0; k < dims[2]; ++k)
      for (std::size_t j = 0; j < dims[1]; ++j)
        for (std::size_t i = 0; i < dims[0]; ++i) {
          const std::size_t id = solid.grid.index(i, j, k);
          if (margin[id] <= -h) continue;
          const Vec3 p = solid.grid.position(i, j, k);
          if (!fbox.contains(p)) continue;
          double m = std::min(margin[id], fb.distance(p) - spec.clearance);
          if (m > 0 && std::abs(support_detail::winding_number(frag, p)) > support_detail::kSherdWinding) m = -h;
          if (margin[id] > 0 && m <= 0) ++res.removed_for_fragments;
          margin[id] = m;
        }
  }
  for (std::size_t i = 0; i < n; ++i) solid.grid[i] = std::clamp(0.5 + margin[i] / (2 * h), 0.0, 1.0);

  if (!spec.label_text.empty()) solid = engrave_label(solid, spec.label_text, *spec.label_region, spec.label_depth);
  if (solid.count() == 0) fail(ErrorKind::EmptyResult, "support is empty");

  TriangleMesh surf = voxel_surface(solid);
  res.mesh = laplacian_smooth(surf, spec.smooth_passes, spec.smooth_lambda);
  res.solid = std::move(solid);
  return res;
}

inline SupportResult make_support(const TriangleMesh& vessel, const std::vector<TriangleMesh>& fragments,
                                  const SupportSpec& spec, const std::vector<std::string>& ids = {}) {
  return make_support(vessel, std::span<const TriangleMesh>(fragments), spec, std::span<const std::string>(ids));
}

}  // namespace sherdkit
