#pragma once

#include "sherdkit/topology.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string_view>

namespace sherdkit {

enum class MeshFormat { Auto, Obj, Ply, Stl };

inline MeshFormat parse_mesh_format(std::string_view s) {
  if (s == "auto") return MeshFormat::Auto;
  if (s == "obj") return MeshFormat::Obj;
  if (s == "ply") return MeshFormat::Ply;
  if (s == "stl") return MeshFormat::Stl;
  fail(ErrorKind::InvalidArgument, "unknown mesh format '" + std::string(s) + "'");
}

inline MeshFormat format_from_extension(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".obj") return MeshFormat::Obj;
  if (ext == ".ply") return MeshFormat::Ply;
  if (ext == ".stl") return MeshFormat::Stl;
  fail(ErrorKind::InvalidArgument, "cannot infer mesh format from '" + p.string() + "'");
}

struct SaveOptions {
  bool ascii = false;  // PLY/STL; OBJ is always text
};

namespace io_detail {

static_assert(std::endian::native == std::endian::little, "binary mesh IO assumes a little-endian host");

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open '" + p.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& data) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot open '" + p.string() + "' for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) fail(ErrorKind::Io, "write to '" + p.string() + "' failed");
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t j = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > j) out.push_back(line.substr(j, i - j));
  }
  return out;
}

template <class T>
bool parse_number(std::string_view s, T& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

inline void append_double(std::string& out, double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, r.ptr);
}

template <class T>
void append_raw(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

// Splits n-gons into fans around the first corner; degenerate pieces skipped.
inline void add_fan(std::vector<Triangle>& tris, const std::vector<Index>& poly) {
  for (std::size_t k = 1; k + 1 < poly.size(); ++k) {
    const Triangle t{poly[0], poly[k], poly[k + 1]};
    if (t[0] != t[1] && t[1] != t[2] && t[0] != t[2]) tris.push_back(t);
  }
}

inline TriangleMesh finish(std::vector<Vec3> v, std::vector<Triangle> t, const std::string& what) {
  if (t.empty()) fail(ErrorKind::Parse, what + ": mesh has zero triangles");
  return TriangleMesh(std::move(v), std::move(t));
}

inline TriangleMesh parse_obj(const std::string& text, const std::string& name) {
  std::vector<Vec3> verts;
  std::vector<Triangle> tris;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  std::vector<Index> poly;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string_view line(text.data() + pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const auto tok = split_ws(line);
    if (tok.empty()) continue;
    if (tok[0] == "v") {
      if (tok.size() < 4) throw ParseError("vertex record needs three coordinates", line_no);
      Vec3 p;
      for (int k = 0; k < 3; ++k)
        if (!parse_number(tok[k + 1], p[k])) throw ParseError("bad coordinate '" + std::string(tok[k + 1]) + "'", line_no);
      verts.push_back(p);
    } else if (tok[0] == "f") {
      if (tok.size() < 4) throw ParseError("face record needs at least three corners", line_no);
      poly.clear();
      for (std::size_t k = 1; k < tok.size(); ++k) {
        std::string_view idx = tok[k].substr(0, tok[k].find('/'));
        long long i = 0;
        if (!parse_number(idx, i) || i == 0) throw ParseError("bad face index '" + std::string(tok[k]) + "'", line_no);
        const long long resolved = i > 0 ? i - 1 : static_cast<long long>(verts.size()) + i;
        if (resolved < 0 || resolved >= static_cast<long long>(verts.size()))
          throw ParseError("face index " + std::to_string(i) + " out of range", line_no);
        poly.push_back(static_cast<Index>(resolved));
      }
      add_fan(tris, poly);
    }
    // vt, vn, g, o, s, usemtl, mtllib and friends carry nothing we keep.
  }
  return finish(std::move(verts), std::move(tris), name);
}

inline std::string format_obj(const TriangleMesh& m) {
  std::string out;
  out.reserve(m.vertex_count() * 48 + m.triangle_count() * 24);
  for (const Vec3& p : m.vertices()) {
    out += "v ";
    append_double(out, p.x());
    out += ' ';
    append_double(out, p.y());
    out += ' ';
    append_double(out, p.z());
    out += '\n';
  }
  for (const auto& t : m.triangles()) {
    out += "f " + std::to_string(t[0] + 1) + ' ' + std::to_string(t[1] + 1) + ' ' + std::to_string(t[2] + 1) + '\n';
  }
  return out;
}

// --- PLY ---------------------------------------------------------------------

enum class PlyType { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

inline PlyType ply_type(std::string_view s, std::size_t line) {
  if (s == "char" || s == "int8") return PlyType::Int8;
  if (s == "uchar" || s == "uint8") return PlyType::UInt8;
  if (s == "short" || s == "int16") return PlyType::Int16;
  if (s == "ushort" || s == "uint16") return PlyType::UInt16;
  if (s == "int" || s == "int32") return PlyType::Int32;
  if (s == "uint" || s == "uint32") return PlyType::UInt32;
  if (s == "float" || s == "float32") return PlyType::Float32;
  if (s == "double" || s == "float64") return PlyType::Float64;
  throw ParseError("unknown PLY type '" + std::string(s) + "'", line);
}

inline std::size_t ply_size(PlyType t) {
  switch (t) {
    case PlyType::Int8: case PlyType::UInt8: return 1;
    case PlyType::Int16: case PlyType::UInt16: return 2;
    case PlyType::Int32: case PlyType::UInt32: case PlyType::Float32: return 4;
    case PlyType::Float64: return 8;
  }
  return 0;
}

struct PlyProperty {
  std::string name;
  PlyType type;
  bool is_list = false;
  PlyType count_type = PlyType::UInt8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> props;
};

class PlyReader {
 public:
  PlyReader(const std::string& data, std::size_t pos, bool ascii, bool big_endian, std::size_t first_line)
      : data_(data), pos_(pos), ascii_(ascii), big_(big_endian), line_(first_line) {}

  double read(PlyType t) { return ascii_ ? read_ascii() : read_binary(t); }
  std::size_t line() const { return line_; }

 private:
  double read_ascii() {
    while (pos_ < data_.size() && std::isspace(static_cast<unsigned char>(data_[pos_]))) {
      if (data_[pos_] == '\n') ++line_;
      ++pos_;
    }
    const std::size_t start = pos_;
    while (pos_ < data_.size() && !std::isspace(static_cast<unsigned char>(data_[pos_]))) ++pos_;
    if (start == pos_) throw ParseError("unexpected end of PLY data", line_);
    double v;
    if (!parse_number(std::string_view(data_).substr(start, pos_ - start), v))
      throw ParseError("bad PLY value '" + data_.substr(start, pos_ - start) + "'", line_);
    return v;
  }

  template <class T>
  T take() {
    if (pos_ + sizeof(T) > data_.size()) throw ParseError("truncated binary PLY body", line_);
    char buf[sizeof(T)];
    std::memcpy(buf, data_.data() + pos_, sizeof(T));
    if (big_) std::reverse(buf, buf + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
  }

  double read_binary(PlyType t) {
    switch (t) {
      case PlyType::Int8: return take<std::int8_t>();
      case PlyType::UInt8: return take<std::uint8_t>();
      case PlyType::Int16: return take<std::int16_t>();
      case PlyType::UInt16: return take<std::uint16_t>();
      case PlyType::Int32: return take<std::int32_t>();
      case PlyType::UInt32: return take<std::uint32_t>();
      case PlyType::Float32: return take<float>();
      case PlyType::Float64: return take<double>();
    }
    return 0.0;
  }

  const std::string& data_;
  std::size_t pos_;
  bool ascii_, big_;
  std::size_t line_;
};

inline TriangleMesh parse_ply(const std::string& data, const std::string& name) {
  std::size_t pos = 0, line_no = 0;
  auto next_line = [&]() -> std::string_view {
    if (pos >= data.size()) throw ParseError("PLY header is not terminated by end_header", line_no);
    std::size_t end = data.find('\n', pos);
    if (end == std::string::npos) end = data.size();
    std::string_view l(data.data() + pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
    return l;
  };
  if (next_line() != "ply") throw ParseError("missing 'ply' magic", 1);
  bool ascii = false, big = false, have_format = false;
  std::vector<PlyElement> elements;
  for (;;) {
    const auto tok = split_ws(next_line());
    if (tok.empty()) continue;
    if (tok[0] == "end_header") break;
    if (tok[0] == "comment" || tok[0] == "obj_info") continue;
    if (tok[0] == "format") {
      if (tok.size() < 2) throw ParseError("incomplete format line", line_no);
      have_format = true;
      if (tok[1] == "ascii") ascii = true;
      else if (tok[1] == "binary_little_endian") big = false;
      else if (tok[1] == "binary_big_endian") big = true;
      else throw ParseError("unknown PLY format '" + std::string(tok[1]) + "'", line_no);
    } else if (tok[0] == "element") {
      if (tok.size() < 3) throw ParseError("incomplete element line", line_no);
      PlyElement e;
      e.name = std::string(tok[1]);
      if (!parse_number(tok[2], e.count)) throw ParseError("bad element count", line_no);
      elements.push_back(std::move(e));
    } else if (tok[0] == "property") {
      if (elements.empty()) throw ParseError("property before any element", line_no);
      PlyProperty p;
      if (tok.size() >= 5 && tok[1] == "list") {
        p.is_list = true;
        p.count_type = ply_type(tok[2], line_no);
        p.type = ply_type(tok[3], line_no);
        p.name = std::string(tok[4]);
      } else if (tok.size() >= 3) {
        p.type = ply_type(tok[1], line_no);
        p.name = std::string(tok[2]);
      } else {
        throw ParseError("incomplete property line", line_no);
      }
      elements.back().props.push_back(std::move(p));
    } else {
      throw ParseError("unexpected header keyword '" + std::string(tok[0]) + "'", line_no);
    }
  }
  if (!have_format) throw ParseError("PLY header has no format line", line_no);

  PlyReader r(data, pos, ascii, big, line_no + 1);
  std::vector<Vec3> verts;
  std::vector<Triangle> tris;
  std::vector<Index> poly;
  for (const auto& e : elements) {
    if (e.name == "vertex") {
      int ix = -1, iy = -1, iz = -1;
      for (std::size_t k = 0; k < e.props.size(); ++k) {
        if (e.props[k].name == "x") ix = static_cast<int>(k);
        if (e.props[k].name == "y") iy = static_cast<int>(k);
        if (e.props[k].name == "z") iz = static_cast<int>(k);
      }
      if (ix < 0 || iy < 0 || iz < 0) throw ParseError("vertex element lacks x/y/z", line_no);
      verts.reserve(e.count);
      std::vector<double> vals(e.props.size());
      for (std::size_t i = 0; i < e.count; ++i) {
        for (std::size_t k = 0; k < e.props.size(); ++k) {
          const auto& p = e.props[k];
          if (p.is_list) {
            const auto n = static_cast<std::size_t>(r.read(p.count_type));
            for (std::size_t j = 0; j < n; ++j) r.read(p.type);
          } else {
            vals[k] = r.read(p.type);
          }
        }
        verts.emplace_back(vals[ix], vals[iy], vals[iz]);
      }
    } else if (e.name == "face") {
      for (std::size_t i = 0; i < e.count; ++i) {
        for (const auto& p : e.props) {
          if (!p.is_list) {
            r.read(p.type);
            continue;
          }
          const auto n = static_cast<std::size_t>(r.read(p.count_type));
          poly.clear();
          for (std::size_t j = 0; j < n; ++j) {
            const double idx = r.read(p.type);
            if (p.name != "vertex_indices" && p.name != "vertex_index") continue;
            if (idx < 0 || idx >= static_cast<double>(verts.size()))
              throw ParseError("face " + std::to_string(i) + " index " + std::to_string(static_cast<long long>(idx)) +
                                   " out of range",
                               r.line());
            poly.push_back(static_cast<Index>(idx));
          }
          if (!poly.empty()) {
            if (poly.size() < 3) throw ParseError("face " + std::to_string(i) + " has fewer than 3 corners", r.line());
            add_fan(tris, poly);
          }
        }
      }
    } else {
      for (std::size_t i = 0; i < e.count; ++i)
        for (const auto& p : e.props) {
          if (p.is_list) {
            const auto n = static_cast<std::size_t>(r.read(p.count_type));
            for (std::size_t j = 0; j < n; ++j) r.read(p.type);
          } else {
            r.read(p.type);
          }
        }
    }
  }
  return finish(std::move(verts), std::move(tris), name);
}

inline std::string format_ply(const TriangleMesh& m, bool ascii) {
  std::string out = "ply\nformat ";
  out += ascii ? "ascii" : "binary_little_endian";
  out += " 1.0\nelement vertex " + std::to_string(m.vertex_count()) +
         "\nproperty double x\nproperty double y\nproperty double z\nelement face " +
         std::to_string(m.triangle_count()) + "\nproperty list uchar int vertex_indices\nend_header\n";
  if (ascii) {
    for (const Vec3& p : m.vertices()) {
      append_double(out, p.x());
      out += ' ';
      append_double(out, p.y());
      out += ' ';
      append_double(out, p.z());
      out += '\n';
    }
    for (const auto& t : m.triangles())
      out += "3 " + std::to_string(t[0]) + ' ' + std::to_string(t[1]) + ' ' + std::to_string(t[2]) + '\n';
  } else {
    for (const Vec3& p : m.vertices())
      for (int k = 0; k < 3; ++k) append_raw(out, p[k]);
    for (const auto& t : m.triangles()) {
      append_raw(out, std::uint8_t{3});
      for (Index i : t) append_raw(out, static_cast<std::int32_t>(i));
    }
  }
  return out;
}

// --- STL ---------------------------------------------------------------------

// STL is a triangle soup; bit-identical corners are merged so the loaded mesh
// has its connectivity back.
inline TriangleMesh soup_to_mesh(const std::vector<std::array<Vec3, 3>>& soup, const std::string& name) {
  std::vector<Vec3> verts;
  std::vector<Triangle> tris;
  std::map<std::array<double, 3>, Index> index;
  for (const auto& f : soup) {
    Triangle t;
    for (int k = 0; k < 3; ++k) {
      const std::array<double, 3> key{f[k].x(), f[k].y(), f[k].z()};
      auto [it, inserted] = index.emplace(key, static_cast<Index>(verts.size()));
      if (inserted) verts.push_back(f[k]);
      t[k] = it->second;
    }
    if (t[0] != t[1] && t[1] != t[2] && t[0] != t[2]) tris.push_back(t);
  }
  return finish(std::move(verts), std::move(tris), name);
}

inline bool looks_like_binary_stl(const std::string& data) {
  if (data.size() < 84) return false;
  std::uint32_t n;
  std::memcpy(&n, data.data() + 80, 4);
  return data.size() == 84 + static_cast<std::size_t>(n) * 50;
}

inline TriangleMesh parse_stl(const std::string& data, const std::string& name) {
  std::vector<std::array<Vec3, 3>> soup;
  if (looks_like_binary_stl(data)) {
    std::uint32_t n;
    std::memcpy(&n, data.data() + 80, 4);
    soup.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
      const char* f = data.data() + 84 + static_cast<std::size_t>(i) * 50 + 12;
      for (int k = 0; k < 3; ++k) {
        float xyz[3];
        std::memcpy(xyz, f + 12 * k, 12);
        soup[i][k] = Vec3(xyz[0], xyz[1], xyz[2]);
      }
    }
    return soup_to_mesh(soup, name);
  }
  std::size_t pos = 0, line_no = 0;
  std::array<Vec3, 3> cur;
  int corner = 0;
  bool saw_solid = false;
  while (pos < data.size()) {
    std::size_t end = data.find('\n', pos);
    if (end == std::string::npos) end = data.size();
    const auto tok = split_ws(std::string_view(data.data() + pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (tok.empty()) continue;
    if (tok[0] == "solid") saw_solid = true;
    else if (!saw_solid) throw ParseError("not an STL file (no 'solid' header, size not binary)", line_no);
    else if (tok[0] == "vertex") {
      if (tok.size() < 4 || corner > 2) throw ParseError("malformed vertex record", line_no);
      for (int k = 0; k < 3; ++k)
        if (!parse_number(tok[k + 1], cur[corner][k])) throw ParseError("bad coordinate", line_no);
      ++corner;
    } else if (tok[0] == "endloop") {
      if (corner != 3) throw ParseError("facet loop does not have 3 vertices", line_no);
      soup.push_back(cur);
      corner = 0;
    } else if (tok[0] == "facet" || tok[0] == "outer" || tok[0] == "endfacet" || tok[0] == "endsolid") {
    } else {
      throw ParseError("unexpected keyword '" + std::string(tok[0]) + "'", line_no);
    }
  }
  return soup_to_mesh(soup, name);
}

inline std::string format_stl(const TriangleMesh& m, bool ascii) {
  std::string out;
  if (ascii) {
    out = "solid sherdkit\n";
    for (std::size_t t = 0; t < m.triangle_count(); ++t) {
      Vec3 n = triangle_cross(m, t);
      n = n.norm() > 0 ? Vec3(n.normalized()) : Vec3::Zero();
      out += "facet normal ";
      for (int k = 0; k < 3; ++k) {
        append_double(out, n[k]);
        out += k < 2 ? ' ' : '\n';
      }
      out += "outer loop\n";
      for (int c = 0; c < 3; ++c) {
        out += "vertex ";
        for (int k = 0; k < 3; ++k) {
          append_double(out, m.corner(t, c)[k]);
          out += k < 2 ? ' ' : '\n';
        }
      }
      out += "endloop\nendfacet\n";
    }
    out += "endsolid sherdkit\n";
    return out;
  }
  out.assign(80, '\0');
  const char tag[] = "sherdkit binary STL";
  std::memcpy(out.data(), tag, sizeof tag - 1);
  append_raw(out, static_cast<std::uint32_t>(m.triangle_count()));
  for (std::size_t t = 0; t < m.triangle_count(); ++t) {
    Vec3 n = triangle_cross(m, t);
    n = n.norm() > 0 ? Vec3(n.normalized()) : Vec3::Zero();
    for (int k = 0; k < 3; ++k) append_raw(out, static_cast<float>(n[k]));
    for (int c = 0; c < 3; ++c)
      for (int k = 0; k < 3; ++k) append_raw(out, static_cast<float>(m.corner(t, c)[k]));
    append_raw(out, std::uint16_t{0});
  }
  return out;
}

}  // namespace io_detail

/// Reads OBJ, PLY (ascii / binary) or STL (ascii / binary). Polygons are
/// fan-triangulated; OBJ indices are converted to 0-based. STL stores float32
/// and carries no connectivity, so corners are merged on exact equality.
inline TriangleMesh load_mesh(const std::filesystem::path& path, MeshFormat format = MeshFormat::Auto) {
  if (format == MeshFormat::Auto) format = format_from_extension(path);
  const std::string data = io_detail::read_file(path);
  const std::string name = path.string();
  switch (format) {
    case MeshFormat::Obj: return io_detail::parse_obj(data, name);
    case MeshFormat::Ply: return io_detail::parse_ply(data, name);
    case MeshFormat::Stl: return io_detail::parse_stl(data, name);
    case MeshFormat::Auto: break;
  }
  fail(ErrorKind::InvalidArgument, "unresolved mesh format");
}

inline TriangleMesh parse_mesh(const std::string& data, MeshFormat format) {
  switch (format) {
    case MeshFormat::Obj: return io_detail::parse_obj(data, "<memory>");
    case MeshFormat::Ply: return io_detail::parse_ply(data, "<memory>");
    case MeshFormat::Stl: return io_detail::parse_stl(data, "<memory>");
    case MeshFormat::Auto: break;
  }
  fail(ErrorKind::InvalidArgument, "parse_mesh needs an explicit format");
}

inline std::string format_mesh(const TriangleMesh& mesh, MeshFormat format, SaveOptions opts = {}) {
  switch (format) {
    case MeshFormat::Obj: return io_detail::format_obj(mesh);
    case MeshFormat::Ply: return io_detail::format_ply(mesh, opts.ascii);
    case MeshFormat::Stl: return io_detail::format_stl(mesh, opts.ascii);
    case MeshFormat::Auto: break;
  }
  fail(ErrorKind::InvalidArgument, "format_mesh needs an explicit format");
}

/// PLY is written with float64 coordinates; STL is float32 by definition.
inline void save_mesh(const TriangleMesh& mesh, const std::filesystem::path& path, MeshFormat format = MeshFormat::Auto,
                      SaveOptions opts = {}) {
  if (format == MeshFormat::Auto) format = format_from_extension(path);
  io_detail::write_file(path, format_mesh(mesh, format, opts));
}

}  // namespace sherdkit
