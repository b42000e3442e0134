#pragma once

// Per-vessel metrics table. The last column, the hull-versus-revolve gap, is
// an addition to the classic survey layout.

#include "sherdkit/json_io.hpp"

#include <optional>

namespace sherdkit {

struct MetricsRecord {
  std::string name;
  std::optional<long> photo_count;
  std::optional<long> point_count;
  long surface_count = 0;
  long vertex_count = 0;
  std::string calculation_time;  // as supplied with the scans; empty when unknown
  double volume_cm3 = 0.0;
  std::optional<double> hull_overestimate_percent;
  std::string volume_source;  // revolve, hull, poisson or given

  void validate() const {
    require(!name.empty(), "metrics record needs a name");
    require(surface_count >= 0 && vertex_count >= 0, "counts must be non-negative");
    require(!photo_count || *photo_count >= 0, "photo count must be non-negative");
    require(!point_count || *point_count >= 0, "point count must be non-negative");
    require(volume_cm3 >= 0 && std::isfinite(volume_cm3), "volume must be non-negative");
  }
};

inline const std::vector<std::string>& report_columns() {
  static const std::vector<std::string> cols{"Ceramic name",       "Number of photos",   "Number of points (point cloud)",
                                             "Number of surfaces", "Number of vertices", "Calculation time",
                                             "Volume (cm ³)",      "Hull overestimate (%)"};
  return cols;
}

inline constexpr const char* kLocaleNote = "Decimal separator is '.'; volumes in cm3 with one decimal.";

namespace report_detail {

inline std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  std::string s = buf;
  if (s == "-0.0") s = "0.0";
  return s;
}

inline std::vector<std::string> cells(const MetricsRecord& r, const std::string& missing) {
  auto opt = [&](const std::optional<long>& v) { return v ? std::to_string(*v) : missing; };
  return {r.name,
          opt(r.photo_count),
          opt(r.point_count),
          std::to_string(r.surface_count),
          std::to_string(r.vertex_count),
          r.calculation_time.empty() ? missing : r.calculation_time,
          fixed(r.volume_cm3, 1),
          r.hull_overestimate_percent ? fixed(*r.hull_overestimate_percent, 1) : missing};
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

// Display width in code points; the volume header holds a two-byte "³".
inline std::size_t width(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char c : s) n += (c & 0xC0) != 0x80;
  return n;
}

}  // namespace report_detail

/// CSV: a comment line carrying the locale note, the header, one row per
/// record. Unknown values are empty fields.
inline std::string report_csv(std::span<const MetricsRecord> records) {
  std::string out = std::string("# ") + kLocaleNote + "\n";
  const auto& cols = report_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out += (i ? "," : "") + report_detail::csv_field(cols[i]);
  out += "\n";
  for (const auto& r : records) {
    r.validate();
    const auto c = report_detail::cells(r, "");
    for (std::size_t i = 0; i < c.size(); ++i) out += (i ? "," : "") + report_detail::csv_field(c[i]);
    out += "\n";
  }
  return out;
}

/// Aligned text table; text columns left-aligned, numbers right-aligned.
inline std::string report_text(std::span<const MetricsRecord> records) {
  const auto& cols = report_columns();
  std::vector<std::vector<std::string>> rows{cols};
  for (const auto& r : records) {
    r.validate();
    rows.push_back(report_detail::cells(r, "-"));
  }
  std::vector<std::size_t> w(cols.size(), 0);
  for (const auto& row : rows)
    for (std::size_t i = 0; i < row.size(); ++i) w[i] = std::max(w[i], report_detail::width(row[i]));
  std::string out = std::string(kLocaleNote) + "\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::string line;
    for (std::size_t i = 0; i < rows[r].size(); ++i) {
      const std::string& s = rows[r][i];
      const std::string pad(w[i] - report_detail::width(s), ' ');
      const bool left = r == 0 || i == 0 || i == 5;
      line += (i ? "  " : "") + (left ? s + pad : pad + s);
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + "\n";
    if (r == 0) {
      std::size_t total = 0;
      for (std::size_t i = 0; i < w.size(); ++i) total += w[i] + (i ? 2 : 0);
      out += std::string(total, '-') + "\n";
    }
  }
  return out;
}

inline Json to_json(const MetricsRecord& r) {
  Json j{{"name", r.name}};
  j["photo_count"] = r.photo_count ? Json(*r.photo_count) : Json(nullptr);
  j["point_count"] = r.point_count ? Json(*r.point_count) : Json(nullptr);
  j["surface_count"] = r.surface_count;
  j["vertex_count"] = r.vertex_count;
  j["calculation_time"] = r.calculation_time;
  j["volume_cm3"] = r.volume_cm3;
  j["hull_overestimate_percent"] = r.hull_overestimate_percent ? Json(*r.hull_overestimate_percent) : Json(nullptr);
  j["volume_source"] = r.volume_source;
  return j;
}

inline MetricsRecord metrics_from_json(const Json& j) {
  if (!j.is_object()) fail(ErrorKind::Validation, "metrics record must be an object");
  MetricsRecord r;
  r.name = json_value<std::string>(j, "name", "");
  if (j.contains("photo_count") && !j["photo_count"].is_null()) r.photo_count = j["photo_count"].get<long>();
  if (j.contains("point_count") && !j["point_count"].is_null()) r.point_count = j["point_count"].get<long>();
  r.surface_count = json_value<long>(j, "surface_count", 0);
  r.vertex_count = json_value<long>(j, "vertex_count", 0);
  r.calculation_time = json_value<std::string>(j, "calculation_time", "");
  r.volume_cm3 = json_value<double>(j, "volume_cm3", 0.0);
  if (j.contains("hull_overestimate_percent") && !j["hull_overestimate_percent"].is_null())
    r.hull_overestimate_percent = j["hull_overestimate_percent"].get<double>();
  r.volume_source = json_value<std::string>(j, "volume_source", "");
  r.validate();
  return r;
}

/// metrics.json: {"schema_version": 1, "locale_note": ..., "vessels": [...]}
inline Json metrics_json(std::span<const MetricsRecord> records, const Json& extra = Json::object()) {
  Json vessels = Json::array();
  for (const auto& r : records) vessels.push_back(to_json(r));
  Json j{{"schema_version", 1}, {"locale_note", kLocaleNote}, {"vessels", vessels}};
  if (!extra.empty()) j["details"] = extra;
  return j;
}

inline std::vector<MetricsRecord> metrics_from_document(const Json& doc) {
  const Json& list = doc.is_array() ? doc : doc.contains("vessels") ? doc["vessels"] : doc;
  if (!list.is_array()) fail(ErrorKind::Validation, "metrics document needs a \"vessels\" array");
  std::vector<MetricsRecord> out;
  for (const Json& r : list) out.push_back(metrics_from_json(r));
  return out;
}

}  // namespace sherdkit
