#pragma once

// JSON conversions for the geometric value types (nlohmann::json).

#include "sherdkit/register.hpp"

#include "json.hpp"

namespace sherdkit {

using Json = nlohmann::ordered_json;

namespace json_detail {

[[noreturn]] inline void bad(const std::string& where, const std::string& what) {
  fail(ErrorKind::Validation, where + ": " + what);
}

}  // namespace json_detail

inline Json to_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

inline Vec3 vec3_from_json(const Json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) json_detail::bad(where, "expected an array of 3 numbers");
  Vec3 v;
  for (int i = 0; i < 3; ++i) {
    if (!j[i].is_number()) json_detail::bad(where, "expected an array of 3 numbers");
    v[i] = j[i].get<double>();
  }
  if (!is_finite(v)) json_detail::bad(where, "non-finite coordinate");
  return v;
}

inline std::vector<Vec3> points_from_json(const Json& j, const std::string& where) {
  if (!j.is_array()) json_detail::bad(where, "expected an array of points");
  std::vector<Vec3> pts;
  for (std::size_t i = 0; i < j.size(); ++i) pts.push_back(vec3_from_json(j[i], where + "[" + std::to_string(i) + "]"));
  return pts;
}

/// {"rotation": 9 numbers row-major, "translation": 3 numbers}
inline Json to_json(const RigidTransform& t) {
  Json r = Json::array();
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) r.push_back(t.rotation(i, k));
  return Json{{"rotation", r}, {"translation", to_json(t.translation)}};
}

inline RigidTransform pose_from_json(const Json& j, const std::string& where) {
  if (!j.is_object()) json_detail::bad(where, "expected an object with rotation and translation");
  RigidTransform t;
  if (j.contains("rotation")) {
    const Json& r = j["rotation"];
    if (!r.is_array() || r.size() != 9) json_detail::bad(where, "rotation must be 9 numbers, row-major");
    for (int i = 0; i < 9; ++i) {
      if (!r[i].is_number()) json_detail::bad(where, "rotation must be 9 numbers, row-major");
      t.rotation(i / 3, i % 3) = r[i].get<double>();
    }
  }
  if (j.contains("translation")) t.translation = vec3_from_json(j["translation"], where + ".translation");
  if (!t.is_rigid(1e-6)) json_detail::bad(where, "rotation is not orthonormal with determinant +1");
  t.rotation = orthonormalize(t.rotation);
  return t;
}

inline Json to_json(const Box& b) { return Json{{"min", to_json(b.min)}, {"max", to_json(b.max)}}; }

inline Box box_from_json(const Json& j, const std::string& where) {
  if (!j.is_object() || !j.contains("min") || !j.contains("max")) json_detail::bad(where, "expected {\"min\": [..], \"max\": [..]}");
  Box b(vec3_from_json(j["min"], where + ".min"), vec3_from_json(j["max"], where + ".max"));
  if (b.empty()) json_detail::bad(where, "box min exceeds max");
  return b;
}

template <class T>
T json_value(const Json& j, const char* key, T fallback) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  try {
    return j[key].get<T>();
  } catch (const nlohmann::json::exception&) {
    json_detail::bad(key, "has the wrong type");
  }
}

inline Json parse_json_text(const std::string& text, const std::string& name) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::Parse, name + ": " + e.what());
  }
}

}  // namespace sherdkit
