#pragma once

// Synthetic scenario files: a vessel profile plus a fracture plan in, sherd
// meshes plus a ground-truth manifest out.

#include "sherdkit/json_io.hpp"
#include "sherdkit/mesh_io.hpp"
#include "sherdkit/synth.hpp"

namespace sherdkit {

struct Scenario {
  VesselProfile profile;
  FracturePlan plan;
  std::vector<double> rim_heights;  // mm; outer-wall vertices near these heights become rim selections
  double rim_band = 0.5;            // mm either side of each height
  MeshFormat format = MeshFormat::Ply;
};

inline Scenario scenario_from_json(const Json& j) {
  if (!j.is_object()) fail(ErrorKind::Validation, "scenario must be a JSON object");
  Scenario s;
  if (!j.contains("profile") || !j["profile"].contains("rows")) fail(ErrorKind::Validation, "scenario needs profile.rows");
  const Json& p = j["profile"];
  for (const Json& r : p["rows"]) {
    if (!r.is_array() || r.size() != 3) fail(ErrorKind::Validation, "profile rows are [height, outer_radius, wall_thickness]");
    s.profile.control.push_back({r[0].get<double>(), r[1].get<double>(), r[2].get<double>()});
  }
  s.profile.segments = json_value(p, "segments", s.profile.segments);
  if (j.contains("fracture")) {
    const Json& f = j["fracture"];
    s.plan.seed_count = json_value(f, "seed_count", s.plan.seed_count);
    s.plan.rng_seed = json_value(f, "rng_seed", s.plan.rng_seed);
    s.plan.noise_sigma = json_value(f, "noise_sigma", s.plan.noise_sigma);
    s.plan.scatter = json_value(f, "scatter", s.plan.scatter);
    s.plan.scatter_range = json_value(f, "scatter_range", s.plan.scatter_range);
    s.plan.coverage = json_value(f, "coverage", s.plan.coverage);
  }
  if (j.contains("rim_heights")) s.rim_heights = j["rim_heights"].get<std::vector<double>>();
  s.rim_band = json_value(j, "rim_band", s.rim_band);
  s.format = parse_mesh_format(json_value<std::string>(j, "format", "ply"));
  if (s.format == MeshFormat::Auto) fail(ErrorKind::Validation, "scenario format must be obj, ply or stl");
  validate(s.profile);
  return s;
}

inline Json to_json(const Scenario& s) {
  Json rows = Json::array();
  for (const auto& r : s.profile.control) rows.push_back(Json::array({r.height, r.outer_radius, r.wall_thickness}));
  const char* fmt = s.format == MeshFormat::Obj ? "obj" : s.format == MeshFormat::Stl ? "stl" : "ply";
  return Json{{"profile", {{"rows", rows}, {"segments", s.profile.segments}}},
              {"fracture",
               {{"seed_count", s.plan.seed_count},
                {"rng_seed", s.plan.rng_seed},
                {"noise_sigma", s.plan.noise_sigma},
                {"scatter", s.plan.scatter},
                {"scatter_range", s.plan.scatter_range},
                {"coverage", s.plan.coverage}}},
              {"rim_heights", s.rim_heights},
              {"rim_band", s.rim_band},
              {"format", fmt}};
}

/// Outer-wall vertices of a sherd within `band` of each height, in the
/// sherd's current frame. Heights with fewer than 3 such vertices are skipped.
inline std::vector<std::vector<Vec3>> rim_selections(const Sherd& s, std::span<const double> heights, double band) {
  const RigidTransform back = s.true_pose.inverse();
  const auto normals = vertex_normals(s.mesh);
  std::vector<std::vector<Vec3>> out;
  for (double h : heights) {
    std::vector<Vec3> sel;
    for (std::size_t i = 0; i < s.mesh.vertex_count(); ++i) {
      const Vec3 p = back(s.mesh.vertex(static_cast<Index>(i)));
      const Vec3 n = back.rotation * normals[i];
      const Vec3 radial(p.x(), p.y(), 0.0);
      if (std::abs(p.z() - h) <= band && radial.norm() > 0 && n.dot(radial.normalized()) > 0.5)
        sel.push_back(s.mesh.vertex(static_cast<Index>(i)));
    }
    if (sel.size() >= 3) out.push_back(std::move(sel));
  }
  return out;
}

struct ScenarioOutput {
  Vessel vessel;
  std::vector<Sherd> sherds;
  Json manifest;
};

inline const char* extension(MeshFormat f) { return f == MeshFormat::Obj ? ".obj" : f == MeshFormat::Stl ? ".stl" : ".ply"; }

/// Generates, fractures and (when `out_dir` is non-empty) writes
/// vessel.<ext>, sherd_NN.<ext> and manifest.json.
inline ScenarioOutput run_scenario(const Scenario& s, const std::filesystem::path& out_dir = {}) {
  ScenarioOutput o;
  o.vessel = generate_vessel(s.profile);
  o.sherds = fracture(o.vessel.mesh, s.plan);
  const std::string ext = extension(s.format);

  Json sherds = Json::array();
  for (std::size_t i = 0; i < o.sherds.size(); ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "sherd_%02zu", i);
    Json rims = Json::array();
    for (const auto& sel : rim_selections(o.sherds[i], s.rim_heights, s.rim_band)) {
      Json pts = Json::array();
      for (const Vec3& p : sel) pts.push_back(to_json(p));
      rims.push_back(pts);
    }
    sherds.push_back(Json{{"id", id},
                          {"mesh", std::string(id) + ext},
                          {"triangles", o.sherds[i].mesh.triangle_count()},
                          {"vertices", o.sherds[i].mesh.vertex_count()},
                          {"true_pose", to_json(o.sherds[i].true_pose)},
                          {"rims", rims}});
  }
  o.manifest = Json{{"schema_version", 1},
                    {"scenario", to_json(s)},
                    {"analytic",
                     {{"enclosed_volume_cm3", o.vessel.enclosed_volume_cm3},
                      {"wall_volume_cm3", o.vessel.wall_volume_cm3},
                      {"outer_volume_cm3", o.vessel.outer_volume_cm3}}},
                    {"vessel_mesh", "vessel" + ext},
                    {"sherds", sherds}};

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    save_mesh(o.vessel.mesh, out_dir / ("vessel" + ext), s.format);
    for (std::size_t i = 0; i < o.sherds.size(); ++i)
      save_mesh(o.sherds[i].mesh, out_dir / sherds[i]["mesh"].get<std::string>(), s.format);
    io_detail::write_file(out_dir / "manifest.json", o.manifest.dump(2) + "\n");
  }
  return o;
}

}  // namespace sherdkit
