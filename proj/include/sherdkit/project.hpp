#pragma once

// Project files and the end-to-end pipeline runner.
//
// A project is one JSON document:
//
//   {
//     "schema_version": 1,
//     "name": "...",
//     "units": "mm" | "cm" | "m",
//     "up_axis": "x" | "y" | "z",
//     "output_dir": "out",
//     "fragments": [ { "id", "mesh", "calibration"?, "seed_pose"?, "rims"? } ],
//     "vessels":   [ { "name", "fragments": [ids], "photos"?, "points"?, "calculation_time"? } ],
//     "tasks":     [ { "task": "<verb>", ... } ]
//   }
//
// Coordinates inside fragment entries (calibration points, rim points and
// boxes, crop boxes) are in the mesh file's own frame and units; the runner
// maps them the same way it maps the mesh. Seed poses, targets and support
// parameters are in millimetres in the vessel frame.
//
// Vessel meshes are named by source: "revolve", "hull", "poisson" (the last
// reconstruction), "poisson-inner" / "poisson-outer" / "poisson-all" (by
// sheet), or "auto" (poisson, then revolve, then hull).

#include "sherdkit/build_split.hpp"
#include "sherdkit/calibrate.hpp"
#include "sherdkit/crop.hpp"
#include "sherdkit/implicit.hpp"
#include "sherdkit/json_io.hpp"
#include "sherdkit/mesh_io.hpp"
#include "sherdkit/profile.hpp"
#include "sherdkit/report.hpp"
#include "sherdkit/support.hpp"

#include <chrono>
#include <functional>
#include <map>
#include <set>

namespace sherdkit {

inline constexpr int kProjectSchemaVersion = 1;

enum class Units { Mm, Cm, M };

inline Units parse_units(const std::string& s) {
  if (s == "mm") return Units::Mm;
  if (s == "cm") return Units::Cm;
  if (s == "m") return Units::M;
  fail(ErrorKind::Validation, "units must be mm, cm or m, not '" + s + "'");
}

inline double to_mm(Units u) { return u == Units::Mm ? 1.0 : u == Units::Cm ? 10.0 : 1000.0; }

/// Rotation taking the declared up axis to +Z.
inline Mat3 up_axis_rotation(const std::string& axis) {
  if (axis == "z") return Mat3::Identity();
  if (axis == "y") return Eigen::AngleAxisd(kPi / 2, Vec3::UnitX()).toRotationMatrix();
  if (axis == "x") return Eigen::AngleAxisd(-kPi / 2, Vec3::UnitY()).toRotationMatrix();
  fail(ErrorKind::Validation, "up_axis must be x, y or z, not '" + axis + "'");
}

struct RimSelection {
  std::vector<Vec3> points;  // explicit picks, or
  std::optional<Box> box;    // every vertex inside
};

struct CalibrationSpec {
  Vec3 point_a = Vec3::Zero();
  Vec3 point_b = Vec3::Zero();
  double real_distance = 0.0;  // mm
};

struct FragmentSpec {
  std::string id;
  std::filesystem::path mesh;
  std::optional<CalibrationSpec> calibration;
  std::optional<RigidTransform> seed_pose;
  std::vector<RimSelection> rims;
};

struct VesselSpec {
  std::string name;
  std::vector<std::string> fragments;
  std::optional<long> photos;
  std::optional<long> points;
  std::string calculation_time;
};

struct Task {
  std::string verb;
  Json params;
};

struct Project {
  int schema_version = kProjectSchemaVersion;
  std::string name;
  Units units = Units::Mm;
  std::string up_axis = "z";
  std::filesystem::path base_dir;
  std::filesystem::path output_dir;
  std::vector<FragmentSpec> fragments;
  std::vector<VesselSpec> vessels;
  std::vector<Task> tasks;
};

inline const std::set<std::string>& task_verbs() {
  static const std::set<std::string> v{"scale", "crop",  "fit-rim", "skeleton", "revolve", "hull-volume", "align-z", "icp",
                                       "merge", "poisson", "volume", "support", "split",   "engrave",     "report"};
  return v;
}

namespace project_detail {

[[noreturn]] inline void invalid(const std::string& what) { fail(ErrorKind::Validation, what); }

inline std::string str(const Json& j, const char* key, const std::string& where) {
  if (!j.contains(key) || !j[key].is_string()) invalid(where + ": missing string \"" + key + "\"");
  return j[key].get<std::string>();
}

inline std::vector<std::string> str_list(const Json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) return {};
  if (!j[key].is_array()) invalid(where + ": \"" + key + "\" must be an array of strings");
  std::vector<std::string> out;
  for (const Json& s : j[key]) {
    if (!s.is_string()) invalid(where + ": \"" + key + "\" must be an array of strings");
    out.push_back(s.get<std::string>());
  }
  return out;
}

}  // namespace project_detail

/// Parses and validates a project document. The task list is checked first,
/// before any file is looked at; then fragment ids, vessel names and task
/// references; then (when `check_files`) that every mesh path exists.
inline Project parse_project(const Json& j, const std::filesystem::path& base_dir, bool check_files = true) {
  using project_detail::invalid;
  if (!j.is_object()) invalid("project must be a JSON object");
  if (!j.contains("tasks") || !j["tasks"].is_array() || j["tasks"].empty()) invalid("project has an empty task list");

  Project p;
  p.base_dir = base_dir;
  p.schema_version = json_value(j, "schema_version", 0);
  if (p.schema_version != kProjectSchemaVersion)
    invalid("unsupported schema_version " + std::to_string(p.schema_version) + " (expected " + std::to_string(kProjectSchemaVersion) + ")");
  p.name = json_value<std::string>(j, "name", "");
  if (!j.contains("units")) invalid("project must declare its units (mm, cm or m)");
  p.units = parse_units(project_detail::str(j, "units", "project"));
  if (!j.contains("up_axis")) invalid("project must declare its up_axis (x, y or z)");
  p.up_axis = project_detail::str(j, "up_axis", "project");
  up_axis_rotation(p.up_axis);
  p.output_dir = json_value<std::string>(j, "output_dir", "out");
  if (p.output_dir.is_relative()) p.output_dir = base_dir / p.output_dir;

  std::set<std::string> ids;
  if (j.contains("fragments")) {
    if (!j["fragments"].is_array()) invalid("fragments must be an array");
    for (std::size_t i = 0; i < j["fragments"].size(); ++i) {
      const Json& f = j["fragments"][i];
      const std::string where = "fragments[" + std::to_string(i) + "]";
      FragmentSpec fs;
      fs.id = project_detail::str(f, "id", where);
      if (!ids.insert(fs.id).second) invalid("duplicate fragment id '" + fs.id + "'");
      fs.mesh = project_detail::str(f, "mesh", where);
      if (fs.mesh.is_relative()) fs.mesh = base_dir / fs.mesh;
      if (f.contains("calibration")) {
        const Json& c = f["calibration"];
        CalibrationSpec cs{vec3_from_json(c.value("point_a", Json()), where + ".calibration.point_a"),
                           vec3_from_json(c.value("point_b", Json()), where + ".calibration.point_b"),
                           json_value(c, "real_distance_mm", 0.0)};
        if (!(cs.real_distance > 0)) invalid(where + ".calibration: real_distance_mm must be positive");
        if ((cs.point_a - cs.point_b).norm() == 0) invalid(where + ".calibration: points coincide");
        fs.calibration = cs;
      }
      if (f.contains("seed_pose")) fs.seed_pose = pose_from_json(f["seed_pose"], where + ".seed_pose");
      if (f.contains("rims")) {
        if (!f["rims"].is_array()) invalid(where + ".rims must be an array");
        for (std::size_t r = 0; r < f["rims"].size(); ++r) {
          const Json& rs = f["rims"][r];
          const std::string rw = where + ".rims[" + std::to_string(r) + "]";
          RimSelection sel;
          if (rs.is_array())
            sel.points = points_from_json(rs, rw);
          else if (rs.is_object() && rs.contains("points"))
            sel.points = points_from_json(rs["points"], rw + ".points");
          else if (rs.is_object() && rs.contains("box"))
            sel.box = box_from_json(rs["box"], rw + ".box");
          else
            invalid(rw + ": expected a point list or {\"box\": ...}");
          if (!sel.box && sel.points.size() < 3) invalid(rw + ": a rim needs at least 3 points");
          fs.rims.push_back(std::move(sel));
        }
      }
      p.fragments.push_back(std::move(fs));
    }
  }

  // Fragments made by merge tasks may be referenced by vessels too.
  std::set<std::string> known = ids;
  for (const Json& t : j["tasks"])
    if (t.is_object() && t.value("task", "") == "merge" && t.contains("id") && t["id"].is_string()) {
      const std::string id = t["id"].get<std::string>();
      if (!known.insert(id).second) invalid("merge output id '" + id + "' clashes with another fragment");
    }

  std::set<std::string> names;
  if (j.contains("vessels")) {
    for (std::size_t i = 0; i < j["vessels"].size(); ++i) {
      const Json& v = j["vessels"][i];
      const std::string where = "vessels[" + std::to_string(i) + "]";
      VesselSpec vs;
      vs.name = project_detail::str(v, "name", where);
      if (!names.insert(vs.name).second) invalid("duplicate vessel name '" + vs.name + "'");
      vs.fragments = project_detail::str_list(v, "fragments", where);
      for (const auto& f : vs.fragments)
        if (!known.count(f)) invalid(where + ": unknown fragment '" + f + "'");
      if (v.contains("photos") && !v["photos"].is_null()) vs.photos = v["photos"].get<long>();
      if (v.contains("points") && !v["points"].is_null()) vs.points = v["points"].get<long>();
      vs.calculation_time = json_value<std::string>(v, "calculation_time", "");
      p.vessels.push_back(std::move(vs));
    }
  }

  for (std::size_t i = 0; i < j["tasks"].size(); ++i) {
    const Json& t = j["tasks"][i];
    const std::string where = "tasks[" + std::to_string(i) + "]";
    if (!t.is_object()) invalid(where + " must be an object");
    Task task{project_detail::str(t, "task", where), t};
    if (!task_verbs().count(task.verb)) invalid(where + ": unknown task '" + task.verb + "'");
    for (const char* key : {"fragment", "inner", "outer"})
      if (t.contains(key) && !known.count(t[key].get<std::string>()))
        invalid(where + ": unknown fragment '" + t[key].get<std::string>() + "'");
    for (const auto& f : project_detail::str_list(t, "fragments", where))
      if (!known.count(f)) invalid(where + ": unknown fragment '" + f + "'");
    if (t.contains("vessel") && !names.count(t["vessel"].get<std::string>()))
      invalid(where + ": unknown vessel '" + t["vessel"].get<std::string>() + "'");
    const bool needs_vessel = task.verb == "skeleton" || task.verb == "revolve" || task.verb == "hull-volume" ||
                              task.verb == "poisson" || task.verb == "volume" || task.verb == "support" ||
                              task.verb == "split" || task.verb == "engrave";
    if (needs_vessel && !t.contains("vessel")) invalid(where + ": task '" + task.verb + "' needs a \"vessel\"");
    if ((task.verb == "align-z" || task.verb == "merge") && (!t.contains("inner") || !t.contains("outer")))
      invalid(where + ": task '" + task.verb + "' needs \"inner\" and \"outer\"");
    if (task.verb == "merge" && !t.contains("id")) invalid(where + ": merge needs an output \"id\"");
    if (task.verb == "crop" && (!t.contains("fragment") || !t.contains("box")))
      invalid(where + ": crop needs \"fragment\" and \"box\"");
    p.tasks.push_back(std::move(task));
  }

  if (check_files)
    for (const auto& f : p.fragments)
      if (!std::filesystem::exists(f.mesh)) invalid("fragment '" + f.id + "': mesh file not found: " + f.mesh.string());
  return p;
}

inline Project load_project(const std::filesystem::path& path) {
  const Json j = parse_json_text(io_detail::read_file(path), path.string());
  return parse_project(j, path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
}

// ---------------------------------------------------------------------------

struct RunOptions {
  std::optional<int> grid;       // Poisson grid override
  std::optional<int> segments;   // revolve / hull sampling override
  std::optional<std::filesystem::path> output_dir;
  std::function<void(const std::string&)> log;  // progress lines, wall-clock included
};

/// A failed task: kind, message and where it happened, as a JSON record.
class PipelineError : public Error {
 public:
  PipelineError(ErrorKind kind, const std::string& what, Json record) : Error(kind, what), record_(std::move(record)) {}
  const Json& record() const { return record_; }

 private:
  Json record_;
};

// timings.json is the one output that differs between runs.
inline constexpr const char* kTimingsNote =
    "Wall-clock of this pipeline's own tasks on this machine, in ms. Not the photogrammetry time of the report's "
    "Calculation time column.";

struct RunResult {
  std::vector<MetricsRecord> records;
  Json details;
  std::vector<std::filesystem::path> files;  // everything written, in order
};

namespace project_detail {

struct FragmentState {
  std::string id;
  TriangleMesh mesh;  // millimetres, +Z up, in the fragment's own frame
  double scale = 1.0;  // raw file units -> current frame
  Mat3 axes = Mat3::Identity();
  std::optional<ScaleCalibration> calibration;
  double calibration_distance = 0.0;
  std::optional<RigidTransform> pose;  // fragment frame -> vessel frame
  std::vector<RimSelection> rims;
  std::vector<CircleFit> circles;  // fragment frame
  long source_triangles = 0;
  long source_vertices = 0;

  Vec3 map(const Vec3& raw) const { return scale * (axes * raw); }
  Box map(const Box& raw) const {
    Box b;
    for (int c = 0; c < 8; ++c) b.extend(map(Vec3(c & 1 ? raw.max.x() : raw.min.x(), c & 2 ? raw.max.y() : raw.min.y(),
                                                  c & 4 ? raw.max.z() : raw.min.z())));
    return b;
  }
  TriangleMesh posed() const { return pose ? transformed(mesh, *pose) : mesh; }
};

struct VesselState {
  std::optional<ProfileSkeleton> skeleton;
  std::optional<TriangleMesh> revolve;
  std::optional<double> revolve_volume;
  std::optional<SkeletonHull> hull;
  std::optional<Reconstruction> poisson;  // most recent
  std::map<std::string, TriangleMesh> poisson_sheets;
  std::optional<double> volume;
  std::string volume_source;
  std::optional<SupportResult> support;
  std::optional<Json> split_params;
  std::vector<TriangleMesh> parts;
};

class Runner {
 public:
  Runner(const Project& p, const RunOptions& o) : p_(p), o_(o) {
    out_ = o.output_dir ? *o.output_dir : p.output_dir;
    for (const auto& v : p.vessels) vessel_specs_[v.name] = &v;
    for (const auto& f : p.fragments) fragment_specs_[f.id] = &f;
  }

  RunResult run() {
    std::filesystem::create_directories(out_);
    details_ = Json{{"project", p_.name}, {"tasks", Json::array()}};
    Json timings = Json::array();
    for (const auto& f : p_.fragments) load_fragment(f);
    for (std::size_t i = 0; i < p_.tasks.size(); ++i) {
      const Task& t = p_.tasks[i];
      const auto start = std::chrono::steady_clock::now();
      current_ = &t;
      try {
        task_details_ = Json{{"task", t.verb}};
        dispatch(t);
        details_["tasks"].push_back(task_details_);
      } catch (const PipelineError&) {
        throw;
      } catch (const Error& e) {
        throw PipelineError(e.kind(), e.what(), error_record(i, t, to_string(e.kind()), e.what()));
      } catch (const std::exception& e) {
        throw PipelineError(ErrorKind::InvalidArgument, e.what(), error_record(i, t, "internal", e.what()));
      }
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      timings.push_back(Json{{"task_index", i}, {"task", t.verb}, {"wall_clock_ms", std::round(ms)}});
      if (o_.log) {
        char buf[64];
        std::snprintf(buf, sizeof buf, " (%.0f ms wall-clock)", ms);
        o_.log("task " + std::to_string(i + 1) + "/" + std::to_string(p_.tasks.size()) + " " + t.verb + buf);
      }
    }
    write_report();
    write_poses();
    write("timings.json", Json{{"note", kTimingsNote}, {"tasks", timings}}.dump(2) + "\n");
    return {records(), details_, files_};
  }

 private:
  Json error_record(std::size_t i, const Task& t, const std::string& kind, const std::string& message) const {
    Json r{{"status", "error"}, {"task_index", i}, {"task", t.verb}, {"kind", kind}, {"message", message}};
    for (const char* key : {"fragment", "vessel", "inner", "outer"})
      if (t.params.contains(key)) r[key] = t.params[key];
    if (!focus_.empty()) r["fragment"] = focus_;
    return r;
  }

  void log(const std::string& s) const {
    if (o_.log) o_.log(s);
  }

  std::filesystem::path write(const std::string& name, const std::string& data) {
    const auto path = out_ / name;
    io_detail::write_file(path, data);
    files_.push_back(path);
    return path;
  }
  void write_mesh(const std::string& name, const TriangleMesh& m) {
    const auto path = out_ / name;
    save_mesh(m, path);
    files_.push_back(path);
  }

  void load_fragment(const FragmentSpec& f) {
    focus_ = f.id;
    FragmentState s;
    s.id = f.id;
    const TriangleMesh raw = load_mesh(f.mesh);
    s.source_triangles = static_cast<long>(raw.triangle_count());
    s.source_vertices = static_cast<long>(raw.vertex_count());
    s.scale = to_mm(p_.units);
    s.axes = up_axis_rotation(p_.up_axis);
    Eigen::Affine3d a = Eigen::Affine3d::Identity();
    a.linear() = s.scale * s.axes;
    s.mesh = transformed(raw, a);
    s.pose = f.seed_pose;
    s.rims = f.rims;
    fragments_[f.id] = std::move(s);
    focus_.clear();
  }

  FragmentState& fragment(const std::string& id) {
    auto it = fragments_.find(id);
    if (it == fragments_.end()) fail(ErrorKind::Validation, "fragment '" + id + "' does not exist yet");
    return it->second;
  }

  std::vector<std::string> task_fragments(const Json& t, const std::string& vessel = {}) {
    auto list = str_list(t, "fragments", "task");
    if (!list.empty() || t.contains("fragments")) return list;
    if (t.contains("fragment")) return {t["fragment"].get<std::string>()};
    if (!vessel.empty()) return vessel_specs_.at(vessel)->fragments;
    std::vector<std::string> all;
    for (const auto& f : p_.fragments) all.push_back(f.id);
    return all;
  }

  int segments(const Json& t) const { return json_value(t, "segments", o_.segments.value_or(128)); }

  void dispatch(const Task& t) {
    const Json& j = t.params;
    const std::string vessel = json_value<std::string>(j, "vessel", "");
    if (!vessel.empty()) task_details_["vessel"] = vessel;
    if (t.verb == "scale") return do_scale(j);
    if (t.verb == "crop") return do_crop(j);
    if (t.verb == "fit-rim") return do_fit_rim(j);
    if (t.verb == "skeleton") return do_skeleton(j, vessel);
    if (t.verb == "revolve") return do_revolve(j, vessel);
    if (t.verb == "hull-volume") return do_hull(j, vessel);
    if (t.verb == "align-z") return do_align(j);
    if (t.verb == "merge") return do_merge(j);
    if (t.verb == "icp") return do_icp(j, vessel);
    if (t.verb == "poisson") return do_poisson(j, vessel);
    if (t.verb == "volume") return do_volume(j, vessel);
    if (t.verb == "support") return do_support(j, vessel);
    if (t.verb == "split") return do_split(j, vessel);
    if (t.verb == "engrave") return do_engrave(j, vessel);
    if (t.verb == "report") return write_report();
    fail(ErrorKind::Validation, "unknown task '" + t.verb + "'");
  }

  void do_scale(const Json& j) {
    Json out = Json::array();
    for (const auto& id : task_fragments(j)) {
      const FragmentSpec* spec = fragment_specs_.count(id) ? fragment_specs_.at(id) : nullptr;
      if (!spec || !spec->calibration) {
        if (j.contains("fragments") || j.contains("fragment"))
          fail(ErrorKind::Validation, "fragment '" + id + "' has no calibration block");
        continue;
      }
      focus_ = id;
      auto& f = fragment(id);
      if (f.calibration) fail(ErrorKind::Validation, "fragment '" + id + "' is already calibrated");
      const auto& c = *spec->calibration;
      const ScaleCalibration cal = compute_factor(f.map(c.point_a), f.map(c.point_b), c.real_distance);
      f.mesh = apply_scale(f.mesh, cal);
      f.scale *= cal.factor;
      f.calibration = cal;
      f.calibration_distance = c.real_distance;
      out.push_back(Json{{"fragment", id}, {"factor", cal.factor}, {"measured_mm", cal.measured_distance()},
                         {"real_distance_mm", cal.real_distance}});
      focus_.clear();
    }
    task_details_["calibrations"] = out;
  }

  void do_crop(const Json& j) {
    const std::string id = j["fragment"].get<std::string>();
    focus_ = id;
    auto& f = fragment(id);
    const Box box = f.map(box_from_json(j["box"], "crop.box"));
    const auto keep = parse_crop_keep(json_value<std::string>(j, "keep", "outside"));
    const std::size_t before = f.mesh.triangle_count();
    f.mesh = crop_fragment(f.mesh, box, keep);
    task_details_["fragment"] = id;
    task_details_["removed_triangles"] = before - f.mesh.triangle_count();
    focus_.clear();
  }

  void do_fit_rim(const Json& j) {
    Json out = Json::array();
    for (const auto& id : task_fragments(j)) {
      auto& f = fragment(id);
      if (f.rims.empty()) {
        if (j.contains("fragment") || j.contains("fragments")) fail(ErrorKind::Validation, "fragment '" + id + "' has no rim selections");
        continue;
      }
      focus_ = id;
      f.circles.clear();
      for (const auto& sel : f.rims) {
        std::vector<Vec3> pts;
        if (sel.box) {
          const Box b = f.map(*sel.box);
          for (const Vec3& v : f.mesh.vertices())
            if (b.contains(v)) pts.push_back(v);
        } else {
          for (const Vec3& v : sel.points) pts.push_back(f.map(v));
        }
        if (pts.size() < 3) fail(ErrorKind::Validation, "rim selection on '" + id + "' holds fewer than 3 points");
        const CircleFit fit = fit_circle(pts);
        f.circles.push_back(fit);
        out.push_back(Json{{"fragment", id},
                           {"center", to_json(fit.circle.center)},
                           {"radius", fit.circle.radius},
                           {"normal", to_json(fit.circle.normal)},
                           {"rms_residual", fit.rms_residual},
                           {"points", pts.size()},
                           {"refinement_failed", fit.refinement_failed}});
      }
      focus_.clear();
    }
    task_details_["circles"] = out;
  }

  void do_skeleton(const Json& j, const std::string& vessel) {
    std::vector<Circle3D> circles;
    for (const auto& id : task_fragments(j, vessel)) {
      const auto& f = fragment(id);
      for (const auto& c : f.circles) {
        Circle3D cc = c.circle;
        if (f.pose) {
          cc.center = f.pose->apply(cc.center);
          cc.normal = f.pose->rotation * cc.normal;
        }
        circles.push_back(cc);
      }
    }
    if (circles.size() < 2) fail(ErrorKind::Validation, "vessel '" + vessel + "' has fewer than 2 fitted rim circles; run fit-rim first");
    auto& v = vessels_[vessel];
    v.skeleton = build_skeleton(circles, json_value(j, "bottom_closed", true));
    write(vessel + "_skeleton.csv", skeleton_csv(*v.skeleton));
    task_details_["rings"] = v.skeleton->rings.size();
    task_details_["coaxiality_rms_mm"] = v.skeleton->coaxiality_rms;
  }

  const ProfileSkeleton& skeleton_of(const std::string& vessel) {
    auto& v = vessels_[vessel];
    if (!v.skeleton) fail(ErrorKind::Validation, "vessel '" + vessel + "' has no skeleton; run skeleton first");
    return *v.skeleton;
  }

  void do_revolve(const Json& j, const std::string& vessel) {
    const auto& s = skeleton_of(vessel);
    auto& v = vessels_[vessel];
    v.revolve = revolve(s, segments(j));
    v.revolve_volume = enclosed_volume(*v.revolve);
    write_mesh(vessel + "_revolve.ply", *v.revolve);
    task_details_["volume_cm3"] = *v.revolve_volume;
  }

  void do_hull(const Json& j, const std::string& vessel) {
    const auto& s = skeleton_of(vessel);
    auto& v = vessels_[vessel];
    v.hull = skeleton_hull_volume(s, segments(j));
    write_mesh(vessel + "_hull.ply", v.hull->hull);
    task_details_["volume_cm3"] = v.hull->hull_volume_cm3;
    task_details_["revolve_volume_cm3"] = v.hull->revolve_volume_cm3;
    task_details_["gap_percent"] = v.hull->gap_percent;
  }

  void check_shell_calibration(const FragmentState& a, const FragmentState& b) {
    if (a.calibration.has_value() != b.calibration.has_value())
      fail(ErrorKind::Validation, "shells '" + a.id + "' and '" + b.id + "' must both be calibrated, or neither");
    if (a.calibration) {
      const double da = a.calibration_distance, db = b.calibration_distance;
      if (std::abs(da - db) > 0.01 * std::max(da, db))
        fail(ErrorKind::Validation, "reference distances of '" + a.id + "' and '" + b.id + "' differ by more than 1%");
    }
  }

  void do_align(const Json& j) {
    const std::string in = j["inner"].get<std::string>(), out = j["outer"].get<std::string>();
    const auto& a = fragment(in);
    const auto& b = fragment(out);
    check_shell_calibration(a, b);
    AlignZOptions opt;
    opt.theta_steps = json_value(j, "theta_steps", opt.theta_steps);
    opt.dz_min = json_value(j, "dz_min", opt.dz_min);
    opt.dz_max = json_value(j, "dz_max", opt.dz_max);
    opt.dz_steps = json_value(j, "dz_steps", opt.dz_steps);
    focus_ = in;
    const ZAlignment z = align_z(a.mesh, b.mesh, opt);
    focus_.clear();
    alignments_[{in, out}] = z;
    task_details_["inner"] = in;
    task_details_["outer"] = out;
    task_details_["theta_deg"] = z.theta * 180.0 / kPi;
    task_details_["dz_mm"] = z.dz;
    task_details_["mean_residual_mm"] = z.mean_residual;
    task_details_["degenerate"] = z.degenerate;
  }

  void do_merge(const Json& j) {
    const std::string in = j["inner"].get<std::string>(), out = j["outer"].get<std::string>();
    const std::string id = j["id"].get<std::string>();
    const auto& a = fragment(in);
    const auto& b = fragment(out);
    check_shell_calibration(a, b);
    ZAlignment z;
    if (j.contains("theta_deg") || j.contains("dz_mm")) {
      z.theta = json_value(j, "theta_deg", 0.0) * kPi / 180.0;
      z.dz = json_value(j, "dz_mm", 0.0);
    } else {
      auto it = alignments_.find({in, out});
      if (it == alignments_.end()) fail(ErrorKind::Validation, "no alignment for '" + in + "' and '" + out + "'; run align-z first");
      z = it->second;
    }
    FragmentState m;
    m.id = id;
    m.mesh = merge_shells(a.mesh, b.mesh, z);
    m.scale = b.scale;
    m.axes = b.axes;
    m.calibration = b.calibration;
    m.calibration_distance = b.calibration_distance;
    m.pose = b.pose;
    m.source_triangles = a.source_triangles + b.source_triangles;
    m.source_vertices = a.source_vertices + b.source_vertices;
    fragments_[id] = std::move(m);
    task_details_["id"] = id;
    task_details_["vertices"] = fragments_[id].mesh.vertex_count();
  }

  TriangleMesh target_mesh(const Json& j) {
    if (!j.contains("target")) fail(ErrorKind::Validation, "icp needs a \"target\"");
    const Json& t = j["target"];
    if (t.is_string() || t.contains("mesh")) {
      std::filesystem::path path = t.is_string() ? t.get<std::string>() : t["mesh"].get<std::string>();
      if (path.is_relative()) path = p_.base_dir / path;
      Eigen::Affine3d a = Eigen::Affine3d::Identity();
      a.linear() = to_mm(p_.units) * up_axis_rotation(p_.up_axis);
      return transformed(load_mesh(path), a);
    }
    if (t.contains("fragment")) return fragment(t["fragment"].get<std::string>()).posed();
    if (t.contains("vessel")) {
      const std::string v = t["vessel"].get<std::string>();
      const std::string src = json_value<std::string>(t, "source", "revolve");
      return vessel_mesh(v, src);
    }
    fail(ErrorKind::Validation, "icp target must name a mesh, fragment or vessel");
  }

  void do_icp(const Json& j, const std::string& vessel) {
    const TriangleMesh target = target_mesh(j);
    IcpOptions opt;
    opt.max_iterations = json_value(j, "max_iterations", opt.max_iterations);
    opt.convergence_mm = json_value(j, "convergence_mm", opt.convergence_mm);
    opt.rejection_factor = json_value(j, "rejection_factor", opt.rejection_factor);
    opt.rejection_radius = json_value(j, "rejection_radius_mm", opt.rejection_radius);
    Json out = Json::array();
    for (const auto& id : task_fragments(j, vessel)) {
      focus_ = id;
      auto& f = fragment(id);
      const IcpResult r = icp_rigid(f.mesh, target, f.pose.value_or(RigidTransform{}), opt);
      f.pose = r.pose;
      out.push_back(Json{{"fragment", id}, {"rms_mm", r.rms}, {"inlier_rms_mm", r.inlier_rms}, {"iterations", r.iterations},
                         {"converged", r.converged}, {"pose", to_json(r.pose)}});
      if (json_value(j, "write_posed", false)) write_mesh(id + "_posed.ply", f.posed());
      focus_.clear();
    }
    task_details_["registrations"] = out;
  }

  std::vector<TriangleMesh> posed_fragments(const std::vector<std::string>& ids) {
    std::vector<TriangleMesh> out;
    for (const auto& id : ids) out.push_back(fragment(id).posed());
    return out;
  }

  void do_poisson(const Json& j, const std::string& vessel) {
    ReconstructionSettings s;
    s.poisson.grid = json_value(j, "grid", o_.grid.value_or(s.poisson.grid));
    s.poisson.padding = json_value(j, "padding", s.poisson.padding);
    s.normal_neighbors = json_value<std::size_t>(j, "normal_neighbors", s.normal_neighbors);
    const std::string sheet = json_value<std::string>(j, "sheet", "all");
    s.sheet = parse_sheet_selection(sheet);
    s.cap_mouth = json_value(j, "cap_mouth", s.cap_mouth);
    s.mouth_band = json_value(j, "mouth_band", s.mouth_band);
    const auto ids = task_fragments(j, vessel);
    const auto posed = posed_fragments(ids);
    auto& v = vessels_[vessel];
    v.poisson = reconstruct_vessel(posed, s);
    v.poisson_sheets[sheet] = v.poisson->mesh;
    write_mesh(vessel + (sheet == "all" ? "" : "_" + sheet) + "_poisson.ply", v.poisson->mesh);
    task_details_["sheet"] = sheet;
    task_details_["volume_cm3"] = v.poisson->volume_cm3;
    task_details_["points"] = v.poisson->point_count;
    task_details_["cg_iterations"] = v.poisson->cg_iterations;
    task_details_["cg_relative_residual"] = v.poisson->cg_residual;
    task_details_["cg_converged"] = v.poisson->cg_converged;
    task_details_["touches_boundary"] = v.poisson->touches_boundary;
    if (v.poisson->mouth) task_details_["mouth_radius_mm"] = v.poisson->mouth->radius;
  }

  TriangleMesh vessel_mesh(const std::string& vessel, const std::string& source) {
    auto& v = vessels_[vessel];
    if (source == "revolve" && v.revolve) return *v.revolve;
    if (source == "hull" && v.hull) return v.hull->hull;
    if (source == "poisson" && v.poisson) return v.poisson->mesh;
    if (source.rfind("poisson-", 0) == 0) {
      auto it = v.poisson_sheets.find(source.substr(8));
      if (it != v.poisson_sheets.end()) return it->second;
    }
    if (source == "auto") {
      if (v.poisson) return v.poisson->mesh;
      if (v.revolve) return *v.revolve;
      if (v.hull) return v.hull->hull;
    }
    fail(ErrorKind::Validation, "vessel '" + vessel + "' has no " + source + " mesh yet");
  }

  void do_volume(const Json& j, const std::string& vessel) {
    const std::string source = json_value<std::string>(j, "source", "auto");
    auto& v = vessels_[vessel];
    const TriangleMesh m = vessel_mesh(vessel, source);
    v.volume = enclosed_volume(m);
    v.volume_source = source != "auto" ? source : v.poisson ? "poisson" : v.revolve ? "revolve" : "hull";
    task_details_["volume_cm3"] = *v.volume;
    task_details_["source"] = v.volume_source;
  }

  SupportSpec support_spec(const Json& j) const {
    SupportSpec s;
    s.shell_thickness = json_value(j, "shell_thickness", s.shell_thickness);
    s.clearance = json_value(j, "clearance", s.clearance);
    s.voxel_size = json_value(j, "voxel_size", s.voxel_size);
    s.label_text = json_value<std::string>(j, "label_text", "");
    s.label_depth = json_value(j, "label_depth", s.label_depth);
    if (j.contains("label_region")) s.label_region = box_from_json(j["label_region"], "support.label_region");
    return s;
  }

  void do_support(const Json& j, const std::string& vessel) {
    const TriangleMesh base = vessel_mesh(vessel, json_value<std::string>(j, "source", "auto"));
    const auto ids = task_fragments(j, vessel);
    const auto posed = posed_fragments(ids);
    const SupportSpec spec = support_spec(j);
    auto& v = vessels_[vessel];
    try {
      v.support = make_support(base, posed, spec, ids);
    } catch (const ProtrusionError& e) {
      write(vessel + "_protrusion.csv", protrusion_csv(e.report));
      throw;
    }
    write(vessel + "_protrusion.csv", protrusion_csv(v.support->protrusions));
    write_mesh(vessel + "_support.stl", v.support->mesh);
    v.parts.clear();
    task_details_["support_volume_cm3"] = mm3_to_cm3(std::abs(signed_volume_mm3(v.support->mesh)));
    task_details_["voxels"] = v.support->solid.count();
  }

  void do_split(const Json& j, const std::string& vessel) {
    auto& v = vessels_[vessel];
    if (!v.support) fail(ErrorKind::Validation, "vessel '" + vessel + "' has no support; run support first");
    v.split_params = j;
    split_support(vessel);
  }

  void split_support(const std::string& vessel) {
    auto& v = vessels_[vessel];
    const Json& j = *v.split_params;
    const Vec3 build = j.contains("build_volume") ? vec3_from_json(j["build_volume"], "split.build_volume") : Vec3(200, 200, 200);
    const SeamAxis seam = parse_seam_axis(json_value<std::string>(j, "seam", "auto"));
    v.parts = split_for_build(v.support->mesh, build, seam, json_value(j, "margin", kBuildMargin));
    Json vols = Json::array();
    for (std::size_t i = 0; i < v.parts.size(); ++i) {
      write_mesh(vessel + "_part_" + std::to_string(i + 1) + ".stl", v.parts[i]);
      vols.push_back(enclosed_volume(v.parts[i]));
    }
    task_details_["parts"] = v.parts.size();
    task_details_["part_volumes_cm3"] = vols;
  }

  void do_engrave(const Json& j, const std::string& vessel) {
    auto& v = vessels_[vessel];
    if (!v.support) fail(ErrorKind::Validation, "vessel '" + vessel + "' has no support; run support first");
    const std::string text = json_value<std::string>(j, "text", "");
    if (!j.contains("region")) fail(ErrorKind::Validation, "engrave needs a \"region\" box");
    const Box region = box_from_json(j["region"], "engrave.region");
    v.support->solid = engrave_label(v.support->solid, text, region, json_value(j, "depth", 1.0));
    v.support->mesh = laplacian_smooth(voxel_surface(v.support->solid), 2, 0.2);
    write_mesh(vessel + "_support.stl", v.support->mesh);
    task_details_["text"] = text;
    if (v.split_params) split_support(vessel);
  }

  std::vector<MetricsRecord> records() const {
    std::vector<MetricsRecord> out;
    for (const auto& spec : p_.vessels) {
      auto it = vessels_.find(spec.name);
      if (it == vessels_.end()) continue;
      const VesselState& v = it->second;
      MetricsRecord r;
      r.name = spec.name;
      r.photo_count = spec.photos;
      r.point_count = spec.points;
      r.calculation_time = spec.calculation_time;
      for (const auto& id : spec.fragments) {
        auto f = fragments_.find(id);
        if (f == fragments_.end()) continue;
        r.surface_count += f->second.source_triangles;
        r.vertex_count += f->second.source_vertices;
      }
      if (v.volume) {
        r.volume_cm3 = *v.volume;
        r.volume_source = v.volume_source;
      } else if (v.poisson) {
        r.volume_cm3 = v.poisson->volume_cm3;
        r.volume_source = "poisson";
      } else if (v.revolve_volume) {
        r.volume_cm3 = *v.revolve_volume;
        r.volume_source = "revolve";
      } else if (v.hull) {
        r.volume_cm3 = v.hull->hull_volume_cm3;
        r.volume_source = "hull";
      } else {
        continue;
      }
      if (v.hull) r.hull_overestimate_percent = v.hull->gap_percent;
      out.push_back(r);
    }
    return out;
  }

  void write_report() {
    const auto recs = records();
    write("report.csv", report_csv(recs));
    write("report.txt", report_text(recs));
    write("metrics.json", metrics_json(recs, details_).dump(2) + "\n");
  }

  void write_poses() {
    Json poses = Json::array();
    for (const auto& f : p_.fragments) {
      const auto& s = fragments_.at(f.id);
      if (s.pose) poses.push_back(Json{{"fragment", f.id}, {"pose", to_json(*s.pose)}});
    }
    if (!poses.empty()) write("poses.json", poses.dump(2) + "\n");
  }

  const Project& p_;
  RunOptions o_;
  std::filesystem::path out_;
  std::map<std::string, const VesselSpec*> vessel_specs_;
  std::map<std::string, const FragmentSpec*> fragment_specs_;
  std::map<std::string, FragmentState> fragments_;
  std::map<std::string, VesselState> vessels_;
  std::map<std::pair<std::string, std::string>, ZAlignment> alignments_;
  std::vector<std::filesystem::path> files_;
  Json details_;
  Json task_details_;
  const Task* current_ = nullptr;
  std::string focus_;
};

}  // namespace project_detail

/// Runs every task in order. Outputs depend only on the project and its
/// inputs, so re-running an unchanged project rewrites identical files.
/// A failing task raises PipelineError carrying a JSON record that names
/// the task and fragment.
inline RunResult run_pipeline(const Project& p, const RunOptions& o = {}) {
  project_detail::Runner r(p, o);
  return r.run();
}

}  // namespace sherdkit
