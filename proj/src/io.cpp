#include "qpat/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "qpat/errors.hpp"
#include "qpat/jacobian.hpp"
#include "qpat/version.hpp"

namespace fs = std::filesystem;

namespace qpat::io {

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& ctx) {
  if (!j.is_object()) throw ConfigError(ctx + ": expected an object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (item.key() == a) {
        ok = true;
        break;
      }
    if (!ok) throw ConfigError(ctx + ": unknown key '" + item.key() + "'");
  }
}

template <typename T>
T get_as(const json& j, const std::string& key, const std::string& ctx) {
  if (!j.contains(key)) throw ConfigError(ctx + ": missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(ctx + ": bad value for '" + key + "'");
  }
}

template <typename T>
T get_or(const json& j, const std::string& key, const T& fallback, const std::string& ctx) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(ctx + ": bad value for '" + key + "'");
  }
}

Vec3 vec3_from(const json& j, const std::string& key, const std::string& ctx) {
  auto v = get_as<std::vector<double>>(j, key, ctx);
  if (v.size() != 3) throw ConfigError(ctx + ": '" + key + "' must have 3 components");
  return Vec3(v[0], v[1], v[2]);
}

json vec3_to(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }

int axis_from(const json& j, const std::string& key, const std::string& ctx) {
  if (!j.contains(key)) return 1;
  const json& a = j.at(key);
  if (a.is_number_integer()) {
    int v = a.get<int>();
    if (v < 0 || v > 2) throw ConfigError(ctx + ": axis must be 0..2 or x/y/z");
    return v;
  }
  std::string s = a.get<std::string>();
  if (s == "x") return 0;
  if (s == "y") return 1;
  if (s == "z") return 2;
  throw ConfigError(ctx + ": axis must be 0..2 or x/y/z");
}

json axis_to(int axis) { return json(std::string(1, "xyz"[axis])); }

const char* kFaceNames[6] = {"-x", "+x", "-y", "+y", "-z", "+z"};

int face_tag_from(const json& v, const std::string& ctx) {
  if (v.is_number_integer()) return v.get<int>();
  std::string s = v.get<std::string>();
  for (int i = 0; i < 6; ++i)
    if (s == kFaceNames[i]) return i;
  throw ConfigError(ctx + ": face must be one of -x,+x,-y,+y,-z,+z or an integer tag");
}

json face_tag_to(int tag) {
  if (tag >= 0 && tag < 6) return json(kFaceNames[tag]);
  return json(tag);
}

}  // namespace

// ---------------------------------------------------------------------------
// Config schema

MeshConfig mesh_config_from_json(const json& j) {
  MeshConfig cfg;
  std::string type = get_or<std::string>(j, "type", "box", "mesh");
  if (type == "box") {
    check_keys(j, {"type", "nx", "ny", "nz", "origin", "extent"}, "mesh");
    cfg.type = MeshConfig::Type::box;
    cfg.nx = get_as<int>(j, "nx", "mesh");
    cfg.ny = get_as<int>(j, "ny", "mesh");
    cfg.nz = get_as<int>(j, "nz", "mesh");
    cfg.origin = j.contains("origin") ? vec3_from(j, "origin", "mesh") : Vec3::Zero();
    cfg.extent = j.contains("extent") ? vec3_from(j, "extent", "mesh") : Vec3::Ones();
  } else if (type == "files") {
    check_keys(j, {"type", "node", "ele", "face"}, "mesh");
    cfg.type = MeshConfig::Type::files;
    cfg.node_path = get_as<std::string>(j, "node", "mesh");
    cfg.ele_path = get_as<std::string>(j, "ele", "mesh");
    if (j.contains("face")) cfg.face_path = get_as<std::string>(j, "face", "mesh");
  } else {
    throw ConfigError("mesh: type must be 'box' or 'files'");
  }
  return cfg;
}

json mesh_config_to_json(const MeshConfig& cfg) {
  json j;
  if (cfg.type == MeshConfig::Type::box) {
    j["type"] = "box";
    j["nx"] = cfg.nx;
    j["ny"] = cfg.ny;
    j["nz"] = cfg.nz;
    j["origin"] = vec3_to(cfg.origin);
    j["extent"] = vec3_to(cfg.extent);
  } else {
    j["type"] = "files";
    j["node"] = cfg.node_path;
    j["ele"] = cfg.ele_path;
    if (cfg.face_path) j["face"] = *cfg.face_path;
  }
  return j;
}

TetMesh MeshConfig::build() const {
  if (type == Type::box) return generate_box_mesh(nx, ny, nz, origin, extent);
  return load_mesh(node_path, ele_path, face_path);
}

PhantomSpec phantom_from_json(const json& j) {
  check_keys(j, {"kappa_bg", "mu_bg", "primitives"}, "phantom");
  PhantomSpec spec;
  spec.kappa_bg = get_as<double>(j, "kappa_bg", "phantom");
  spec.mu_bg = get_as<double>(j, "mu_bg", "phantom");
  if (j.contains("primitives")) {
    if (!j.at("primitives").is_array()) throw ConfigError("phantom: primitives must be an array");
    for (const auto& pj : j.at("primitives")) {
      Primitive p;
      std::string shape = get_as<std::string>(pj, "shape", "primitive");
      if (shape == "box") {
        check_keys(pj, {"shape", "center", "size", "kappa", "mu"}, "box primitive");
        p.shape = Primitive::Shape::box;
        p.center = vec3_from(pj, "center", "box primitive");
        p.size = vec3_from(pj, "size", "box primitive");
      } else if (shape == "sphere") {
        check_keys(pj, {"shape", "center", "radius", "kappa", "mu"}, "sphere primitive");
        p.shape = Primitive::Shape::sphere;
        p.center = vec3_from(pj, "center", "sphere primitive");
        p.radius = get_as<double>(pj, "radius", "sphere primitive");
      } else if (shape == "spherical_shell") {
        check_keys(pj, {"shape", "center", "inner_radius", "outer_radius", "kappa", "mu"},
                   "shell primitive");
        p.shape = Primitive::Shape::spherical_shell;
        p.center = vec3_from(pj, "center", "shell primitive");
        p.inner_radius = get_as<double>(pj, "inner_radius", "shell primitive");
        p.outer_radius = get_as<double>(pj, "outer_radius", "shell primitive");
      } else if (shape == "axis_cylinder") {
        check_keys(pj, {"shape", "center", "axis", "radius", "axial_range", "kappa", "mu"},
                   "cylinder primitive");
        p.shape = Primitive::Shape::axis_cylinder;
        p.center = vec3_from(pj, "center", "cylinder primitive");
        p.axis = axis_from(pj, "axis", "cylinder primitive");
        p.radius = get_as<double>(pj, "radius", "cylinder primitive");
        auto r = get_as<std::vector<double>>(pj, "axial_range", "cylinder primitive");
        if (r.size() != 2) throw ConfigError("cylinder primitive: axial_range needs 2 values");
        p.axial_min = r[0];
        p.axial_max = r[1];
      } else if (shape == "helical_cylinder") {
        check_keys(pj,
                   {"shape", "center", "axis", "radius", "helix_radius", "axial_range",
                    "theta_range", "kappa", "mu"},
                   "helix primitive");
        p.shape = Primitive::Shape::helical_cylinder;
        p.center = vec3_from(pj, "center", "helix primitive");
        p.axis = axis_from(pj, "axis", "helix primitive");
        p.radius = get_as<double>(pj, "radius", "helix primitive");
        p.helix_radius = get_as<double>(pj, "helix_radius", "helix primitive");
        auto r = get_as<std::vector<double>>(pj, "axial_range", "helix primitive");
        auto t = get_as<std::vector<double>>(pj, "theta_range", "helix primitive");
        if (r.size() != 2 || t.size() != 2)
          throw ConfigError("helix primitive: axial_range and theta_range need 2 values");
        p.axial_min = r[0];
        p.axial_max = r[1];
        p.theta_start = t[0];
        p.theta_end = t[1];
      } else if (shape == "planar_cross") {
        check_keys(pj,
                   {"shape", "center", "normal", "in_plane_axis", "half_thickness",
                    "arm_half_length", "arm_half_width", "kappa", "mu"},
                   "cross primitive");
        p.shape = Primitive::Shape::planar_cross;
        p.center = vec3_from(pj, "center", "cross primitive");
        p.normal = vec3_from(pj, "normal", "cross primitive");
        p.in_plane_axis = vec3_from(pj, "in_plane_axis", "cross primitive");
        p.half_thickness = get_as<double>(pj, "half_thickness", "cross primitive");
        p.arm_half_length = get_as<double>(pj, "arm_half_length", "cross primitive");
        p.arm_half_width = get_as<double>(pj, "arm_half_width", "cross primitive");
      } else {
        throw ConfigError("primitive: unknown shape '" + shape + "'");
      }
      if (pj.contains("kappa")) p.kappa = get_as<double>(pj, "kappa", "primitive");
      if (pj.contains("mu")) p.mu = get_as<double>(pj, "mu", "primitive");
      spec.primitives.push_back(std::move(p));
    }
  }
  spec.validate();
  return spec;
}

json phantom_to_json(const PhantomSpec& spec) {
  json j;
  j["kappa_bg"] = spec.kappa_bg;
  j["mu_bg"] = spec.mu_bg;
  j["primitives"] = json::array();
  for (const auto& p : spec.primitives) {
    json pj;
    pj["center"] = vec3_to(p.center);
    switch (p.shape) {
      case Primitive::Shape::box:
        pj["shape"] = "box";
        pj["size"] = vec3_to(p.size);
        break;
      case Primitive::Shape::sphere:
        pj["shape"] = "sphere";
        pj["radius"] = p.radius;
        break;
      case Primitive::Shape::spherical_shell:
        pj["shape"] = "spherical_shell";
        pj["inner_radius"] = p.inner_radius;
        pj["outer_radius"] = p.outer_radius;
        break;
      case Primitive::Shape::axis_cylinder:
        pj["shape"] = "axis_cylinder";
        pj["axis"] = axis_to(p.axis);
        pj["radius"] = p.radius;
        pj["axial_range"] = json::array({p.axial_min, p.axial_max});
        break;
      case Primitive::Shape::helical_cylinder:
        pj["shape"] = "helical_cylinder";
        pj["axis"] = axis_to(p.axis);
        pj["radius"] = p.radius;
        pj["helix_radius"] = p.helix_radius;
        pj["axial_range"] = json::array({p.axial_min, p.axial_max});
        pj["theta_range"] = json::array({p.theta_start, p.theta_end});
        break;
      case Primitive::Shape::planar_cross:
        pj["shape"] = "planar_cross";
        pj["normal"] = vec3_to(p.normal);
        pj["in_plane_axis"] = vec3_to(p.in_plane_axis);
        pj["half_thickness"] = p.half_thickness;
        pj["arm_half_length"] = p.arm_half_length;
        pj["arm_half_width"] = p.arm_half_width;
        break;
    }
    if (p.kappa) pj["kappa"] = *p.kappa;
    if (p.mu) pj["mu"] = *p.mu;
    j["primitives"].push_back(std::move(pj));
  }
  return j;
}

std::vector<Illumination> illuminations_from_json(const json& j) {
  if (!j.is_array()) throw ConfigError("illuminations: expected an array");
  std::vector<Illumination> out;
  for (const auto& ij : j) {
    std::string kind = get_as<std::string>(ij, "kind", "illumination");
    if (kind == "face_characteristic") {
      check_keys(ij, {"kind", "face", "amplitude"}, "illumination");
      if (!ij.contains("face")) throw ConfigError("illumination: missing key 'face'");
      out.push_back(make_face_illumination(face_tag_from(ij.at("face"), "illumination"),
                                           get_or<double>(ij, "amplitude", 1.0, "illumination")));
    } else if (kind == "cylinder_cosine") {
      check_keys(ij, {"kind", "theta0", "width", "axis", "amplitude"}, "illumination");
      out.push_back(make_cylinder_cosine(get_as<double>(ij, "theta0", "illumination"),
                                         get_or<double>(ij, "width", 0.25 * M_PI, "illumination"),
                                         axis_from(ij, "axis", "illumination"),
                                         get_or<double>(ij, "amplitude", 1.0, "illumination")));
    } else if (kind == "custom") {
      check_keys(ij, {"kind", "values", "amplitude"}, "illumination");
      out.push_back(
          make_custom_illumination(get_as<std::vector<double>>(ij, "values", "illumination"),
                                   get_or<double>(ij, "amplitude", 1.0, "illumination")));
    } else {
      throw ConfigError("illumination: unknown kind '" + kind + "'");
    }
  }
  return out;
}

json illuminations_to_json(const std::vector<Illumination>& illums) {
  json arr = json::array();
  for (const auto& il : illums) {
    json ij;
    ij["amplitude"] = il.amplitude;
    switch (il.kind) {
      case Illumination::Kind::face_characteristic:
        ij["kind"] = "face_characteristic";
        ij["face"] = face_tag_to(il.face_tag);
        break;
      case Illumination::Kind::cylinder_cosine:
        ij["kind"] = "cylinder_cosine";
        ij["theta0"] = il.theta0;
        ij["width"] = il.width;
        ij["axis"] = axis_to(il.axis);
        break;
      case Illumination::Kind::custom:
        ij["kind"] = "custom";
        ij["values"] = il.facet_values;
        break;
    }
    arr.push_back(std::move(ij));
  }
  return arr;
}

ReconConfig recon_config_from_json(const json& j) {
  check_keys(j,
             {"prior", "lsqr", "max_outer", "background_search", "clamp_floor",
              "enable_step_zero", "seed", "solver", "record_beta_history"},
             "recon");
  ReconConfig cfg;
  if (j.contains("prior")) {
    const json& pj = j.at("prior");
    check_keys(pj, {"kind", "T", "epsilon", "delta", "b_over_a"}, "prior");
    std::string kind = get_or<std::string>(pj, "kind", "perona_malik", "prior");
    if (kind == "perona_malik")
      cfg.prior.kind = PriorSpec::Kind::perona_malik;
    else if (kind == "smoothed_tv")
      cfg.prior.kind = PriorSpec::Kind::smoothed_tv;
    else
      throw ConfigError("prior: kind must be perona_malik or smoothed_tv");
    cfg.prior.T = get_or<double>(pj, "T", cfg.prior.T, "prior");
    cfg.prior.tv_epsilon = get_or<double>(pj, "epsilon", cfg.prior.tv_epsilon, "prior");
    cfg.prior.delta = get_or<double>(pj, "delta", cfg.prior.delta, "prior");
    cfg.prior.b_over_a = get_or<double>(pj, "b_over_a", cfg.prior.b_over_a, "prior");
  }
  if (j.contains("lsqr")) {
    const json& lj = j.at("lsqr");
    check_keys(lj, {"m0", "tau", "max_iter"}, "lsqr");
    cfg.lsqr.m0 = get_or<int>(lj, "m0", cfg.lsqr.m0, "lsqr");
    cfg.lsqr.tau = get_or<double>(lj, "tau", cfg.lsqr.tau, "lsqr");
    cfg.lsqr.max_iter = get_or<int>(lj, "max_iter", cfg.lsqr.max_iter, "lsqr");
  }
  cfg.max_outer = get_or<int>(j, "max_outer", cfg.max_outer, "recon");
  if (j.contains("background_search")) {
    const json& bj = j.at("background_search");
    check_keys(bj, {"kappa_range", "mu_range", "grid", "nm_tol", "nm_max_iter"},
               "background_search");
    if (bj.contains("kappa_range")) {
      auto r = get_as<std::vector<double>>(bj, "kappa_range", "background_search");
      if (r.size() != 2) throw ConfigError("background_search: kappa_range needs 2 values");
      cfg.background.kappa_min = r[0];
      cfg.background.kappa_max = r[1];
    }
    if (bj.contains("mu_range")) {
      auto r = get_as<std::vector<double>>(bj, "mu_range", "background_search");
      if (r.size() != 2) throw ConfigError("background_search: mu_range needs 2 values");
      cfg.background.mu_min = r[0];
      cfg.background.mu_max = r[1];
    }
    cfg.background.grid = get_or<int>(bj, "grid", cfg.background.grid, "background_search");
    cfg.background.nm_tol = get_or<double>(bj, "nm_tol", cfg.background.nm_tol,
                                           "background_search");
    cfg.background.nm_max_iter =
        get_or<int>(bj, "nm_max_iter", cfg.background.nm_max_iter, "background_search");
  }
  cfg.clamp_floor = get_or<double>(j, "clamp_floor", cfg.clamp_floor, "recon");
  cfg.enable_step_zero = get_or<bool>(j, "enable_step_zero", cfg.enable_step_zero, "recon");
  cfg.seed = get_or<std::uint64_t>(j, "seed", cfg.seed, "recon");
  cfg.record_beta_history =
      get_or<bool>(j, "record_beta_history", cfg.record_beta_history, "recon");
  std::string solver = get_or<std::string>(j, "solver", "direct", "recon");
  if (solver == "direct")
    cfg.solver = SolverMethod::direct;
  else if (solver == "cg")
    cfg.solver = SolverMethod::cg;
  else
    throw ConfigError("recon: solver must be 'direct' or 'cg'");
  cfg.validate();
  return cfg;
}

json recon_config_to_json(const ReconConfig& cfg) {
  json j;
  json pj;
  pj["kind"] = cfg.prior.kind == PriorSpec::Kind::perona_malik ? "perona_malik" : "smoothed_tv";
  pj["T"] = cfg.prior.T;
  pj["epsilon"] = cfg.prior.tv_epsilon;
  pj["delta"] = cfg.prior.delta;
  pj["b_over_a"] = cfg.prior.b_over_a;
  j["prior"] = pj;
  json lj;
  lj["m0"] = cfg.lsqr.m0;
  lj["tau"] = cfg.lsqr.tau;
  lj["max_iter"] = cfg.lsqr.max_iter;
  j["lsqr"] = lj;
  j["max_outer"] = cfg.max_outer;
  json bj;
  bj["kappa_range"] = json::array({cfg.background.kappa_min, cfg.background.kappa_max});
  bj["mu_range"] = json::array({cfg.background.mu_min, cfg.background.mu_max});
  bj["grid"] = cfg.background.grid;
  bj["nm_tol"] = cfg.background.nm_tol;
  bj["nm_max_iter"] = cfg.background.nm_max_iter;
  j["background_search"] = bj;
  j["clamp_floor"] = cfg.clamp_floor;
  j["enable_step_zero"] = cfg.enable_step_zero;
  j["seed"] = cfg.seed;
  j["solver"] = cfg.solver == SolverMethod::direct ? "direct" : "cg";
  j["record_beta_history"] = cfg.record_beta_history;
  return j;
}

RunConfig parse_run_config(const json& j) {
  check_keys(j,
             {"mode", "mesh", "fine_mesh", "coarse_mesh", "phantom", "illuminations",
              "noise_level", "sigma_floor", "model_error_sigma", "seed", "out", "measurements",
              "recon"},
             "config");
  RunConfig cfg;
  if (j.contains("mode")) cfg.mode = get_as<std::string>(j, "mode", "config");
  if (j.contains("mesh")) cfg.mesh = mesh_config_from_json(j.at("mesh"));
  if (j.contains("fine_mesh")) cfg.fine_mesh = mesh_config_from_json(j.at("fine_mesh"));
  if (j.contains("coarse_mesh")) cfg.coarse_mesh = mesh_config_from_json(j.at("coarse_mesh"));
  if (j.contains("phantom")) cfg.phantom = phantom_from_json(j.at("phantom"));
  if (j.contains("illuminations")) cfg.illuminations = illuminations_from_json(j.at("illuminations"));
  cfg.noise_level = get_or<double>(j, "noise_level", cfg.noise_level, "config");
  if (cfg.noise_level < 0.0) throw ConfigError("config: noise_level must be >= 0");
  cfg.sigma_floor = get_or<double>(j, "sigma_floor", cfg.sigma_floor, "config");
  if (!(cfg.sigma_floor > 0.0)) throw ConfigError("config: sigma_floor must be > 0");
  cfg.model_error_sigma = get_or<bool>(j, "model_error_sigma", cfg.model_error_sigma, "config");
  cfg.seed = get_or<std::uint64_t>(j, "seed", cfg.seed, "config");
  cfg.out = get_or<std::string>(j, "out", cfg.out, "config");
  if (j.contains("measurements")) cfg.measurements = get_as<std::string>(j, "measurements", "config");
  if (j.contains("recon")) cfg.recon = recon_config_from_json(j.at("recon"));
  return cfg;
}

json serialize_run_config(const RunConfig& cfg) {
  json j;
  if (cfg.mode) j["mode"] = *cfg.mode;
  if (cfg.mesh) j["mesh"] = mesh_config_to_json(*cfg.mesh);
  if (cfg.fine_mesh) j["fine_mesh"] = mesh_config_to_json(*cfg.fine_mesh);
  if (cfg.coarse_mesh) j["coarse_mesh"] = mesh_config_to_json(*cfg.coarse_mesh);
  if (cfg.phantom) j["phantom"] = phantom_to_json(*cfg.phantom);
  j["illuminations"] = illuminations_to_json(cfg.illuminations);
  j["noise_level"] = cfg.noise_level;
  j["sigma_floor"] = cfg.sigma_floor;
  j["model_error_sigma"] = cfg.model_error_sigma;
  j["seed"] = cfg.seed;
  j["out"] = cfg.out;
  if (cfg.measurements) j["measurements"] = *cfg.measurements;
  j["recon"] = recon_config_to_json(cfg.recon);
  return j;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config parse failure in " + path + ": " + e.what());
  }
  return parse_run_config(j);
}

void apply_override(json& j, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must look like key.path=value: " + assignment);
  std::string path = assignment.substr(0, eq);
  std::string value = assignment.substr(eq + 1);

  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::exception&) {
    parsed = json(value);  // plain string
  }

  json* cur = &j;
  size_t pos = 0;
  while (true) {
    auto dot = path.find('.', pos);
    std::string key = path.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    if (key.empty()) throw ConfigError("override has an empty path segment: " + assignment);
    if (dot == std::string::npos) {
      (*cur)[key] = parsed;
      break;
    }
    if (!cur->contains(key) || !(*cur)[key].is_object()) (*cur)[key] = json::object();
    cur = &(*cur)[key];
    pos = dot + 1;
  }
}

// ---------------------------------------------------------------------------
// Field files (legacy-ASCII unstructured grid)

void write_text_atomic(const std::string& path, const std::string& content) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
    if (!out) throw ConfigError("cannot write " + tmp);
    out << content;
    if (!out) throw ConfigError("write failed for " + tmp);
  }
  fs::rename(tmp, path);
}

namespace {

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_fields(const std::string& path, const TetMesh& mesh,
                  const std::vector<std::pair<std::string, NodalField>>& fields,
                  const std::string& title) {
  std::ostringstream out;
  out << "# vtk DataFile Version 3.0\n" << title << "\nASCII\nDATASET UNSTRUCTURED_GRID\n";
  out << "POINTS " << mesh.num_vertices() << " double\n";
  for (const auto& v : mesh.vertices())
    out << fmt17(v[0]) << " " << fmt17(v[1]) << " " << fmt17(v[2]) << "\n";
  out << "CELLS " << mesh.num_tets() << " " << 5 * static_cast<long>(mesh.num_tets()) << "\n";
  for (const auto& t : mesh.tets())
    out << "4 " << t[0] << " " << t[1] << " " << t[2] << " " << t[3] << "\n";
  out << "CELL_TYPES " << mesh.num_tets() << "\n";
  for (int e = 0; e < mesh.num_tets(); ++e) out << "10\n";
  if (!fields.empty()) {
    out << "POINT_DATA " << mesh.num_vertices() << "\n";
    for (const auto& [name, data] : fields) {
      if (data.size() != mesh.num_vertices())
        throw ConfigError("field '" + name + "' does not match the mesh");
      out << "SCALARS " << name << " double 1\nLOOKUP_TABLE default\n";
      for (Eigen::Index i = 0; i < data.size(); ++i) out << fmt17(data[i]) << "\n";
    }
  }
  write_text_atomic(path, out.str());
}

const NodalField& FieldFile::get(const std::string& name) const {
  for (const auto& [n, f] : fields)
    if (n == name) return f;
  throw ConfigError("field file has no array named '" + name + "'");
}

bool FieldFile::has(const std::string& name) const {
  for (const auto& [n, f] : fields)
    if (n == name) return true;
  return false;
}

FieldFile read_fields(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);

  auto next_token = [&](const char* what) -> std::string {
    std::string tok;
    if (!(in >> tok)) throw ConfigError(path + ": unexpected end of file reading " + what);
    return tok;
  };
  auto expect = [&](const std::string& want) {
    std::string tok = next_token(want.c_str());
    if (tok != want) throw ConfigError(path + ": expected '" + want + "', found '" + tok + "'");
  };

  std::string line;
  std::getline(in, line);  // "# vtk DataFile Version ..."
  if (line.rfind("# vtk DataFile", 0) != 0) throw ConfigError(path + ": not a VTK legacy file");
  std::getline(in, line);  // title
  std::getline(in, line);
  if (line != "ASCII") throw ConfigError(path + ": only ASCII VTK files are supported");
  expect("DATASET");
  expect("UNSTRUCTURED_GRID");

  expect("POINTS");
  int n = std::stoi(next_token("point count"));
  next_token("point type");
  std::vector<Vec3> verts(n);
  for (int i = 0; i < n; ++i)
    for (int d = 0; d < 3; ++d) verts[i][d] = std::stod(next_token("point coordinate"));

  expect("CELLS");
  int m = std::stoi(next_token("cell count"));
  next_token("cell list size");
  std::vector<std::array<int, 4>> tets(m);
  for (int e = 0; e < m; ++e) {
    int nv = std::stoi(next_token("cell size"));
    if (nv != 4) throw ConfigError(path + ": only tetrahedral cells are supported");
    for (int k = 0; k < 4; ++k) tets[e][k] = std::stoi(next_token("cell vertex"));
  }
  expect("CELL_TYPES");
  int mt = std::stoi(next_token("cell type count"));
  if (mt != m) throw ConfigError(path + ": CELL_TYPES count mismatch");
  for (int e = 0; e < m; ++e)
    if (std::stoi(next_token("cell type")) != 10)
      throw ConfigError(path + ": only VTK_TETRA cells are supported");

  FieldFile out;
  out.mesh = TetMesh::from_data(std::move(verts), std::move(tets));

  std::string tok;
  if (in >> tok) {
    if (tok != "POINT_DATA") throw ConfigError(path + ": expected POINT_DATA, found " + tok);
    int nd = std::stoi(next_token("point data count"));
    if (nd != n) throw ConfigError(path + ": POINT_DATA count mismatch");
    while (in >> tok) {
      if (tok != "SCALARS") throw ConfigError(path + ": expected SCALARS, found " + tok);
      std::string name = next_token("array name");
      next_token("array type");
      next_token("component count");
      expect("LOOKUP_TABLE");
      next_token("lookup table name");
      NodalField f(n);
      for (int i = 0; i < n; ++i) f[i] = std::stod(next_token("scalar value"));
      out.fields.emplace_back(name, std::move(f));
    }
  }
  return out;
}

void write_measurements(const std::string& path, const TetMesh& coarse,
                        const MeasurementSet& data) {
  std::vector<std::pair<std::string, NodalField>> fields;
  for (int k = 0; k < data.num_illuminations(); ++k) {
    fields.emplace_back("chi_" + std::to_string(k), data.chi[k]);
    fields.emplace_back("sigma_" + std::to_string(k), data.sigma[k]);
  }
  write_fields(path, coarse, fields, "qpat measurements");
}

std::pair<TetMesh, MeasurementSet> read_measurements(const std::string& path) {
  FieldFile ff = read_fields(path);
  MeasurementSet data;
  for (int k = 0; ff.has("chi_" + std::to_string(k)); ++k) {
    data.chi.push_back(ff.get("chi_" + std::to_string(k)));
    data.sigma.push_back(ff.get("sigma_" + std::to_string(k)));
  }
  if (data.chi.empty()) throw ConfigError(path + ": no chi_k arrays found");
  return {std::move(ff.mesh), std::move(data)};
}

// ---------------------------------------------------------------------------
// CSV outputs

void write_residual_csv(const std::string& path, const ReconResult& result,
                        int num_illuminations, int num_nodes) {
  std::ostringstream out;
  out << "outer,inner,inner_residual,nonlinear_residual,accepted\n";
  for (const auto& rec : result.outer_log) {
    for (size_t m = 1; m < rec.inner_residuals.size(); ++m)
      out << rec.outer << "," << m << "," << fmt17(rec.inner_residuals[m]) << ",,\n";
    out << rec.outer << ",,," << fmt17(rec.nonlinear_residual) << "," << (rec.accepted ? 1 : 0)
        << "\n";
  }
  double level = std::sqrt(static_cast<double>(num_illuminations) * num_nodes);
  out << "sqrt_KN,,," << fmt17(level) << ",\n";
  write_text_atomic(path, out.str());
}

std::vector<MeanRow> compute_mean_table(const TetMesh& coarse, const TetMesh& fine,
                                        const PhantomSpec& phantom,
                                        const InterpolationOperator& P,
                                        const NodalField& kappa_rec, const NodalField& mu_rec) {
  auto [kappa_f, mu_f] = rasterize_phantom(fine, phantom);
  NodalField kappa_interp = P.apply(kappa_f);
  NodalField mu_interp = P.apply(mu_f);

  std::vector<MeanRow> rows;
  for (int param = 0; param < 2; ++param) {
    const NodalField& interp = (param == 0) ? kappa_interp : mu_interp;
    const NodalField& rec = (param == 0) ? kappa_rec : mu_rec;
    const char* pname = (param == 0) ? "kappa" : "mu";

    auto bg = background_support(coarse, phantom, param);
    if (!bg.empty()) {
      MeanRow row;
      row.parameter = pname;
      row.region = "bg";
      row.target_mean = (param == 0) ? phantom.kappa_bg : phantom.mu_bg;
      row.interp_target_mean = mean_over(interp, bg);
      row.recon_mean = mean_over(rec, bg);
      row.support_size = static_cast<int>(bg.size());
      rows.push_back(std::move(row));
    }
    for (int i = 0; i < static_cast<int>(phantom.primitives.size()); ++i) {
      const auto& prim = phantom.primitives[i];
      bool sets = (param == 0) ? prim.kappa.has_value() : prim.mu.has_value();
      if (!sets) continue;
      auto support = effective_support(coarse, phantom, i, param);
      if (support.empty()) continue;
      MeanRow row;
      row.parameter = pname;
      row.region = "inclusion " + std::to_string(i);
      row.target_mean = (param == 0) ? *prim.kappa : *prim.mu;
      row.interp_target_mean = mean_over(interp, support);
      row.recon_mean = mean_over(rec, support);
      row.support_size = static_cast<int>(support.size());
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

void write_mean_table(const std::string& path, const std::vector<MeanRow>& rows) {
  std::ostringstream out;
  out << "parameter,region,target_mean,interp_target_mean,recon_mean,support_size\n";
  for (const auto& r : rows)
    out << r.parameter << "," << r.region << "," << fmt17(r.target_mean) << ","
        << fmt17(r.interp_target_mean) << "," << fmt17(r.recon_mean) << "," << r.support_size
        << "\n";
  write_text_atomic(path, out.str());
}

// ---------------------------------------------------------------------------
// Mode dispatch

namespace {

void write_manifest(const std::string& dir, const RunConfig& cfg,
                    const std::vector<std::string>& outputs) {
  json m;
  m["config"] = serialize_run_config(cfg);
  m["seed"] = cfg.seed;
  m["versions"]["qpat"] = QPAT_VERSION;
  m["versions"]["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." +
                           std::to_string(EIGEN_MAJOR_VERSION) + "." +
                           std::to_string(EIGEN_MINOR_VERSION);
  m["outputs"] = outputs;
  write_text_atomic(dir + "/manifest.json", m.dump(2) + "\n");
}

int run_simulate(const RunConfig& cfg) {
  if (!cfg.fine_mesh || !cfg.coarse_mesh)
    throw ConfigError("simulate: fine_mesh and coarse_mesh are required");
  if (!cfg.phantom) throw ConfigError("simulate: phantom is required");
  if (cfg.illuminations.empty()) throw ConfigError("simulate: illuminations are required");

  TetMesh fine = cfg.fine_mesh->build();
  TetMesh coarse = cfg.coarse_mesh->build();
  MeasurementSet data = simulate_data(fine, *cfg.phantom, cfg.illuminations, coarse,
                                      cfg.noise_level, cfg.seed, cfg.recon.solver,
                                      cfg.sigma_floor, cfg.model_error_sigma);

  auto [kappa_f, mu_f] = rasterize_phantom(fine, *cfg.phantom);
  InterpolationOperator P = build_interpolation(fine, coarse);

  write_measurements(cfg.out + "/measurements.vtk", coarse, data);
  write_fields(cfg.out + "/target_fine.vtk", fine, {{"kappa", kappa_f}, {"mu", mu_f}},
               "qpat target (fine mesh)");
  write_fields(cfg.out + "/target_interp.vtk", coarse,
               {{"kappa", P.apply(kappa_f)}, {"mu", P.apply(mu_f)}},
               "qpat target interpolated onto the inversion mesh");
  write_manifest(cfg.out, cfg, {"measurements.vtk", "target_fine.vtk", "target_interp.vtk"});
  std::cerr << "[simulate] wrote " << cfg.out << "/measurements.vtk (" << data.num_illuminations()
            << " illuminations, " << coarse.num_vertices() << " nodes)\n";
  return 0;
}

int run_reconstruct(const RunConfig& cfg) {
  if (!cfg.measurements) throw ConfigError("reconstruct: measurements path is required");
  if (cfg.illuminations.empty()) throw ConfigError("reconstruct: illuminations are required");

  auto [coarse, data] = read_measurements(*cfg.measurements);
  ReconResult res = reconstruct(coarse, data, cfg.illuminations, cfg.recon);

  std::vector<std::string> outputs = {"reconstruction.vtk", "residuals.csv"};
  write_fields(cfg.out + "/reconstruction.vtk", coarse,
               {{"kappa", res.kappa},
                {"mu", res.mu},
                {"kappa_tilde", res.kappa_tilde},
                {"mu_tilde", res.mu_tilde}},
               "qpat reconstruction");
  write_residual_csv(cfg.out + "/residuals.csv", res, data.num_illuminations(),
                     coarse.num_vertices());

  if (cfg.phantom && cfg.fine_mesh) {
    TetMesh fine = cfg.fine_mesh->build();
    InterpolationOperator P = build_interpolation(fine, coarse);
    auto rows = compute_mean_table(coarse, fine, *cfg.phantom, P, res.kappa, res.mu);
    write_mean_table(cfg.out + "/means.csv", rows);
    outputs.push_back("means.csv");
  }
  write_manifest(cfg.out, cfg, outputs);
  return 0;
}

int run_forward(const RunConfig& cfg) {
  if (!cfg.mesh) throw ConfigError("forward: mesh is required");
  if (!cfg.phantom) throw ConfigError("forward: phantom is required");
  if (cfg.illuminations.empty()) throw ConfigError("forward: illuminations are required");

  TetMesh mesh = cfg.mesh->build();
  auto [kappa, mu] = rasterize_phantom(mesh, *cfg.phantom);
  OpticalState st = forward_solve_physical(mesh, kappa, mu, cfg.illuminations, cfg.recon.solver);

  std::vector<std::pair<std::string, NodalField>> fields = {{"kappa", kappa}, {"mu", mu}};
  for (int k = 0; k < st.num_illuminations(); ++k) {
    fields.emplace_back("phi_" + std::to_string(k), st.phi[k]);
    fields.emplace_back("h_" + std::to_string(k), st.h_of(k));
    std::cerr << "[forward] illumination " << k << ": energy balance error "
              << st.energy_balance_err[k] << ", total absorption "
              << total_absorption(mesh, st.h_of(k)) << "\n";
  }
  write_fields(cfg.out + "/forward.vtk", mesh, fields, "qpat forward solve");
  write_manifest(cfg.out, cfg, {"forward.vtk"});
  return 0;
}

int run_check_jacobian(const RunConfig& cfg) {
  TetMesh mesh = cfg.mesh ? cfg.mesh->build()
                          : generate_box_mesh(3, 3, 3, Vec3::Zero(), Vec3::Ones());
  std::vector<Illumination> illums = cfg.illuminations;
  if (illums.empty()) {
    illums.push_back(make_face_illumination(kFaceZMin));
    illums.push_back(make_face_illumination(kFaceZMax));
  }

  const int n = mesh.num_vertices();
  std::mt19937_64 rng(cfg.seed + 7);
  std::uniform_real_distribution<double> uni(-0.3, 0.3);
  NodalField kt(n), mt(n);
  for (int i = 0; i < n; ++i) {
    kt[i] = uni(rng);
    mt[i] = uni(rng);
  }
  const double kappa0 = 0.3, mu0 = 0.015;
  OpticalState st = evaluate_forward(mesh, kt, mt, kappa0, mu0, illums);
  JacobianState js = build_jacobian_state(st);

  double adjoint_err = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd s(2 * n), t(static_cast<Eigen::Index>(illums.size()) * n);
    for (Eigen::Index i = 0; i < s.size(); ++i) s[i] = uni(rng);
    for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = uni(rng);
    NodalField Js = jac_apply(js, s);
    NodalField Jtt = jac_apply_transpose(js, t);
    double lhs = Js.dot(t), rhs = s.dot(Jtt);
    double scale = Js.norm() * t.norm();
    if (scale > 0.0) adjoint_err = std::max(adjoint_err, std::abs(lhs - rhs) / scale);
  }

  double fd_err = 0.0;
  const double eps = 1e-5;
  for (int trial = 0; trial < 3; ++trial) {
    Eigen::VectorXd s(2 * n);
    for (Eigen::Index i = 0; i < s.size(); ++i) s[i] = uni(rng);
    NodalField Js = jac_apply(js, s);
    OpticalState plus = evaluate_forward(mesh, kt + eps * s.head(n), mt + eps * s.tail(n),
                                         kappa0, mu0, illums);
    OpticalState minus = evaluate_forward(mesh, kt - eps * s.head(n), mt - eps * s.tail(n),
                                          kappa0, mu0, illums);
    NodalField fd = (plus.h - minus.h) / (2.0 * eps);
    fd_err = std::max(fd_err, (Js - fd).norm() / fd.norm());
  }

  std::cout << "adjoint identity error: " << adjoint_err << " (threshold 1e-10)\n";
  std::cout << "finite-difference error: " << fd_err << " (threshold 1e-4)\n";
  return (adjoint_err <= 1e-10 && fd_err <= 1e-4) ? 0 : 2;
}

int run_info(const RunConfig& cfg) {
  if (!cfg.mesh) throw ConfigError("info: mesh is required");
  TetMesh mesh = cfg.mesh->build();
  std::cout << "vertices: " << mesh.num_vertices() << "\n";
  std::cout << "tets: " << mesh.num_tets() << "\n";
  std::cout << "boundary facets: " << mesh.num_boundary_facets() << "\n";
  std::cout << "total volume: " << mesh.total_volume() << " mm^3\n";
  std::cout << "surface area: " << mesh.surface_area() << " mm^2\n";
  std::cout << "bbox: [" << mesh.bbox_min().transpose() << "] to [" << mesh.bbox_max().transpose()
            << "]\n";
  std::map<int, int> tag_hist;
  for (const auto& f : mesh.boundary_facets()) tag_hist[f.tag]++;
  for (const auto& [tag, count] : tag_hist)
    std::cout << "facets with tag " << tag << ": " << count << "\n";
  return 0;
}

}  // namespace

int run(const std::string& mode, const std::string& config_path,
        const std::vector<std::string>& overrides,
        const std::optional<std::uint64_t>& seed_override,
        const std::optional<std::string>& out_override) {
  try {
    json raw = json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw ConfigError("cannot open config file " + config_path);
      try {
        in >> raw;
      } catch (const json::exception& e) {
        throw ConfigError("config parse failure in " + config_path + ": " + e.what());
      }
    }
    for (const auto& o : overrides) apply_override(raw, o);

    RunConfig cfg = parse_run_config(raw);
    if (cfg.mode && *cfg.mode != mode)
      throw ConfigError("config mode '" + *cfg.mode + "' does not match subcommand '" + mode +
                        "'");
    if (seed_override) cfg.seed = *seed_override;
    if (out_override) cfg.out = *out_override;

    if (mode == "simulate") return run_simulate(cfg);
    if (mode == "reconstruct") return run_reconstruct(cfg);
    if (mode == "forward") return run_forward(cfg);
    if (mode == "check-jacobian") return run_check_jacobian(cfg);
    if (mode == "info") return run_info(cfg);
    throw ConfigError("unknown mode '" + mode + "'");
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace qpat::io
