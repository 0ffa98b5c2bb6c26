#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "qpat/errors.hpp"
#include "qpat/io.hpp"
#include "support/oracles.hpp"

using namespace qpat;
using qpat::io::json;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "qpat_io_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json sample_config() {
  return json::parse(R"({
    "fine_mesh": {"type": "box", "nx": 6, "ny": 6, "nz": 6,
                  "origin": [-2.5, -2.5, -2.5], "extent": [5, 5, 5]},
    "coarse_mesh": {"type": "box", "nx": 4, "ny": 4, "nz": 4,
                    "origin": [-2.5, -2.5, -2.5], "extent": [5, 5, 5]},
    "phantom": {"kappa_bg": 0.3, "mu_bg": 0.02, "primitives": [
      {"shape": "sphere", "center": [0, 0, 0], "radius": 1.2, "mu": 0.03}]},
    "illuminations": [{"kind": "face_characteristic", "face": "-z"},
                      {"kind": "face_characteristic", "face": "+z"}],
    "noise_level": 0.01,
    "seed": 7,
    "recon": {"lsqr": {"m0": 10, "tau": 0.01}, "max_outer": 6}
  })");
}

}  // namespace

TEST_CASE("config parse/serialize is a fixed point") {
  json raw = sample_config();
  io::RunConfig cfg = io::parse_run_config(raw);
  json norm = io::serialize_run_config(cfg);
  io::RunConfig cfg2 = io::parse_run_config(norm);
  json norm2 = io::serialize_run_config(cfg2);
  CHECK(norm.dump() == norm2.dump());
  CHECK(cfg2.seed == 7);
  CHECK(cfg2.recon.lsqr.m0 == 10);
  CHECK(cfg2.phantom->primitives.size() == 1);
}

TEST_CASE("unknown keys are rejected everywhere") {
  json raw = sample_config();
  raw["bogus"] = 1;
  CHECK_THROWS_AS(io::parse_run_config(raw), ConfigError);

  raw = sample_config();
  raw["recon"]["lsqr"]["window"] = 3;
  CHECK_THROWS_AS(io::parse_run_config(raw), ConfigError);

  raw = sample_config();
  raw["phantom"]["primitives"][0]["color"] = "red";
  CHECK_THROWS_AS(io::parse_run_config(raw), ConfigError);
}

TEST_CASE("overrides reach nested keys") {
  json raw = sample_config();
  io::apply_override(raw, "recon.lsqr.m0=4");
  io::apply_override(raw, "seed=99");
  io::apply_override(raw, "out=somewhere");
  io::RunConfig cfg = io::parse_run_config(raw);
  CHECK(cfg.recon.lsqr.m0 == 4);
  CHECK(cfg.seed == 99);
  CHECK(cfg.out == "somewhere");
  CHECK_THROWS_AS(io::apply_override(raw, "no_equals_sign"), ConfigError);
}

TEST_CASE("field files round-trip bit for bit") {
  TetMesh m = generate_box_mesh(3, 2, 2, Vec3(0.1, -0.3, 0.7), Vec3(1.1, 0.9, 1.3));
  std::mt19937_64 rng(2);
  NodalField kappa = qpat_test::random_vector(rng, m.num_vertices(), 0.1, 0.6);
  NodalField mu = qpat_test::random_vector(rng, m.num_vertices(), 0.005, 0.03);

  fs::path dir = temp_dir("fields");
  std::string path = (dir / "fields.vtk").string();
  io::write_fields(path, m, {{"kappa", kappa}, {"mu", mu}});

  io::FieldFile ff = io::read_fields(path);
  CHECK(ff.mesh.num_vertices() == m.num_vertices());
  CHECK(ff.mesh.num_tets() == m.num_tets());
  for (int i = 0; i < m.num_vertices(); ++i)
    CHECK((ff.mesh.vertices()[i] - m.vertices()[i]).norm() == 0.0);
  REQUIRE(ff.has("kappa"));
  REQUIRE(ff.has("mu"));
  CHECK((ff.get("kappa") - kappa).cwiseAbs().maxCoeff() == 0.0);
  CHECK((ff.get("mu") - mu).cwiseAbs().maxCoeff() == 0.0);

  // constant field stays constant
  io::write_fields(path, m, {{"c", NodalField::Constant(m.num_vertices(), 0.25)}});
  CHECK((io::read_fields(path).get("c").array() == 0.25).all());
}

TEST_CASE("measurement files carry every illumination") {
  TetMesh m = generate_box_mesh(2, 2, 2, Vec3::Zero(), Vec3::Ones());
  std::mt19937_64 rng(3);
  MeasurementSet data;
  for (int k = 0; k < 3; ++k) {
    data.chi.push_back(qpat_test::random_vector(rng, m.num_vertices()));
    data.sigma.push_back(qpat_test::random_vector(rng, m.num_vertices(), 0.01, 0.02));
  }
  fs::path dir = temp_dir("meas");
  std::string path = (dir / "measurements.vtk").string();
  io::write_measurements(path, m, data);
  auto [mesh, back] = io::read_measurements(path);
  REQUIRE(back.num_illuminations() == 3);
  for (int k = 0; k < 3; ++k) {
    CHECK((back.chi[k] - data.chi[k]).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.sigma[k] - data.sigma[k]).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("residual csv layout") {
  ReconResult res;
  OuterRecord r0;
  r0.outer = 0;
  r0.inner_residuals = {10.0, 8.0, 7.5};  // two inner iterations
  r0.nonlinear_residual = 9.0;
  r0.accepted = true;
  OuterRecord r1;
  r1.outer = 1;
  r1.inner_residuals = {9.0, 5.0};  // one inner iteration
  r1.nonlinear_residual = 6.0;
  r1.accepted = true;
  res.outer_log = {r0, r1};

  fs::path dir = temp_dir("csv");
  std::string path = (dir / "residuals.csv").string();
  io::write_residual_csv(path, res, 2, 50);

  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "outer,inner,inner_residual,nonlinear_residual,accepted");
  std::vector<std::string> rows;
  while (std::getline(in, line)) rows.push_back(line);
  REQUIRE(rows.size() == 3 + 2 + 1);  // sum of inner iterations + outer count + sqrt_KN row
  CHECK(rows.back().rfind("sqrt_KN", 0) == 0);
  CHECK(rows.back().find(std::to_string(10)) != std::string::npos);  // sqrt(100) = 10
}

TEST_CASE("cli pipeline: simulate then reconstruct, byte-identical rerun") {
  fs::path dir = temp_dir("pipeline");
  fs::path cfg_path = dir / "config.json";
  {
    std::ofstream out(cfg_path);
    out << sample_config().dump(2);
  }

  fs::path out1 = dir / "out1", out2 = dir / "out2";
  CHECK(io::run("simulate", cfg_path.string(), {}, std::nullopt, out1.string()) == 0);
  CHECK(io::run("simulate", cfg_path.string(), {}, std::nullopt, out2.string()) == 0);
  for (const char* name : {"measurements.vtk", "target_fine.vtk", "target_interp.vtk"})
    CHECK(slurp(out1 / name) == slurp(out2 / name));
  CHECK(fs::exists(out1 / "manifest.json"));

  fs::path rec1 = dir / "rec1", rec2 = dir / "rec2";
  std::string meas_override = "measurements=" + (out1 / "measurements.vtk").string();
  CHECK(io::run("reconstruct", cfg_path.string(), {meas_override}, std::nullopt,
                rec1.string()) == 0);
  CHECK(io::run("reconstruct", cfg_path.string(), {meas_override}, std::nullopt,
                rec2.string()) == 0);
  for (const char* name : {"reconstruction.vtk", "residuals.csv", "means.csv"})
    CHECK(slurp(rec1 / name) == slurp(rec2 / name));

  // nonlinear residual column decreases over accepted rows
  std::istringstream csv(slurp(rec1 / "residuals.csv"));
  std::string line;
  std::getline(csv, line);
  double prev = std::numeric_limits<double>::infinity();
  int accepted_rows = 0;
  while (std::getline(csv, line)) {
    if (line.rfind("sqrt_KN", 0) == 0) continue;
    auto parts = [&] {
      std::vector<std::string> p;
      std::stringstream ss(line);
      std::string tok;
      while (std::getline(ss, tok, ',')) p.push_back(tok);
      p.resize(5);
      return p;
    }();
    if (parts[3].empty() || parts[4] != "1") continue;
    double val = std::stod(parts[3]);
    CHECK(val < prev);
    prev = val;
    ++accepted_rows;
  }
  CHECK(accepted_rows >= 1);
}

TEST_CASE("cli error paths") {
  CHECK(io::run("simulate", "/nonexistent/config.json") == 1);

  fs::path dir = temp_dir("errors");
  fs::path cfg_path = dir / "bad_mode.json";
  {
    json j = sample_config();
    j["mode"] = "reconstruct";
    std::ofstream out(cfg_path);
    out << j.dump();
  }
  CHECK(io::run("simulate", cfg_path.string()) == 1);
}

TEST_CASE("check-jacobian mode passes with defaults") {
  CHECK(io::run("check-jacobian", "") == 0);
}

TEST_CASE("the installed command line parses and dispatches") {
  fs::path dir = temp_dir("cli");
  fs::path cfg_path = dir / "info.json";
  {
    json j;
    j["mesh"] = {{"type", "box"}, {"nx", 2}, {"ny", 2}, {"nz", 2},
                 {"origin", {0, 0, 0}}, {"extent", {1, 1, 1}}};
    std::ofstream out(cfg_path);
    out << j.dump();
  }
  std::string cmd = std::string(QPAT_CLI_PATH) + " info --config " + cfg_path.string() +
                    " > /dev/null 2>&1";
  CHECK(std::system(cmd.c_str()) == 0);
  std::string bad = std::string(QPAT_CLI_PATH) + " info --config /does/not/exist.json"
                    " > /dev/null 2>&1";
  CHECK(std::system(bad.c_str()) != 0);
}

TEST_CASE("forward and info modes produce their outputs") {
  fs::path dir = temp_dir("modes");
  fs::path cfg_path = dir / "fwd.json";
  {
    json j;
    j["mesh"] = {{"type", "box"}, {"nx", 3}, {"ny", 3}, {"nz", 3},
                 {"origin", {0, 0, 0}}, {"extent", {1, 1, 1}}};
    j["phantom"] = {{"kappa_bg", 0.3}, {"mu_bg", 0.02}};
    j["illuminations"] = json::array({{{"kind", "face_characteristic"}, {"face", "-z"}}});
    std::ofstream out(cfg_path);
    out << j.dump();
  }
  fs::path out_dir = dir / "out";
  CHECK(io::run("forward", cfg_path.string(), {}, std::nullopt, out_dir.string()) == 0);
  io::FieldFile ff = io::read_fields((out_dir / "forward.vtk").string());
  CHECK(ff.has("kappa"));
  CHECK(ff.has("phi_0"));
  CHECK(ff.has("h_0"));
  CHECK(ff.get("h_0").maxCoeff() > 0.0);

  CHECK(io::run("info", cfg_path.string()) == 0);
}
