#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "qpat/errors.hpp"
#include "qpat/mesh.hpp"
#include "support/oracles.hpp"

using namespace qpat;
namespace fs = std::filesystem;

TEST_CASE("single-cell box mesh counts and volume") {
  TetMesh m = generate_box_mesh(1, 1, 1, Vec3::Zero(), Vec3::Ones());
  CHECK(m.num_vertices() == 8);
  CHECK(m.num_tets() == 6);
  CHECK(m.num_boundary_facets() == 12);
  CHECK(m.total_volume() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("box mesh volume additivity") {
  TetMesh m = generate_box_mesh(2, 2, 2, Vec3(-5.5, -5.5, -5.5), Vec3(11, 11, 11));
  CHECK(m.num_vertices() == 27);
  CHECK(m.num_tets() == 48);
  CHECK(std::abs(m.total_volume() - 1331.0) / 1331.0 < 1e-9);
}

TEST_CASE("closed-surface identity: area-weighted normals sum to zero") {
  for (auto dims : {std::array<int, 3>{1, 1, 1}, {3, 2, 4}}) {
    TetMesh m = generate_box_mesh(dims[0], dims[1], dims[2], Vec3(0.5, -1, 2), Vec3(2, 3, 1.5));
    Vec3 sum = Vec3::Zero();
    for (const auto& f : m.boundary_facets()) sum += f.area * f.normal;
    CHECK(sum.norm() < 1e-10 * m.surface_area());
  }
}

TEST_CASE("mesh invariants: positive volumes, outward normals, facet incidence") {
  TetMesh m = generate_box_mesh(3, 3, 3, Vec3::Zero(), Vec3(2, 1, 1));
  for (int e = 0; e < m.num_tets(); ++e) CHECK(m.tet_volume(e) > 0.0);
  for (const auto& f : m.boundary_facets()) {
    const auto& t = m.tets()[f.tet];
    Vec3 tc = 0.25 * (m.vertices()[t[0]] + m.vertices()[t[1]] + m.vertices()[t[2]] +
                      m.vertices()[t[3]]);
    Vec3 fc = (m.vertices()[f.v[0]] + m.vertices()[f.v[1]] + m.vertices()[f.v[2]]) / 3.0;
    CHECK(f.normal.dot(fc - tc) > 0.0);
    CHECK(f.normal.norm() == doctest::Approx(1.0).epsilon(1e-12));
  }
  // every boundary face shows up once across tets, interior faces twice
  std::map<std::array<int, 3>, int> count;
  for (const auto& t : m.tets()) {
    const int faces[4][3] = {{1, 2, 3}, {0, 2, 3}, {0, 1, 3}, {0, 1, 2}};
    for (const auto& fc : faces) {
      std::array<int, 3> key{t[fc[0]], t[fc[1]], t[fc[2]]};
      std::sort(key.begin(), key.end());
      count[key]++;
    }
  }
  int boundary_seen = 0;
  for (const auto& [key, c] : count) {
    CHECK((c == 1 || c == 2));
    if (c == 1) ++boundary_seen;
  }
  CHECK(boundary_seen == m.num_boundary_facets());
}

TEST_CASE("box face tags cover all six faces") {
  TetMesh m = generate_box_mesh(2, 2, 2, Vec3::Zero(), Vec3::Ones());
  std::map<int, int> hist;
  for (const auto& f : m.boundary_facets()) hist[f.tag]++;
  for (int tag = 0; tag < 6; ++tag) CHECK(hist[tag] == 8);  // 2x2 cells, 2 triangles each
}

TEST_CASE("unit cube fixture matches generated mesh") {
  TetMesh ref = generate_box_mesh(1, 1, 1, Vec3::Zero(), Vec3::Ones());
  TetMesh m = load_mesh(std::string(QPAT_TEST_DIR) + "/fixtures/unitcube.node",
                        std::string(QPAT_TEST_DIR) + "/fixtures/unitcube.ele");
  REQUIRE(m.num_vertices() == ref.num_vertices());
  REQUIRE(m.num_tets() == ref.num_tets());
  for (int i = 0; i < m.num_vertices(); ++i)
    CHECK((m.vertices()[i] - ref.vertices()[i]).norm() == 0.0);
  for (int e = 0; e < m.num_tets(); ++e) CHECK(m.tets()[e] == ref.tets()[e]);
}

TEST_CASE("degenerate tet is rejected with its index") {
  fs::path dir = fs::temp_directory_path() / "qpat_mesh_test";
  fs::create_directories(dir);
  {
    std::ofstream node(dir / "bad.node");
    node << "5 3 0 0\n0 0 0 0\n1 1 0 0\n2 0 1 0\n3 1 1 0\n4 0 0 1\n";
    std::ofstream ele(dir / "bad.ele");
    ele << "2 4 0\n0 0 1 2 4\n1 0 1 2 3\n";  // tet 1 is flat (all z = 0)
  }
  try {
    load_mesh((dir / "bad.node").string(), (dir / "bad.ele").string());
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("tet 1") != std::string::npos);
  }
}

TEST_CASE("save/load round trip preserves connectivity and coordinates") {
  TetMesh m = generate_box_mesh(2, 3, 1, Vec3(0.1, -0.25, 1.0 / 3.0), Vec3(1.7, 2.0, 0.9));
  fs::path dir = fs::temp_directory_path() / "qpat_mesh_test";
  fs::create_directories(dir);
  std::string base = (dir / "roundtrip").string();
  save_mesh(m, base);
  TetMesh r = load_mesh(base + ".node", base + ".ele", base + ".face");
  REQUIRE(r.num_vertices() == m.num_vertices());
  REQUIRE(r.num_tets() == m.num_tets());
  for (int e = 0; e < m.num_tets(); ++e) CHECK(r.tets()[e] == m.tets()[e]);
  for (int i = 0; i < m.num_vertices(); ++i)
    CHECK((r.vertices()[i] - m.vertices()[i]).norm() == 0.0);  // 17 digits round-trip doubles
  for (int f = 0; f < m.num_boundary_facets(); ++f)
    CHECK(r.boundary_facets()[f].tag == m.boundary_facets()[f].tag);
}

TEST_CASE("one-based indices are accepted") {
  fs::path dir = fs::temp_directory_path() / "qpat_mesh_test";
  fs::create_directories(dir);
  {
    std::ofstream node(dir / "one.node");
    node << "4 3 0 0\n1 0 0 0\n2 1 0 0\n3 0 1 0\n4 0 0 1\n";
    std::ofstream ele(dir / "one.ele");
    ele << "1 4 0\n1 1 2 3 4\n";
  }
  TetMesh m = load_mesh((dir / "one.node").string(), (dir / "one.ele").string());
  CHECK(m.num_tets() == 1);
  CHECK(m.tets()[0] == std::array<int, 4>{0, 1, 2, 3});
}

TEST_CASE("locate_point basics") {
  TetMesh m = generate_box_mesh(2, 2, 2, Vec3::Zero(), Vec3::Ones());

  SUBCASE("centroid of tet 0") {
    const auto& t = m.tets()[0];
    Vec3 c = 0.25 * (m.vertices()[t[0]] + m.vertices()[t[1]] + m.vertices()[t[2]] +
                     m.vertices()[t[3]]);
    auto loc = locate_point(m, c);
    REQUIRE(loc.has_value());
    CHECK(loc->tet == 0);
    for (int k = 0; k < 4; ++k) CHECK(loc->bary[k] == doctest::Approx(0.25).epsilon(1e-12));
  }

  SUBCASE("mesh vertex hits an incident tet with unit barycentric") {
    auto loc = locate_point(m, m.vertices()[13]);
    REQUIRE(loc.has_value());
    CHECK(loc->bary.maxCoeff() == doctest::Approx(1.0).epsilon(1e-10));
    bool incident = false;
    for (int k = 0; k < 4; ++k) incident = incident || (m.tets()[loc->tet][k] == 13);
    CHECK(incident);
  }

  SUBCASE("exterior point is not found") {
    CHECK(!locate_point(m, Vec3(2.0, 0.5, 0.5)).has_value());
  }

  SUBCASE("barycentric combination reproduces the point") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 30; ++trial) {
      Vec3 x = qpat_test::random_vector(rng, 3, 0.0, 1.0);
      auto loc = locate_point(m, x);
      REQUIRE(loc.has_value());
      CHECK(loc->bary.sum() == doctest::Approx(1.0).epsilon(1e-12));
      Vec3 rec = Vec3::Zero();
      for (int k = 0; k < 4; ++k) rec += loc->bary[k] * m.vertices()[m.tets()[loc->tet][k]];
      CHECK((rec - x).norm() < 1e-9 * m.diameter());
    }
  }
}

TEST_CASE("interpolation operator") {
  TetMesh fine = generate_box_mesh(4, 4, 4, Vec3::Zero(), Vec3(2, 2, 2));

  SUBCASE("fine onto itself is the identity") {
    InterpolationOperator P = build_interpolation(fine, fine);
    Eigen::MatrixXd dense = Eigen::MatrixXd(P.P);
    CHECK((dense - Eigen::MatrixXd::Identity(fine.num_vertices(), fine.num_vertices()))
              .cwiseAbs()
              .maxCoeff() < 1e-12);
  }

  TetMesh coarse = generate_box_mesh(3, 3, 3, Vec3::Zero(), Vec3(2, 2, 2));
  InterpolationOperator P = build_interpolation(fine, coarse);

  SUBCASE("rows are stochastic with at most 4 entries") {
    NodalField ones = NodalField::Ones(fine.num_vertices());
    NodalField r = P.apply(ones);
    CHECK((r.array() - 1.0).abs().maxCoeff() < 1e-12);
    Eigen::MatrixXd dense = Eigen::MatrixXd(P.P);
    for (int i = 0; i < P.rows(); ++i) {
      int nnz = 0;
      for (int j = 0; j < P.cols(); ++j)
        if (dense(i, j) != 0.0) ++nnz;
      CHECK(nnz <= 4);
      CHECK(dense.row(i).minCoeff() > -1e-10);
    }
  }

  SUBCASE("affine fields are reproduced exactly") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 10; ++trial) {
      Vec3 a = qpat_test::random_vector(rng, 3);
      double b = qpat_test::random_vector(rng, 1)[0];
      NodalField ff(fine.num_vertices()), cf(coarse.num_vertices());
      for (int i = 0; i < fine.num_vertices(); ++i) ff[i] = a.dot(fine.vertices()[i]) + b;
      for (int i = 0; i < coarse.num_vertices(); ++i) cf[i] = a.dot(coarse.vertices()[i]) + b;
      CHECK((P.apply(ff) - cf).cwiseAbs().maxCoeff() < 1e-10);
    }
  }

  SUBCASE("coarse vertex outside the fine domain fails") {
    TetMesh outside = generate_box_mesh(2, 2, 2, Vec3(0.5, 0.5, 0.5), Vec3(3, 3, 3));
    CHECK_THROWS_AS(build_interpolation(fine, outside), ConfigError);
  }
}
