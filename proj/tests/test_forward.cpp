#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "qpat/forward.hpp"
#include "support/oracles.hpp"

using namespace qpat;

namespace {

std::vector<Illumination> two_faces() {
  return {make_face_illumination(kFaceZMin), make_face_illumination(kFaceZMax)};
}

}  // namespace

TEST_CASE("zero log-parameters give exactly the reference levels") {
  TetMesh m = generate_box_mesh(2, 2, 2, Vec3::Zero(), Vec3::Ones());
  NodalField zero = NodalField::Zero(m.num_vertices());
  OpticalState st = evaluate_forward(m, zero, zero, 0.37, 0.021, two_faces());
  CHECK((st.kappa.array() == 0.37).all());
  CHECK((st.mu.array() == 0.021).all());
}

TEST_CASE("zero flux gives zero fluence and zero data") {
  TetMesh m = generate_box_mesh(2, 2, 2, Vec3::Zero(), Vec3::Ones());
  NodalField ones = NodalField::Ones(m.num_vertices());
  Illumination none = make_custom_illumination(std::vector<double>(m.num_boundary_facets(), 0.0));
  OpticalState st = forward_solve_physical(m, ones, ones, {none});
  CHECK(st.phi[0].cwiseAbs().maxCoeff() == 0.0);
  CHECK(st.h.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("data is invariant under the x<->y mesh symmetry") {
  // The Kuhn subdivision contains all six axis orderings, so swapping x and y
  // maps the tet set onto itself; for a -z face flux and constant parameters
  // the discrete solution must follow the same permutation.
  int n = 3;
  TetMesh m = generate_box_mesh(n, n, n, Vec3::Zero(), Vec3::Ones());
  NodalField ones = NodalField::Ones(m.num_vertices());
  OpticalState st = forward_solve_physical(m, 0.3 * ones, 0.015 * ones,
                                           {make_face_illumination(kFaceZMin)});
  auto vid = [&](int i, int j, int k) { return i + (n + 1) * (j + (n + 1) * k); };
  NodalField h = st.h;
  double scale = h.cwiseAbs().maxCoeff();
  for (int k = 0; k <= n; ++k)
    for (int j = 0; j <= n; ++j)
      for (int i = 0; i <= n; ++i)
        CHECK(std::abs(h[vid(i, j, k)] - h[vid(j, i, k)]) < 1e-9 * scale);
}

TEST_CASE("total absorption") {
  TetMesh m = generate_box_mesh(3, 3, 3, Vec3::Zero(), Vec3::Ones());

  SUBCASE("constant field integrates to the volume") {
    CHECK(total_absorption(m, NodalField::Ones(m.num_vertices())) ==
          doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("linear field integrates exactly") {
    NodalField f(m.num_vertices());
    for (int i = 0; i < m.num_vertices(); ++i) f[i] = 3.0 * m.vertices()[i][0] + 0.5;
    CHECK(total_absorption(m, f) == doctest::Approx(3.0 * 0.5 + 0.5).epsilon(1e-12));
  }

  SUBCASE("solved forward problem satisfies the integrated balance") {
    // int mu phi dx + 1/2 int_dOmega phi dS = 2 int_dOmega Phi dS, both
    // boundary integrals assembled by exact facet quadrature.
    NodalField ones = NodalField::Ones(m.num_vertices());
    Illumination il = make_face_illumination(kFaceZMin, 1.5);
    OpticalState st = forward_solve_physical(m, 0.5 * ones, 2.0 * ones, {il});
    const NodalField& phi = st.phi[0];

    double absorbed = total_absorption(m, 2.0 * phi);  // mu constant
    double boundary = 0.0, influx = 0.0;
    for (int fi = 0; fi < m.num_boundary_facets(); ++fi) {
      const auto& bf = m.boundary_facets()[fi];
      double phi_face = (phi[bf.v[0]] + phi[bf.v[1]] + phi[bf.v[2]]) / 3.0;  // exact for P1
      boundary += 0.5 * bf.area * phi_face;
      influx += 2.0 * bf.area * il.value(m, fi, Vec3::Zero());
    }
    CHECK(std::abs(absorbed + boundary - influx) < 1e-9 * influx);
  }
}

TEST_CASE("positivity and linearity in the flux") {
  TetMesh m = generate_box_mesh(4, 4, 4, Vec3::Zero(), Vec3::Ones());
  NodalField ones = NodalField::Ones(m.num_vertices());

  OpticalState st1 = forward_solve_physical(m, ones, ones, {make_face_illumination(kFaceZMin)});
  CHECK(st1.h.minCoeff() > 0.0);

  OpticalState st2 =
      forward_solve_physical(m, ones, ones, {make_face_illumination(kFaceZMin, 2.0)});
  CHECK((st2.h - 2.0 * st1.h).cwiseAbs().maxCoeff() < 1e-12 * st1.h.cwiseAbs().maxCoeff());
}

TEST_CASE("fluence responds to parameter changes") {
  TetMesh m = generate_box_mesh(3, 3, 3, Vec3::Zero(), Vec3::Ones());
  NodalField zero = NodalField::Zero(m.num_vertices());
  auto il = two_faces();
  OpticalState a = evaluate_forward(m, zero, zero, 0.3, 0.1, il);
  OpticalState b = evaluate_forward(m, zero, NodalField::Constant(m.num_vertices(), 0.1), 0.3,
                                    0.1, il);
  CHECK((a.h - b.h).norm() > 0.0);
}

TEST_CASE("stacking order follows the illumination order") {
  TetMesh m = generate_box_mesh(2, 2, 2, Vec3::Zero(), Vec3::Ones());
  NodalField zero = NodalField::Zero(m.num_vertices());
  auto il = two_faces();
  OpticalState st = evaluate_forward(m, zero, zero, 0.3, 0.015, il);
  OpticalState only0 = evaluate_forward(m, zero, zero, 0.3, 0.015, {il[0]});
  OpticalState only1 = evaluate_forward(m, zero, zero, 0.3, 0.015, {il[1]});
  CHECK((st.h_of(0) - only0.h).cwiseAbs().maxCoeff() == 0.0);
  CHECK((st.h_of(1) - only1.h).cwiseAbs().maxCoeff() == 0.0);
}
