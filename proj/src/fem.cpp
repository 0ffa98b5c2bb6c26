#include "qpat/fem.hpp"

#include <cmath>
#include <vector>

#include "qpat/errors.hpp"

namespace qpat {

namespace {

void check_field(const TetMesh& mesh, const NodalField& f, const char* name, bool positive) {
  if (f.size() != mesh.num_vertices())
    throw ConfigError(std::string(name) + ": field length does not match vertex count");
  if (positive)
    for (int i = 0; i < f.size(); ++i)
      if (!(f[i] > 0.0))
        throw ConfigError(std::string(name) + ": nonpositive value at node " + std::to_string(i));
}

}  // namespace

SparseSymMatrix assemble_system(const TetMesh& mesh, const NodalField& kappa,
                                const NodalField& mu) {
  check_field(mesh, kappa, "kappa", true);
  check_field(mesh, mu, "mu", true);

  const int n = mesh.num_vertices();
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<size_t>(mesh.num_tets()) * 16 + mesh.num_boundary_facets() * 9);

  for (int e = 0; e < mesh.num_tets(); ++e) {
    const auto& t = mesh.tets()[e];
    const auto& g = mesh.tet_gradients(e);
    const double V = mesh.tet_volume(e);

    double kbar = 0.0, musum = 0.0;
    for (int a = 0; a < 4; ++a) {
      kbar += kappa[t[a]];
      musum += mu[t[a]];
    }
    kbar *= 0.25;

    // Stiffness with element-mean kappa; mass exact for P1 mu:
    //   int lam_m lam_i lam_j = V/20, V/60, V/120 for 3, 2, 1 coincidences.
    // Each off-diagonal value is computed once and mirrored, making K
    // bitwise symmetric.
    for (int a = 0; a < 4; ++a)
      for (int b = a; b < 4; ++b) {
        double stiff = kbar * V * g.row(a).dot(g.row(b));
        double mass = (a == b) ? V / 60.0 * (musum + 2.0 * mu[t[a]])
                               : V / 120.0 * (musum + mu[t[a]] + mu[t[b]]);
        trips.emplace_back(t[a], t[b], stiff + mass);
        if (a != b) trips.emplace_back(t[b], t[a], stiff + mass);
      }
  }

  // Robin term 1/2 int_dOmega phi_i phi_j dS, exact: A/6 diagonal, A/12 off.
  for (const auto& f : mesh.boundary_facets()) {
    for (int a = 0; a < 3; ++a)
      for (int b = a; b < 3; ++b) {
        double val = 0.5 * f.area * ((a == b) ? 1.0 / 6.0 : 1.0 / 12.0);
        trips.emplace_back(f.v[a], f.v[b], val);
        if (a != b) trips.emplace_back(f.v[b], f.v[a], val);
      }
  }

  Eigen::SparseMatrix<double> K(n, n);
  K.setFromTriplets(trips.begin(), trips.end());
  return SparseSymMatrix(std::move(K), true);
}

NodalField assemble_load(const TetMesh& mesh, const Illumination& flux) {
  NodalField f = NodalField::Zero(mesh.num_vertices());
  // 3-point edge-midpoint rule: weights A/3, each midpoint touches two of the
  // facet's vertices with basis value 1/2.
  constexpr int kEdge[3][2] = {{1, 2}, {0, 2}, {0, 1}};
  for (int fi = 0; fi < mesh.num_boundary_facets(); ++fi) {
    const auto& bf = mesh.boundary_facets()[fi];
    for (const auto& e : kEdge) {
      Vec3 mid = 0.5 * (mesh.vertices()[bf.v[e[0]]] + mesh.vertices()[bf.v[e[1]]]);
      double phi_val = flux.value(mesh, fi, mid);
      if (phi_val == 0.0) continue;
      double w = 2.0 * (bf.area / 3.0) * phi_val * 0.5;
      f[bf.v[e[0]]] += w;
      f[bf.v[e[1]]] += w;
    }
  }
  return f;
}

SparseSymMatrix assemble_weighted_mass(const TetMesh& mesh, const NodalField& rho) {
  check_field(mesh, rho, "rho", false);
  const int n = mesh.num_vertices();
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<size_t>(mesh.num_tets()) * 16);
  for (int e = 0; e < mesh.num_tets(); ++e) {
    const auto& t = mesh.tets()[e];
    const double V = mesh.tet_volume(e);
    double s = rho[t[0]] + rho[t[1]] + rho[t[2]] + rho[t[3]];
    for (int a = 0; a < 4; ++a)
      for (int b = a; b < 4; ++b) {
        double val = (a == b) ? V / 60.0 * (s + 2.0 * rho[t[a]])
                              : V / 120.0 * (s + rho[t[a]] + rho[t[b]]);
        trips.emplace_back(t[a], t[b], val);
        if (a != b) trips.emplace_back(t[b], t[a], val);
      }
  }
  Eigen::SparseMatrix<double> M(n, n);
  M.setFromTriplets(trips.begin(), trips.end());
  return SparseSymMatrix(std::move(M), true);
}

SparseSymMatrix assemble_elementwise_stiffness(const TetMesh& mesh,
                                               const Eigen::VectorXd& element_coeff) {
  if (element_coeff.size() != mesh.num_tets())
    throw ConfigError("element coefficient length does not match tet count");
  const int n = mesh.num_vertices();
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<size_t>(mesh.num_tets()) * 16);
  for (int e = 0; e < mesh.num_tets(); ++e) {
    const auto& t = mesh.tets()[e];
    const auto& g = mesh.tet_gradients(e);
    const double cV = element_coeff[e] * mesh.tet_volume(e);
    for (int a = 0; a < 4; ++a)
      for (int b = a; b < 4; ++b) {
        double val = cV * g.row(a).dot(g.row(b));
        trips.emplace_back(t[a], t[b], val);
        if (a != b) trips.emplace_back(t[b], t[a], val);
      }
  }
  Eigen::SparseMatrix<double> S(n, n);
  S.setFromTriplets(trips.begin(), trips.end());
  return SparseSymMatrix(std::move(S), true);
}

double integrate_field(const TetMesh& mesh, const NodalField& f) {
  check_field(mesh, f, "f", false);
  double total = 0.0;
  for (int e = 0; e < mesh.num_tets(); ++e) {
    const auto& t = mesh.tets()[e];
    total += mesh.tet_volume(e) * 0.25 * (f[t[0]] + f[t[1]] + f[t[2]] + f[t[3]]);
  }
  return total;
}

}  // namespace qpat
