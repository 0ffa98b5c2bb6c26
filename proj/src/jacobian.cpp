#include "qpat/jacobian.hpp"

#include "qpat/errors.hpp"
#include "qpat/fem.hpp"

namespace qpat {

namespace {

// G1_ij = -int phi_j grad(phi).grad(phi_i) dx. The element gradient of phi is
// constant, so the integrand is linear in phi_j: each local j contributes
// -(grad(phi).g_i) V/4.
SparseSymMatrix assemble_G1(const TetMesh& mesh, const NodalField& phi) {
  const int n = mesh.num_vertices();
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<size_t>(mesh.num_tets()) * 16);
  for (int e = 0; e < mesh.num_tets(); ++e) {
    const auto& t = mesh.tets()[e];
    const auto& g = mesh.tet_gradients(e);
    const double V = mesh.tet_volume(e);
    Vec3 grad_phi = Vec3::Zero();
    for (int a = 0; a < 4; ++a) grad_phi += phi[t[a]] * g.row(a).transpose();
    for (int i = 0; i < 4; ++i) {
      double row_val = -grad_phi.dot(g.row(i)) * V * 0.25;
      for (int j = 0; j < 4; ++j) trips.emplace_back(t[i], t[j], row_val);
    }
  }
  Eigen::SparseMatrix<double> G(n, n);
  G.setFromTriplets(trips.begin(), trips.end());
  return SparseSymMatrix(std::move(G), false);
}

}  // namespace

JacobianState build_jacobian_state(const OpticalState& state) {
  if (state.mesh == nullptr || state.phi.empty())
    throw ConfigError("build_jacobian_state: optical state has no solved fluences");
  JacobianState js;
  js.mesh = state.mesh;
  js.kappa = state.kappa;
  js.mu = state.mu;
  js.phi = state.phi;
  js.K_fact = state.K_fact;
  js.G1.reserve(state.phi.size());
  js.G2.reserve(state.phi.size());
  for (const auto& phi : state.phi) {
    js.G1.push_back(assemble_G1(*state.mesh, phi));
    // G2_ij = -int phi_j phi phi_i dx = -(P1-weighted mass with density phi).
    SparseSymMatrix G2 = assemble_weighted_mass(*state.mesh, phi);
    G2.mat *= -1.0;
    js.G2.push_back(std::move(G2));
  }
  return js;
}

NodalField jac_apply(const JacobianState& state, const NodalField& s) {
  const int n = state.n();
  if (s.size() != 2 * n) throw ConfigError("jac_apply: direction must have length 2N");
  NodalField s1 = state.kappa.cwiseProduct(s.head(n));
  NodalField s2 = state.mu.cwiseProduct(s.tail(n));

  const int nk = state.num_illuminations();
  NodalField out(static_cast<Eigen::Index>(nk) * n);
  for (int k = 0; k < nk; ++k) {
    NodalField w = state.G1[k].apply(s1) + state.G2[k].apply(s2);
    NodalField z = state.K_fact->solve(w);
    out.segment(static_cast<Eigen::Index>(k) * n, n) =
        state.mu.cwiseProduct(z) + state.phi[k].cwiseProduct(s2);
  }
  return out;
}

NodalField jac_apply_transpose(const JacobianState& state, const NodalField& t) {
  const int n = state.n();
  const int nk = state.num_illuminations();
  if (t.size() != static_cast<Eigen::Index>(nk) * n)
    throw ConfigError("jac_apply_transpose: vector must have length K*N");

  NodalField out = NodalField::Zero(2 * n);
  for (int k = 0; k < nk; ++k) {
    NodalField tk = t.segment(static_cast<Eigen::Index>(k) * n, n);
    NodalField z = state.K_fact->solve(state.mu.cwiseProduct(tk));
    out.head(n) += state.kappa.cwiseProduct(state.G1[k].apply_transpose(z));
    out.tail(n) += state.mu.cwiseProduct(state.G2[k].apply(z)) +
                   state.mu.cwiseProduct(state.phi[k].cwiseProduct(tk));
  }
  return out;
}

NodalField jac_apply_kappa(const JacobianState& state, const NodalField& s1) {
  const int n = state.n();
  if (s1.size() != n) throw ConfigError("jac_apply_kappa: direction must have length N");
  NodalField s(2 * n);
  s.head(n) = s1;
  s.tail(n).setZero();
  return jac_apply(state, s);
}

NodalField jac_apply_kappa_transpose(const JacobianState& state, const NodalField& t) {
  return jac_apply_transpose(state, t).head(state.n());
}

}  // namespace qpat
