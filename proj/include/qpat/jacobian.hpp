#pragma once

#include <memory>
#include <vector>

#include "qpat/forward.hpp"
#include "qpat/sparse.hpp"

namespace qpat {

/// Everything needed to multiply by the Jacobian of (kappa_tilde, mu_tilde) -> h
/// and its transpose without ever forming the Jacobian: per-illumination load
/// matrices G1, G2, the fluences, and the shared K factorization.
///
/// G1_ij = -int phi_j grad(phi).grad(phi_i) dx (K-pattern, not symmetric),
/// G2_ij = -int phi_j phi phi_i dx (symmetric). Invalidated when the optical
/// parameters change; rebuild from a fresh OpticalState.
struct JacobianState {
  const TetMesh* mesh = nullptr;
  NodalField kappa, mu;
  std::vector<NodalField> phi;
  std::vector<SparseSymMatrix> G1, G2;
  std::shared_ptr<SpdFactorization> K_fact;

  int num_illuminations() const { return static_cast<int>(phi.size()); }
  int n() const { return static_cast<int>(kappa.size()); }
};

JacobianState build_jacobian_state(const OpticalState& state);

/// J s for s = [s1; s2] of length 2N; returns the stacked K*N product
///   diag(mu) K^-1 (G1 diag(kappa) s1 + G2 diag(mu) s2) + diag(phi) diag(mu) s2
/// per illumination (one K-solve each).
NodalField jac_apply(const JacobianState& state, const NodalField& s);

/// J^T t for a stacked t of length K*N; returns length 2N
///   [diag(kappa) G1^T; diag(mu) G2] K^-1 diag(mu) t + [0; diag(mu) diag(phi) t]
/// summed over illuminations (one K-solve each).
NodalField jac_apply_transpose(const JacobianState& state, const NodalField& t);

/// J restricted to the kappa_tilde block (step-0 use): s1 of length N.
NodalField jac_apply_kappa(const JacobianState& state, const NodalField& s1);
NodalField jac_apply_kappa_transpose(const JacobianState& state, const NodalField& t);

}  // namespace qpat
