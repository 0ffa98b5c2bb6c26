#pragma once

#include <memory>

#include "qpat/fem.hpp"
#include "qpat/mesh.hpp"
#include "qpat/sparse.hpp"

namespace qpat {

/// Edge-preferring prior on |grad u|: Perona-Malik
///   r(t) = T^2/2 log(1 + (t/T)^2),  c(t) = r'(t)/t = 1/(1 + (t/T)^2)
/// or smoothed TV
///   r(t) = sqrt(t^2 + eps^2) - eps,  c(t) = 1/sqrt(t^2 + eps^2).
/// T is a threshold on |grad(log-parameter)| in 1/mm of mesh coordinates.
struct PriorSpec {
  enum class Kind { perona_malik, smoothed_tv };
  Kind kind = Kind::perona_malik;
  double T = 5e-3;          // Perona-Malik edge threshold
  double tv_epsilon = 1e-3; // smoothed-TV smoothing
  double b_over_a = 1.0;    // weight of the mu prior relative to the kappa prior
  double delta = 1e-6;      // diagonal shift making M_delta positive definite

  void validate() const;
};

double r_value(double t, const PriorSpec& spec);
double diffusivity(double t, const PriorSpec& spec);

/// Lagged-diffusivity matrix: FEM stiffness matrix of -div(c_u grad .) with a
/// natural boundary condition, c_u evaluated per element at the (constant) P1
/// gradient magnitude of u. Positive semidefinite with M*1 = 0.
SparseSymMatrix assemble_M(const TetMesh& mesh, const NodalField& u, const PriorSpec& spec);

/// R(u) = sum_e vol(e) r(|grad u|_e), the discrete int r(|grad u|) dx.
double regularizer_value(const TetMesh& mesh, const NodalField& u, const PriorSpec& spec);

/// Solver for M_delta = blockdiag(M_kappa, (b/a) M_mu) + delta I. The blocks
/// are factorized separately; no triangular factor is ever exposed.
class MDeltaSolver {
 public:
  /// Two-block operator (full 2N system).
  MDeltaSolver(const SparseSymMatrix& M_kappa, const SparseSymMatrix& M_mu, const PriorSpec& spec);
  /// Single-block operator M(u) + delta I (the step-0 system, size N).
  MDeltaSolver(const SparseSymMatrix& M_single, const PriorSpec& spec);

  NodalField solve(const NodalField& x) const;
  int dim() const { return dim_; }

  /// Assembled shifted blocks (diagnostics / eigenvalue checks).
  const SparseSymMatrix& block(int i) const;

 private:
  int n_ = 0;
  int dim_ = 0;
  bool two_blocks_ = false;
  SparseSymMatrix b0_, b1_;
  std::shared_ptr<SpdFactorization> f0_, f1_;
};

MDeltaSolver build_Mdelta(const SparseSymMatrix& M_kappa, const SparseSymMatrix& M_mu,
                          const PriorSpec& spec);

}  // namespace qpat
