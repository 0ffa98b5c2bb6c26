#pragma once

#include <memory>
#include <vector>

#include "qpat/fem.hpp"
#include "qpat/illumination.hpp"
#include "qpat/mesh.hpp"
#include "qpat/sparse.hpp"

namespace qpat {

/// Optical parameters in the exponential parametrization kappa = kappa0*exp(kt),
/// mu = mu0*exp(mt), plus the per-illumination fluence solves and the shared
/// system matrix factorization. Immutable once built.
struct OpticalState {
  const TetMesh* mesh = nullptr;
  NodalField kappa_tilde, mu_tilde;  // log-parameters (dimensionless)
  double kappa0 = 1.0;               // mm
  double mu0 = 1.0;                  // mm^-1
  NodalField kappa, mu;              // physical fields, strictly positive
  std::vector<NodalField> phi;       // fluence per illumination
  std::vector<NodalField> load;      // per-illumination load vectors
  SparseSymMatrix K;
  std::shared_ptr<SpdFactorization> K_fact;
  std::vector<double> energy_balance_err;  // |1^T K phi - 1^T f| / |1^T f| per illumination
  NodalField h;                            // stacked absorbed energy density, length K*N

  int num_illuminations() const { return static_cast<int>(phi.size()); }
  NodalField h_of(int k) const { return h.segment(k * kappa.size(), kappa.size()); }
};

/// Solves K phi = f per illumination (K assembled once, shared) and sets
/// h^(k) = mu .* phi^(k), stacked in illumination order.
OpticalState evaluate_forward(const TetMesh& mesh, const NodalField& kappa_tilde,
                              const NodalField& mu_tilde, double kappa0, double mu0,
                              const std::vector<Illumination>& illuminations,
                              SolverMethod method = SolverMethod::direct);

/// Same solve for physical (already positive) coefficient fields.
OpticalState forward_solve_physical(const TetMesh& mesh, const NodalField& kappa,
                                    const NodalField& mu,
                                    const std::vector<Illumination>& illuminations,
                                    SolverMethod method = SolverMethod::direct);

/// int_Omega H dx for a nodal absorbed-energy field (P1 quadrature, exact).
double total_absorption(const TetMesh& mesh, const NodalField& h);

/// Largest energy-balance error seen by any forward solve in this process,
/// and a reset for test harnesses.
double max_energy_balance_error_seen();
void reset_energy_balance_tracking();

}  // namespace qpat
