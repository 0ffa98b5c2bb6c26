#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

namespace qpat {

using LinearOp = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct LsqrConfig {
  int m0 = 10;           // window length of the stopping rule
  double tau = 1e-2;     // relative-reduction threshold
  int max_iter = 200;    // safety cap (its triggering is logged as anomalous)
  bool record_history = true;
  bool record_iterates = false;  // keep every beta_m (diagnostics, small problems)

  void validate() const;  // m0 >= 1, 0 < tau < 1, max_iter >= m0 + 1
};

enum class LsqrStop {
  window_rule,  // first m > m0 with r_m <= tau
  max_iter,
  converged,    // residual hit (numerical) zero / Krylov space exhausted
};

struct LsqrOutcome {
  Eigen::VectorXd solution;              // in original coordinates (beta = L^-1 beta~)
  std::vector<double> residual_history;  // |A beta_m - y| for m = 0..iterations
  std::vector<Eigen::VectorXd> iterates; // beta_1..beta_m when record_iterates
  int iterations = 0;
  LsqrStop stop_reason = LsqrStop::max_iter;
};

const char* to_string(LsqrStop reason);

/// Priorconditioned LSQR. Mathematically identical (in exact arithmetic) to
/// standard LSQR applied to A L^-1 with starting vector zero and mapped back by
/// beta = L^-1 beta~, where M_delta = L^T L -- realized without forming L via
/// Golub-Kahan bidiagonalization whose right-space inner products are weighted
/// by M_delta^-1. Costs one apply_A, one apply_At and one solve_Mdelta per
/// iteration. Terminates at the first m > m0 with
///   r_m = 1 - |A beta_m - y| / |A beta_{m-m0} - y| <= tau,
/// or at max_iter. No reorthogonalization.
LsqrOutcome plsqr_solve(const LinearOp& apply_A, const LinearOp& apply_At,
                        const LinearOp& solve_Mdelta, const Eigen::VectorXd& y,
                        const LsqrConfig& cfg);

}  // namespace qpat
