#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qpat/forward.hpp"
#include "qpat/lsqr.hpp"
#include "qpat/prior.hpp"
#include "qpat/simulate.hpp"

namespace qpat {

/// Grid bounds and refinement controls for the constant-background fit
/// (coarse log-grid search followed by Nelder-Mead in log-space).
struct BackgroundSearch {
  double kappa_min = 0.03, kappa_max = 3.0;  // mm
  double mu_min = 0.001, mu_max = 0.1;       // mm^-1
  int grid = 7;                              // grid resolution per axis
  double nm_tol = 1e-3;                      // simplex-diameter stop
  int nm_max_iter = 200;                     // refinement step cap

  void validate() const;
};

struct ReconConfig {
  PriorSpec prior;
  LsqrConfig lsqr;
  int max_outer = 10;
  BackgroundSearch background;
  double clamp_floor = 1e-6;  // relative floor for nonpositive data before logs
  bool enable_step_zero = true;
  std::uint64_t seed = 0;
  SolverMethod solver = SolverMethod::direct;
  bool record_beta_history = false;

  void validate() const;
};

struct OuterRecord {
  int outer = 0;  // 0 = step zero, 1.. = linearizations
  std::vector<double> inner_residuals;
  double nonlinear_residual = 0.0;  // after this outer step
  bool accepted = false;
  LsqrStop inner_stop = LsqrStop::max_iter;
};

struct ReconResult {
  NodalField kappa, mu;              // physical units, strictly positive
  NodalField kappa_tilde, mu_tilde;  // final log-parameters
  double kappa0 = 0.0, mu0 = 0.0;
  double initial_residual = 0.0;       // |Gamma^-1/2 (chi - h(beta_init))| before step 0
  std::vector<double> accepted_residuals;  // residuals of the kept beta sequence
  std::vector<OuterRecord> outer_log;
  std::vector<Eigen::VectorXd> beta_history;  // optional
  int outer_iterations = 0;  // linearizations run (excluding step 0)
  std::string termination_reason;
  bool rejected_at_first = false;  // step 4 rejected before any accepted update
};

/// Minimizer of |Gamma^-1/2 (chi - h(const))| over constant parameter pairs.
std::pair<double, double> fit_background(const TetMesh& mesh, const MeasurementSet& data,
                                         const std::vector<Illumination>& illuminations,
                                         const BackgroundSearch& search,
                                         SolverMethod method = SolverMethod::direct);

/// kappa_tilde_init = 0 and exp(mu_tilde_init) = (1/K) sum_k chi^(k)/(phi0^(k) mu0),
/// with the pre-log ratio clamped below at clamp_floor * max(ratio).
std::pair<NodalField, NodalField> init_guesses(const MeasurementSet& data, double kappa0,
                                               double mu0, const std::vector<NodalField>& phi0,
                                               double clamp_floor);

/// One priorconditioned LSQR run for kappa_tilde only at the initial guess;
/// returns the refined kappa_tilde_init and the inner record.
NodalField step_zero(const OpticalState& state, const NodalField& kappa_tilde_init,
                     const MeasurementSet& data, const ReconConfig& cfg,
                     OuterRecord* record = nullptr);

/// The full outer algorithm: background fit, initial guesses, optional zeroth
/// diffusion-only step, then repeated linearization + priorconditioned LSQR
/// until the nonlinear residual stops decreasing or max_outer is reached.
ReconResult reconstruct(const TetMesh& mesh, const MeasurementSet& data,
                        const std::vector<Illumination>& illuminations, const ReconConfig& cfg);

}  // namespace qpat
