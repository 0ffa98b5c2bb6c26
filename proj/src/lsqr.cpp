#include "qpat/lsqr.hpp"

#include <cmath>

#include "qpat/errors.hpp"

namespace qpat {

void LsqrConfig::validate() const {
  if (m0 < 1) throw ConfigError("lsqr: m0 must be >= 1");
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("lsqr: tau must lie in (0, 1)");
  if (max_iter < m0 + 1) throw ConfigError("lsqr: max_iter must be >= m0 + 1");
}

const char* to_string(LsqrStop reason) {
  switch (reason) {
    case LsqrStop::window_rule:
      return "window_rule";
    case LsqrStop::max_iter:
      return "max_iter";
    case LsqrStop::converged:
      return "converged";
  }
  return "?";
}

LsqrOutcome plsqr_solve(const LinearOp& apply_A, const LinearOp& apply_At,
                        const LinearOp& solve_Mdelta, const Eigen::VectorXd& y,
                        const LsqrConfig& cfg) {
  cfg.validate();
  if (!y.allFinite()) throw NumericalError("lsqr: non-finite right-hand side");

  LsqrOutcome out;
  std::vector<double> hist;  // |A beta_m - y|, m = 0..iterations

  const double beta1 = y.norm();
  hist.push_back(beta1);
  if (beta1 == 0.0) {
    Eigen::VectorXd probe = apply_At(y);
    out.solution = Eigen::VectorXd::Zero(probe.size());
    out.iterations = 0;
    out.stop_reason = LsqrStop::converged;
    if (cfg.record_history) out.residual_history = hist;
    return out;
  }

  // Golub-Kahan bidiagonalization of A L^-1 without L: the right-space vector
  // v_hat = L^-T q is carried as the pair (qv = L^T v_hat, pv = L^-1 v_hat),
  // with pv = M_delta^-1 qv and |v_hat|^2 = qv . pv. Solution updates run in
  // the pv representation, which lands directly in original coordinates.
  Eigen::VectorXd u = y / beta1;
  Eigen::VectorXd q = apply_At(u);
  Eigen::VectorXd p = solve_Mdelta(q);
  double alpha_sq = q.dot(p);
  if (!(alpha_sq > 0.0)) {
    // A^T y = 0: zero is already the least-squares solution.
    out.solution = Eigen::VectorXd::Zero(q.size());
    out.iterations = 0;
    out.stop_reason = LsqrStop::converged;
    if (cfg.record_history) out.residual_history = hist;
    return out;
  }
  double alpha = std::sqrt(alpha_sq);
  Eigen::VectorXd qv = q / alpha;
  Eigen::VectorXd pv = p / alpha;

  Eigen::VectorXd x = Eigen::VectorXd::Zero(q.size());
  Eigen::VectorXd w = pv;
  double phibar = beta1;
  double rhobar = alpha;

  const double converge_tol = 1e-14 * beta1;
  bool exhausted = false;

  int m = 0;
  while (m < cfg.max_iter) {
    ++m;

    // Continue the bidiagonalization.
    Eigen::VectorXd ubar = apply_A(pv) - alpha * u;
    double beta = ubar.norm();
    double next_alpha = 0.0;
    if (beta > 0.0) {
      u = ubar / beta;
      Eigen::VectorXd qbar = apply_At(u) - beta * qv;
      Eigen::VectorXd pbar = solve_Mdelta(qbar);
      double a2 = qbar.dot(pbar);
      if (a2 > 0.0) {
        next_alpha = std::sqrt(a2);
        qv = qbar / next_alpha;
        pv = pbar / next_alpha;
      } else {
        exhausted = true;
      }
    } else {
      exhausted = true;
    }

    // Givens rotation eliminating beta from the lower bidiagonal matrix.
    double rho = std::hypot(rhobar, beta);
    double c = rhobar / rho;
    double s = beta / rho;
    double theta = s * next_alpha;
    rhobar = -c * next_alpha;
    double phi = c * phibar;
    phibar = s * phibar;
    alpha = next_alpha;

    x += (phi / rho) * w;
    w = pv - (theta / rho) * w;

    if (!std::isfinite(phibar) || !x.allFinite())
      throw NumericalError("lsqr: non-finite intermediate at iteration " + std::to_string(m));

    hist.push_back(phibar);
    if (cfg.record_iterates) out.iterates.push_back(x);

    if (exhausted || phibar <= converge_tol) {
      out.stop_reason = LsqrStop::converged;
      break;
    }
    if (m > cfg.m0) {
      double r_m = 1.0 - hist[m] / hist[m - cfg.m0];
      if (r_m <= cfg.tau) {
        out.stop_reason = LsqrStop::window_rule;
        break;
      }
    }
    if (m == cfg.max_iter) {
      out.stop_reason = LsqrStop::max_iter;
      break;
    }
  }

  out.solution = std::move(x);
  out.iterations = m;
  if (cfg.record_history) out.residual_history = std::move(hist);
  return out;
}

}  // namespace qpat
