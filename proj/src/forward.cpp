#include "qpat/forward.hpp"

#include <atomic>
#include <cmath>

#include "qpat/errors.hpp"

namespace qpat {

namespace {

std::atomic<double> g_max_balance_err{0.0};

void track_balance(double err) {
  double cur = g_max_balance_err.load();
  while (err > cur && !g_max_balance_err.compare_exchange_weak(cur, err)) {
  }
}

}  // namespace

double max_energy_balance_error_seen() { return g_max_balance_err.load(); }
void reset_energy_balance_tracking() { g_max_balance_err.store(0.0); }

OpticalState forward_solve_physical(const TetMesh& mesh, const NodalField& kappa,
                                    const NodalField& mu,
                                    const std::vector<Illumination>& illuminations,
                                    SolverMethod method) {
  OpticalState st;
  st.mesh = &mesh;
  st.kappa = kappa;
  st.mu = mu;
  st.kappa0 = 1.0;
  st.mu0 = 1.0;
  st.kappa_tilde = kappa.array().log();
  st.mu_tilde = mu.array().log();

  st.K = assemble_system(mesh, kappa, mu);
  st.K_fact = std::make_shared<SpdFactorization>(st.K, method);

  const int n = mesh.num_vertices();
  const int nk = static_cast<int>(illuminations.size());
  st.h.resize(static_cast<Eigen::Index>(nk) * n);
  st.phi.reserve(nk);
  st.load.reserve(nk);
  for (int k = 0; k < nk; ++k) {
    NodalField f = assemble_load(mesh, illuminations[k]);
    NodalField phi = st.K_fact->solve(f);

    // Energy balance (weak form with v = 1): 1^T K phi must equal 1^T f.
    double lhs = st.K.apply(phi).sum();
    double rhs = f.sum();
    double err = (rhs != 0.0) ? std::abs(lhs - rhs) / std::abs(rhs) : std::abs(lhs);
    track_balance(err);
    st.energy_balance_err.push_back(err);

    st.h.segment(static_cast<Eigen::Index>(k) * n, n) = mu.cwiseProduct(phi);
    st.phi.push_back(std::move(phi));
    st.load.push_back(std::move(f));
  }
  return st;
}

OpticalState evaluate_forward(const TetMesh& mesh, const NodalField& kappa_tilde,
                              const NodalField& mu_tilde, double kappa0, double mu0,
                              const std::vector<Illumination>& illuminations,
                              SolverMethod method) {
  if (!(kappa0 > 0.0) || !(mu0 > 0.0))
    throw ConfigError("evaluate_forward: kappa0 and mu0 must be positive");
  if (!kappa_tilde.allFinite() || !mu_tilde.allFinite())
    throw NumericalError("evaluate_forward: non-finite log-parameters");

  NodalField kappa = kappa0 * kappa_tilde.array().exp();
  NodalField mu = mu0 * mu_tilde.array().exp();
  OpticalState st = forward_solve_physical(mesh, kappa, mu, illuminations, method);
  st.kappa_tilde = kappa_tilde;
  st.mu_tilde = mu_tilde;
  st.kappa0 = kappa0;
  st.mu0 = mu0;
  return st;
}

double total_absorption(const TetMesh& mesh, const NodalField& h) {
  return integrate_field(mesh, h);
}

}  // namespace qpat
