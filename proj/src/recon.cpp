#include "qpat/recon.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>

#include "qpat/errors.hpp"
#include "qpat/jacobian.hpp"

namespace qpat {

void BackgroundSearch::validate() const {
  if (!(kappa_min > 0.0 && kappa_max > kappa_min))
    throw ConfigError("background search: bad kappa bounds");
  if (!(mu_min > 0.0 && mu_max > mu_min)) throw ConfigError("background search: bad mu bounds");
  if (grid < 2) throw ConfigError("background search: grid resolution must be >= 2");
  if (!(nm_tol > 0.0)) throw ConfigError("background search: refinement tolerance must be > 0");
  if (nm_max_iter < 1) throw ConfigError("background search: refinement step cap must be >= 1");
}

void ReconConfig::validate() const {
  prior.validate();
  lsqr.validate();
  background.validate();
  if (max_outer < 1) throw ConfigError("recon: max_outer must be >= 1");
  if (!(clamp_floor > 0.0 && clamp_floor < 1.0))
    throw ConfigError("recon: clamp_floor must lie in (0, 1)");
}

std::pair<double, double> fit_background(const TetMesh& mesh, const MeasurementSet& data,
                                         const std::vector<Illumination>& illuminations,
                                         const BackgroundSearch& search, SolverMethod method) {
  search.validate();
  if (data.num_illuminations() == 0) throw ConfigError("fit_background: empty measurement set");
  if (data.num_illuminations() != static_cast<int>(illuminations.size()))
    throw ConfigError("fit_background: illumination count does not match data");

  const NodalField chi = data.stacked_chi();
  const NodalField sigma = data.stacked_sigma();
  const int n = mesh.num_vertices();
  const NodalField ones = NodalField::Ones(n);

  auto objective = [&](double log_kappa, double log_mu) -> double {
    double kappa = std::exp(log_kappa), mu = std::exp(log_mu);
    try {
      OpticalState st = forward_solve_physical(mesh, kappa * ones, mu * ones, illuminations,
                                               method);
      double val = ((chi - st.h).cwiseQuotient(sigma)).norm();
      return std::isfinite(val) ? val : std::numeric_limits<double>::infinity();
    } catch (const NumericalError&) {
      return std::numeric_limits<double>::infinity();
    }
  };

  // Coarse log grid.
  const double lk0 = std::log(search.kappa_min), lk1 = std::log(search.kappa_max);
  const double lm0 = std::log(search.mu_min), lm1 = std::log(search.mu_max);
  double best = std::numeric_limits<double>::infinity();
  double best_lk = 0.0, best_lm = 0.0;
  for (int i = 0; i < search.grid; ++i)
    for (int j = 0; j < search.grid; ++j) {
      double lk = lk0 + (lk1 - lk0) * i / (search.grid - 1);
      double lm = lm0 + (lm1 - lm0) * j / (search.grid - 1);
      double val = objective(lk, lm);
      if (val < best) {
        best = val;
        best_lk = lk;
        best_lm = lm;
      }
    }
  if (!std::isfinite(best))
    throw ConfigError("fit_background: objective non-finite on the whole grid");

  // Nelder-Mead in log space, standard coefficients, terminating on simplex
  // diameter < nm_tol.
  struct Pt {
    Eigen::Vector2d x;
    double f;
  };
  const double step_k = 0.5 * (lk1 - lk0) / (search.grid - 1);
  const double step_m = 0.5 * (lm1 - lm0) / (search.grid - 1);
  std::array<Pt, 3> simplex;
  simplex[0] = {{best_lk, best_lm}, best};
  simplex[1] = {{best_lk + step_k, best_lm}, objective(best_lk + step_k, best_lm)};
  simplex[2] = {{best_lk, best_lm + step_m}, objective(best_lk, best_lm + step_m)};

  for (int it = 0; it < search.nm_max_iter; ++it) {
    std::sort(simplex.begin(), simplex.end(), [](const Pt& a, const Pt& b) { return a.f < b.f; });
    double diam = std::max({(simplex[0].x - simplex[1].x).norm(),
                            (simplex[0].x - simplex[2].x).norm(),
                            (simplex[1].x - simplex[2].x).norm()});
    if (diam < search.nm_tol) break;

    Eigen::Vector2d centroid = 0.5 * (simplex[0].x + simplex[1].x);
    Eigen::Vector2d xr = centroid + (centroid - simplex[2].x);
    double fr = objective(xr[0], xr[1]);
    if (fr < simplex[0].f) {
      Eigen::Vector2d xe = centroid + 2.0 * (centroid - simplex[2].x);
      double fe = objective(xe[0], xe[1]);
      simplex[2] = (fe < fr) ? Pt{xe, fe} : Pt{xr, fr};
    } else if (fr < simplex[1].f) {
      simplex[2] = {xr, fr};
    } else {
      Eigen::Vector2d xc = centroid + 0.5 * (simplex[2].x - centroid);
      double fc = objective(xc[0], xc[1]);
      if (fc < simplex[2].f) {
        simplex[2] = {xc, fc};
      } else {
        for (int i = 1; i < 3; ++i) {
          simplex[i].x = simplex[0].x + 0.5 * (simplex[i].x - simplex[0].x);
          simplex[i].f = objective(simplex[i].x[0], simplex[i].x[1]);
        }
      }
    }
  }
  std::sort(simplex.begin(), simplex.end(), [](const Pt& a, const Pt& b) { return a.f < b.f; });
  return {std::exp(simplex[0].x[0]), std::exp(simplex[0].x[1])};
}

std::pair<NodalField, NodalField> init_guesses(const MeasurementSet& data, double kappa0,
                                               double mu0, const std::vector<NodalField>& phi0,
                                               double clamp_floor) {
  if (data.num_illuminations() == 0 || phi0.empty())
    throw ConfigError("init_guesses: empty measurement set");
  if (static_cast<int>(phi0.size()) != data.num_illuminations())
    throw ConfigError("init_guesses: fluence count does not match data");
  if (!(kappa0 > 0.0) || !(mu0 > 0.0))
    throw ConfigError("init_guesses: background levels must be positive");
  const int n = data.num_nodes();

  // exp(mu_tilde_init) = (1/K) sum_k chi^(k)/(phi0^(k) mu0). On coarse meshes
  // the background fluence in deep shadow is numerically meaningless (the
  // discrete maximum principle fails there and phi0 can even dip below zero),
  // so a node's ratio is averaged only over illuminations lighting it above a
  // small fraction of their peak fluence. Nodes lit by no illumination carry
  // no usable data and start at the neutral mu_tilde = 0.
  constexpr double kLitFraction = 1e-3;
  constexpr double kFeather = 4.0;
  NodalField ratio = NodalField::Zero(n);
  Eigen::VectorXi valid = Eigen::VectorXi::Zero(n);
  for (int k = 0; k < data.num_illuminations(); ++k) {
    double pos_floor = kLitFraction * phi0[k].maxCoeff();
    if (!(pos_floor > 0.0))
      throw NumericalError("init_guesses: background fluence is nonpositive everywhere");
    for (int i = 0; i < n; ++i) {
      if (phi0[k][i] <= pos_floor) continue;
      ratio[i] += data.chi[k][i] / (phi0[k][i] * mu0);
      valid[i] += 1;
    }
  }

  double mx = 0.0;
  for (int i = 0; i < n; ++i) {
    if (valid[i] > 0) ratio[i] /= valid[i];
    if (valid[i] > 0 && std::isfinite(ratio[i])) mx = std::max(mx, ratio[i]);
  }
  if (!(mx > 0.0)) throw ConfigError("init_guesses: all data nonpositive");
  double floor_val = clamp_floor * mx;

  // Best relative illumination level per node, for feathering the guess
  // toward neutral as the shadow deepens. A hard lit/unlit cutoff would plant
  // artificial edges that the edge-preferring prior then treats as real.
  NodalField lit = NodalField::Zero(n);
  for (int k = 0; k < data.num_illuminations(); ++k) {
    double mxphi = phi0[k].maxCoeff();
    for (int i = 0; i < n; ++i) lit[i] = std::max(lit[i], phi0[k][i] / mxphi);
  }

  NodalField mu_tilde(n);
  for (int i = 0; i < n; ++i) {
    if (valid[i] == 0) {
      mu_tilde[i] = 0.0;
      continue;
    }
    bool usable = std::isfinite(ratio[i]);
    double raw = std::log(usable ? std::max(ratio[i], floor_val) : floor_val);
    double s = std::clamp((lit[i] - kLitFraction) / (kFeather * kLitFraction), 0.0, 1.0);
    mu_tilde[i] = s * raw;
  }

  return {NodalField::Zero(n), mu_tilde};
}

namespace {

struct WhitenedOps {
  // Whitened forward operator A = Gamma^-1/2 J and its transpose, as LSQR ops.
  const JacobianState* js;
  const NodalField* inv_sigma;
  bool kappa_only = false;

  Eigen::VectorXd apply(const Eigen::VectorXd& s) const {
    NodalField Js = kappa_only ? jac_apply_kappa(*js, s) : jac_apply(*js, s);
    return Js.cwiseProduct(*inv_sigma);
  }
  Eigen::VectorXd apply_t(const Eigen::VectorXd& t) const {
    NodalField wt = t.cwiseProduct(*inv_sigma);
    return kappa_only ? jac_apply_kappa_transpose(*js, wt) : jac_apply_transpose(*js, wt);
  }
};

}  // namespace

NodalField step_zero(const OpticalState& state, const NodalField& kappa_tilde_init,
                     const MeasurementSet& data, const ReconConfig& cfg, OuterRecord* record) {
  const NodalField chi = data.stacked_chi();
  NodalField inv_sigma = data.stacked_sigma().cwiseInverse();

  JacobianState js = build_jacobian_state(state);
  WhitenedOps ops{&js, &inv_sigma, /*kappa_only=*/true};

  NodalField y_hat =
      (chi - state.h).cwiseProduct(inv_sigma) + ops.apply(kappa_tilde_init);

  SparseSymMatrix Mk = assemble_M(*state.mesh, kappa_tilde_init, cfg.prior);
  MDeltaSolver mdelta(Mk, cfg.prior);

  LsqrOutcome lsqr = plsqr_solve([&](const Eigen::VectorXd& s) { return ops.apply(s); },
                                 [&](const Eigen::VectorXd& t) { return ops.apply_t(t); },
                                 [&](const Eigen::VectorXd& x) { return mdelta.solve(x); }, y_hat,
                                 cfg.lsqr);
  if (record != nullptr) {
    record->outer = 0;
    record->inner_residuals = lsqr.residual_history;
    record->inner_stop = lsqr.stop_reason;
  }
  return lsqr.solution;
}

ReconResult reconstruct(const TetMesh& mesh, const MeasurementSet& data,
                        const std::vector<Illumination>& illuminations, const ReconConfig& cfg) {
  cfg.validate();
  if (data.num_nodes() != mesh.num_vertices())
    throw ConfigError("reconstruct: measurement size does not match mesh");
  if (data.num_illuminations() != static_cast<int>(illuminations.size()))
    throw ConfigError("reconstruct: illumination count does not match data");

  const NodalField chi = data.stacked_chi();
  const NodalField inv_sigma = data.stacked_sigma().cwiseInverse();
  auto whitened_residual = [&](const OpticalState& st) {
    return ((chi - st.h).cwiseProduct(inv_sigma)).norm();
  };

  ReconResult res;

  auto [kappa0, mu0] = fit_background(mesh, data, illuminations, cfg.background, cfg.solver);
  res.kappa0 = kappa0;
  res.mu0 = mu0;
  std::cerr << "[recon] background fit: kappa0 = " << kappa0 << " mm, mu0 = " << mu0
            << " mm^-1\n";

  const int n = mesh.num_vertices();
  OpticalState bg_state = evaluate_forward(mesh, NodalField::Zero(n), NodalField::Zero(n), kappa0,
                                           mu0, illuminations, cfg.solver);
  auto [kappa_tilde, mu_tilde] = init_guesses(data, kappa0, mu0, bg_state.phi, cfg.clamp_floor);

  OpticalState state =
      evaluate_forward(mesh, kappa_tilde, mu_tilde, kappa0, mu0, illuminations, cfg.solver);
  res.initial_residual = whitened_residual(state);
  std::cerr << "[recon] initial whitened residual " << res.initial_residual << "\n";

  if (cfg.enable_step_zero) {
    OuterRecord rec;
    NodalField refined = step_zero(state, kappa_tilde, data, cfg, &rec);
    OpticalState refined_state =
        evaluate_forward(mesh, refined, mu_tilde, kappa0, mu0, illuminations, cfg.solver);
    rec.nonlinear_residual = whitened_residual(refined_state);
    // Keep the refined diffusion guess only when it helps; a wildly
    // overshooting step 0 would poison every later linearization.
    rec.accepted = rec.nonlinear_residual < res.initial_residual;
    if (rec.accepted) {
      kappa_tilde = std::move(refined);
      state = std::move(refined_state);
    }
    std::cerr << "[recon] step 0: " << rec.inner_residuals.size() - 1 << " inner iterations ("
              << to_string(rec.inner_stop) << "), residual " << rec.nonlinear_residual
              << (rec.accepted ? " (kept)" : " (reverted)") << "\n";
    res.outer_log.push_back(std::move(rec));
  }

  double current_residual = whitened_residual(state);
  res.accepted_residuals.push_back(current_residual);
  if (cfg.record_beta_history) {
    Eigen::VectorXd beta(2 * n);
    beta.head(n) = kappa_tilde;
    beta.tail(n) = mu_tilde;
    res.beta_history.push_back(beta);
  }

  res.termination_reason = "max_outer";
  int accepted_updates = 0;
  for (int l = 1; l <= cfg.max_outer; ++l) {
    Eigen::VectorXd beta(2 * n);
    beta.head(n) = kappa_tilde;
    beta.tail(n) = mu_tilde;

    JacobianState js = build_jacobian_state(state);
    WhitenedOps ops{&js, &inv_sigma, /*kappa_only=*/false};

    // y~ = Gamma^-1/2 (chi - h + J beta).
    NodalField y_tilde = (chi - state.h).cwiseProduct(inv_sigma) + ops.apply(beta);

    SparseSymMatrix Mk = assemble_M(mesh, kappa_tilde, cfg.prior);
    SparseSymMatrix Mm = assemble_M(mesh, mu_tilde, cfg.prior);
    MDeltaSolver mdelta = build_Mdelta(Mk, Mm, cfg.prior);

    LsqrOutcome lsqr = plsqr_solve([&](const Eigen::VectorXd& s) { return ops.apply(s); },
                                   [&](const Eigen::VectorXd& t) { return ops.apply_t(t); },
                                   [&](const Eigen::VectorXd& x) { return mdelta.solve(x); },
                                   y_tilde, cfg.lsqr);
    if (lsqr.stop_reason == LsqrStop::max_iter)
      std::cerr << "[recon] warning: inner LSQR hit the iteration cap at outer step " << l
                << "\n";

    NodalField cand_kappa_tilde = lsqr.solution.head(n);
    NodalField cand_mu_tilde = lsqr.solution.tail(n);
    OpticalState cand_state = evaluate_forward(mesh, cand_kappa_tilde, cand_mu_tilde, kappa0, mu0,
                                               illuminations, cfg.solver);
    double cand_residual = whitened_residual(cand_state);

    OuterRecord rec;
    rec.outer = l;
    rec.inner_residuals = lsqr.residual_history;
    rec.inner_stop = lsqr.stop_reason;
    rec.nonlinear_residual = cand_residual;
    rec.accepted = cand_residual < current_residual;
    std::cerr << "[recon] outer " << l << ": " << lsqr.iterations << " inner iterations ("
              << to_string(lsqr.stop_reason) << "), residual " << cand_residual
              << (rec.accepted ? " (accepted)" : " (rejected)") << "\n";
    res.outer_log.push_back(rec);
    res.outer_iterations = l;

    if (!rec.accepted) {
      res.termination_reason = "nonlinear_residual_increase";
      if (accepted_updates == 0) res.rejected_at_first = true;
      break;
    }

    kappa_tilde = std::move(cand_kappa_tilde);
    mu_tilde = std::move(cand_mu_tilde);
    state = std::move(cand_state);
    current_residual = cand_residual;
    res.accepted_residuals.push_back(current_residual);
    ++accepted_updates;
    if (cfg.record_beta_history) res.beta_history.push_back(lsqr.solution);
  }

  res.kappa_tilde = kappa_tilde;
  res.mu_tilde = mu_tilde;
  res.kappa = kappa0 * kappa_tilde.array().exp();
  res.mu = mu0 * mu_tilde.array().exp();

  // Boundary instability is reported, not remedied: log the extremes.
  std::cerr << "[recon] done (" << res.termination_reason << "): kappa in [" << res.kappa.minCoeff()
            << ", " << res.kappa.maxCoeff() << "], mu in [" << res.mu.minCoeff() << ", "
            << res.mu.maxCoeff() << "]\n";
  return res;
}

}  // namespace qpat
