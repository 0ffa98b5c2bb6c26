#include "qpat/simulate.hpp"

#include <cmath>
#include <iostream>
#include <random>

#include "qpat/errors.hpp"
#include "qpat/forward.hpp"

namespace qpat {

NodalField MeasurementSet::stacked_chi() const {
  NodalField out(static_cast<Eigen::Index>(chi.size()) * num_nodes());
  for (size_t k = 0; k < chi.size(); ++k) out.segment(k * num_nodes(), num_nodes()) = chi[k];
  return out;
}

NodalField MeasurementSet::stacked_sigma() const {
  NodalField out(static_cast<Eigen::Index>(sigma.size()) * num_nodes());
  for (size_t k = 0; k < sigma.size(); ++k) out.segment(k * num_nodes(), num_nodes()) = sigma[k];
  return out;
}

MeasurementSet simulate_data(const TetMesh& fine, const PhantomSpec& spec,
                             const std::vector<Illumination>& illuminations,
                             const TetMesh& coarse, double noise_level, std::uint64_t seed,
                             SolverMethod method, double sigma_floor_rel,
                             bool model_error_sigma) {
  if (noise_level < 0.0) throw ConfigError("simulate_data: noise level must be >= 0");
  if (illuminations.empty()) throw ConfigError("simulate_data: no illuminations");
  if (!(sigma_floor_rel > 0.0)) throw ConfigError("simulate_data: sigma floor must be > 0");

  const double tol = 1e-6 * fine.diameter();
  if ((coarse.bbox_min() - fine.bbox_min()).cwiseAbs().maxCoeff() > tol ||
      (coarse.bbox_max() - fine.bbox_max()).cwiseAbs().maxCoeff() > tol)
    throw ConfigError("simulate_data: fine and coarse meshes cover different domains");

  if (fine.num_vertices() == coarse.num_vertices() && fine.num_tets() == coarse.num_tets())
    std::cerr << "[simulate] warning: fine and coarse meshes look identical -- "
                 "data committed on the inversion mesh is an inverse crime\n";

  auto [kappa, mu] = rasterize_phantom(fine, spec);
  OpticalState st = forward_solve_physical(fine, kappa, mu, illuminations, method);
  InterpolationOperator P = build_interpolation(fine, coarse);

  // Discretization-error estimate for the whitening model: the gap between
  // the projected fine data and what the inversion mesh would predict at the
  // true parameters. Folding it into sigma keeps the whitened misfit of the
  // exact parameters near sqrt(KN) even when the inversion mesh is much
  // coarser than the physics; it widens Gamma but never perturbs chi.
  std::vector<NodalField> gap;
  if (model_error_sigma) {
    auto [kappa_c, mu_c] = rasterize_phantom(coarse, spec);
    OpticalState st_c = forward_solve_physical(coarse, kappa_c, mu_c, illuminations, method);
    const int n = coarse.num_vertices();
    const int nf = fine.num_vertices();
    for (int k = 0; k < static_cast<int>(illuminations.size()); ++k)
      gap.push_back((P.apply(st.h.segment(static_cast<Eigen::Index>(k) * nf, nf)) -
                     st_c.h.segment(static_cast<Eigen::Index>(k) * n, n))
                        .cwiseAbs());
  }

  MeasurementSet out;
  out.seed = seed;
  out.noise_level = noise_level;
  const int n = coarse.num_vertices();
  const int nf = fine.num_vertices();
  for (int k = 0; k < static_cast<int>(illuminations.size()); ++k) {
    NodalField h = P.apply(st.h.segment(static_cast<Eigen::Index>(k) * nf, nf));

    double floor_val = sigma_floor_rel * h.cwiseAbs().maxCoeff();
    NodalField noise_std(n);
    for (int i = 0; i < n; ++i) noise_std[i] = std::max(noise_level * std::abs(h[i]), floor_val);

    // Per-illumination noise stream, split deterministically from the seed.
    // The draw uses the noise model only; the model-error term enters the
    // stored sigma but adds no noise.
    std::seed_seq sq{static_cast<std::uint32_t>(seed & 0xffffffffu),
                     static_cast<std::uint32_t>(seed >> 32),
                     static_cast<std::uint32_t>(k + 1)};
    std::mt19937_64 rng(sq);
    std::normal_distribution<double> gauss(0.0, 1.0);

    NodalField chi(n);
    for (int i = 0; i < n; ++i)
      chi[i] = h[i] + (noise_level > 0.0 ? noise_std[i] * gauss(rng) : 0.0);

    NodalField sigma = model_error_sigma ? noise_std.cwiseMax(gap[k]) : noise_std;
    out.chi.push_back(std::move(chi));
    out.sigma.push_back(std::move(sigma));
  }
  return out;
}

}  // namespace qpat
