#pragma once

#include <cstdint>
#include <vector>

#include "qpat/illumination.hpp"
#include "qpat/mesh.hpp"
#include "qpat/phantom.hpp"
#include "qpat/sparse.hpp"

namespace qpat {

/// Per-illumination data vectors chi^(k) on the inversion mesh together with
/// the diagonal noise standard deviations (Gamma = diag(sigma^2)).
struct MeasurementSet {
  std::vector<NodalField> chi;
  std::vector<NodalField> sigma;  // > 0 entrywise (floored)
  std::uint64_t seed = 0;
  double noise_level = 0.0;

  int num_illuminations() const { return static_cast<int>(chi.size()); }
  int num_nodes() const { return chi.empty() ? 0 : static_cast<int>(chi[0].size()); }

  NodalField stacked_chi() const;
  NodalField stacked_sigma() const;
};

/// Synthesizes measurements: solves the forward problem on the fine mesh with
/// the rasterized phantom, projects h_f onto the coarse mesh through the
/// interpolation matrix P, and adds independent Gaussian noise with std
/// max(noise_level * |h_i|, sigma_floor_rel * max|h^(k)|). The floor acts as a
/// detector noise floor: without it, near-zero-data nodes in deep shadow get
/// nearly infinite whitening weight and the inversion is dominated by the few
/// nodes the inversion mesh resolves worst.
///
/// With model_error_sigma, the stored sigma additionally covers an estimate of
/// the inversion-mesh discretization error (the gap between projected fine
/// data and the coarse forward solution at the true parameters); the noise
/// draw itself always uses the noise model only. Deterministic given the seed;
/// per-illumination noise streams are split deterministically. Warns to stderr
/// when fine and coarse are the identical mesh (inverse crime).
MeasurementSet simulate_data(const TetMesh& fine, const PhantomSpec& spec,
                             const std::vector<Illumination>& illuminations,
                             const TetMesh& coarse, double noise_level, std::uint64_t seed,
                             SolverMethod method = SolverMethod::direct,
                             double sigma_floor_rel = 1e-12, bool model_error_sigma = true);

}  // namespace qpat
