#pragma once

#include "qpat/illumination.hpp"
#include "qpat/mesh.hpp"
#include "qpat/sparse.hpp"

namespace qpat {

/// System matrix of the diffusion approximation with Robin boundary condition:
///   K_ij = int kappa grad(phi_i).grad(phi_j) + int mu phi_i phi_j
///        + 1/2 int_dOmega phi_i phi_j dS.
/// The stiffness term uses the element-mean kappa; the mass term is exact for
/// P1 mu (degree-3 integrand); the boundary term is exact (degree 2).
/// Requires kappa, mu > 0 at every node. Symmetric positive definite.
SparseSymMatrix assemble_system(const TetMesh& mesh, const NodalField& kappa, const NodalField& mu);

/// Load vector f_i = 2 int_dOmega Phi phi_i dS via the 3-point (edge midpoint)
/// facet rule, exact for degree-2 integrands.
NodalField assemble_load(const TetMesh& mesh, const Illumination& flux);

/// Weighted P1 mass matrix int rho phi_i phi_j dx with P1 density rho,
/// exact for the degree-3 integrand.
SparseSymMatrix assemble_weighted_mass(const TetMesh& mesh, const NodalField& rho);

/// Stiffness matrix int c grad(phi_i).grad(phi_j) dx with an element-wise
/// constant coefficient (one value per tet).
SparseSymMatrix assemble_elementwise_stiffness(const TetMesh& mesh,
                                               const Eigen::VectorXd& element_coeff);

/// int_Omega f dx for a P1 nodal field (exact).
double integrate_field(const TetMesh& mesh, const NodalField& f);

}  // namespace qpat
