#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <memory>

#include "qpat/mesh.hpp"

namespace qpat {

/// Compressed sparse matrix with a symmetry flag (K, M, G1, G2, P all live
/// here). Column indices are sorted per row (Eigen compressed storage).
struct SparseSymMatrix {
  Eigen::SparseMatrix<double> mat;
  bool symmetric = true;

  SparseSymMatrix() = default;
  SparseSymMatrix(Eigen::SparseMatrix<double> m, bool sym) : mat(std::move(m)), symmetric(sym) {
    mat.makeCompressed();
  }

  int rows() const { return static_cast<int>(mat.rows()); }
  int cols() const { return static_cast<int>(mat.cols()); }
  int nnz() const { return static_cast<int>(mat.nonZeros()); }

  NodalField apply(const NodalField& x) const { return mat * x; }
  NodalField apply_transpose(const NodalField& x) const { return mat.transpose() * x; }
};

enum class SolverMethod {
  direct,  // sparse LDLT factorization, reused across solves
  cg,      // diagonally preconditioned conjugate gradients, tol 1e-10, max 10N iters
};

/// Reusable solver handle for one SPD matrix. Immutable after construction;
/// concurrent solves against distinct right-hand sides are safe.
class SpdFactorization {
 public:
  explicit SpdFactorization(const SparseSymMatrix& A, SolverMethod method = SolverMethod::direct);

  NodalField solve(const NodalField& b) const;
  int dim() const { return n_; }

 private:
  int n_;
  SolverMethod method_;
  std::shared_ptr<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>> ldlt_;
  std::shared_ptr<Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper,
                                           Eigen::DiagonalPreconditioner<double>>>
      cg_;
  std::shared_ptr<Eigen::SparseMatrix<double>> matrix_;  // kept alive for cg
};

/// One-shot solve of an SPD system (relative residual <= 1e-10).
NodalField spd_solve(const SparseSymMatrix& A, const NodalField& b,
                     SolverMethod method = SolverMethod::direct);

}  // namespace qpat
