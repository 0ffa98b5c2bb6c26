#include "qpat/sparse.hpp"

#include <string>

#include "qpat/errors.hpp"

namespace qpat {

SpdFactorization::SpdFactorization(const SparseSymMatrix& A, SolverMethod method)
    : n_(A.rows()), method_(method) {
  if (A.rows() != A.cols()) throw NumericalError("SPD factorization needs a square matrix");
  if (method_ == SolverMethod::direct) {
    ldlt_ = std::make_shared<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>>();
    ldlt_->compute(A.mat);
    if (ldlt_->info() != Eigen::Success)
      throw NumericalError("sparse LDLT factorization failed (matrix not SPD?)");
    const auto& D = ldlt_->vectorD();
    for (int i = 0; i < D.size(); ++i)
      if (!(D[i] > 0.0))
        throw NumericalError("factorization breakdown: nonpositive pivot at index " +
                             std::to_string(i));
  } else {
    matrix_ = std::make_shared<Eigen::SparseMatrix<double>>(A.mat);
    cg_ = std::make_shared<Eigen::ConjugateGradient<Eigen::SparseMatrix<double>,
                                                    Eigen::Lower | Eigen::Upper,
                                                    Eigen::DiagonalPreconditioner<double>>>();
    cg_->setTolerance(1e-10);
    cg_->setMaxIterations(10 * static_cast<Eigen::Index>(n_));
    cg_->compute(*matrix_);
    if (cg_->info() != Eigen::Success) throw NumericalError("CG setup failed");
  }
}

NodalField SpdFactorization::solve(const NodalField& b) const {
  if (b.size() != n_) throw NumericalError("solve: right-hand side size mismatch");
  NodalField x;
  if (method_ == SolverMethod::direct) {
    x = ldlt_->solve(b);
    if (ldlt_->info() != Eigen::Success) throw NumericalError("sparse LDLT solve failed");
  } else {
    x = cg_->solve(b);
    if (cg_->info() != Eigen::Success)
      throw NumericalError("CG did not converge within 10N iterations");
  }
  return x;
}

NodalField spd_solve(const SparseSymMatrix& A, const NodalField& b, SolverMethod method) {
  return SpdFactorization(A, method).solve(b);
}

}  // namespace qpat
