#include "qpat/prior.hpp"

#include <cmath>

#include "qpat/errors.hpp"

namespace qpat {

void PriorSpec::validate() const {
  if (kind == Kind::perona_malik && !(T > 0.0))
    throw ConfigError("prior: Perona-Malik threshold T must be positive");
  if (kind == Kind::smoothed_tv && !(tv_epsilon > 0.0))
    throw ConfigError("prior: TV smoothing epsilon must be positive");
  if (!(b_over_a > 0.0)) throw ConfigError("prior: b/a must be positive");
  if (!(delta > 0.0)) throw ConfigError("prior: delta must be positive");
}

double r_value(double t, const PriorSpec& spec) {
  if (t < 0.0) throw ConfigError("r_value: gradient magnitude must be nonnegative");
  if (spec.kind == PriorSpec::Kind::perona_malik) {
    double q = t / spec.T;
    return 0.5 * spec.T * spec.T * std::log1p(q * q);
  }
  double e = spec.tv_epsilon;
  return std::sqrt(t * t + e * e) - e;
}

double diffusivity(double t, const PriorSpec& spec) {
  if (t < 0.0) throw ConfigError("diffusivity: gradient magnitude must be nonnegative");
  if (spec.kind == PriorSpec::Kind::perona_malik) {
    double q = t / spec.T;
    return 1.0 / (1.0 + q * q);
  }
  double e = spec.tv_epsilon;
  return 1.0 / std::sqrt(t * t + e * e);
}

SparseSymMatrix assemble_M(const TetMesh& mesh, const NodalField& u, const PriorSpec& spec) {
  spec.validate();
  if (!u.allFinite()) throw NumericalError("assemble_M: non-finite field");
  Eigen::VectorXd coeff(mesh.num_tets());
  for (int e = 0; e < mesh.num_tets(); ++e) {
    const auto& t = mesh.tets()[e];
    const auto& g = mesh.tet_gradients(e);
    Vec3 grad = Vec3::Zero();
    for (int a = 0; a < 4; ++a) grad += u[t[a]] * g.row(a).transpose();
    coeff[e] = diffusivity(grad.norm(), spec);
  }
  return assemble_elementwise_stiffness(mesh, coeff);
}

double regularizer_value(const TetMesh& mesh, const NodalField& u, const PriorSpec& spec) {
  if (!u.allFinite()) throw NumericalError("regularizer_value: non-finite field");
  double total = 0.0;
  for (int e = 0; e < mesh.num_tets(); ++e) {
    const auto& t = mesh.tets()[e];
    const auto& g = mesh.tet_gradients(e);
    Vec3 grad = Vec3::Zero();
    for (int a = 0; a < 4; ++a) grad += u[t[a]] * g.row(a).transpose();
    total += mesh.tet_volume(e) * r_value(grad.norm(), spec);
  }
  return total;
}

namespace {

SparseSymMatrix shifted(const SparseSymMatrix& M, double scale, double delta) {
  Eigen::SparseMatrix<double> I(M.rows(), M.cols());
  I.setIdentity();
  Eigen::SparseMatrix<double> S = scale * M.mat + delta * I;
  return SparseSymMatrix(std::move(S), true);
}

}  // namespace

MDeltaSolver::MDeltaSolver(const SparseSymMatrix& M_kappa, const SparseSymMatrix& M_mu,
                           const PriorSpec& spec) {
  spec.validate();
  if (M_kappa.rows() != M_mu.rows()) throw ConfigError("M_delta: block size mismatch");
  n_ = M_kappa.rows();
  dim_ = 2 * n_;
  two_blocks_ = true;
  b0_ = shifted(M_kappa, 1.0, spec.delta);
  b1_ = shifted(M_mu, spec.b_over_a, spec.delta);
  f0_ = std::make_shared<SpdFactorization>(b0_);
  f1_ = std::make_shared<SpdFactorization>(b1_);
}

MDeltaSolver::MDeltaSolver(const SparseSymMatrix& M_single, const PriorSpec& spec) {
  spec.validate();
  n_ = M_single.rows();
  dim_ = n_;
  two_blocks_ = false;
  b0_ = shifted(M_single, 1.0, spec.delta);
  f0_ = std::make_shared<SpdFactorization>(b0_);
}

NodalField MDeltaSolver::solve(const NodalField& x) const {
  if (x.size() != dim_) throw ConfigError("M_delta solve: size mismatch");
  if (!two_blocks_) return f0_->solve(x);
  NodalField out(dim_);
  out.head(n_) = f0_->solve(x.head(n_));
  out.tail(n_) = f1_->solve(x.tail(n_));
  return out;
}

const SparseSymMatrix& MDeltaSolver::block(int i) const {
  if (i == 0) return b0_;
  if (i == 1 && two_blocks_) return b1_;
  throw ConfigError("M_delta: no such block");
}

MDeltaSolver build_Mdelta(const SparseSymMatrix& M_kappa, const SparseSymMatrix& M_mu,
                          const PriorSpec& spec) {
  return MDeltaSolver(M_kappa, M_mu, spec);
}

}  // namespace qpat
