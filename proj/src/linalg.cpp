#include "proklsh/linalg.hpp"

#include <cmath>

namespace proklsh::linalg {

namespace {

// Flip column signs so the first entry with |x| > 1e-12 is positive.
// Gives a deterministic representative for each eigenvector / factor column.
void fix_column_signs(Matrix& Q, Matrix* paired = nullptr) {
  for (Eigen::Index j = 0; j < Q.cols(); ++j) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < Q.rows(); ++i) {
      if (std::abs(Q(i, j)) > 1e-12) {
        s = Q(i, j) > 0.0 ? 1.0 : -1.0;
        break;
      }
    }
    if (s < 0.0) {
      Q.col(j) = -Q.col(j);
      if (paired) paired->col(j) = -paired->col(j);
    }
  }
}

}  // namespace

SymEig sym_eig(const Matrix& A) {
  if (A.rows() != A.cols()) throw std::invalid_argument("sym_eig: matrix not square");
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (A + A.transpose()));
  if (es.info() != Eigen::Success) throw std::runtime_error("sym_eig: solver failed");
  const Eigen::Index n = A.rows();
  SymEig out;
  out.Q.resize(n, n);
  out.lambda.resize(n);
  // Eigen sorts ascending; we want descending.
  for (Eigen::Index j = 0; j < n; ++j) {
    out.lambda(j) = es.eigenvalues()(n - 1 - j);
    out.Q.col(j) = es.eigenvectors().col(n - 1 - j);
  }
  fix_column_signs(out.Q);
  return out;
}

ThinQR thin_qr(const Matrix& A) {
  const Eigen::Index n = A.rows(), r = A.cols();
  if (r > n) throw std::invalid_argument("thin_qr: more columns than rows");
  const double fro = A.norm();
  for (Eigen::Index j = 0; j < r; ++j) {
    if (A.col(j).norm() <= 1e-12)
      throw RankDeficiencyError("thin_qr: column " + std::to_string(j) + " has near-zero norm");
  }
  Eigen::HouseholderQR<Matrix> qr(A);
  Matrix R = qr.matrixQR().topRows(r).triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < r; ++j) {
    if (std::abs(R(j, j)) <= 1e-14 * fro)
      throw RankDeficiencyError("thin_qr: R diagonal entry " + std::to_string(j) + " collapsed");
  }
  Matrix Q = qr.householderQ() * Matrix::Identity(n, r);
  // Nonnegative R diagonal as the sign convention: flipping Q's column flips R's row.
  for (Eigen::Index j = 0; j < r; ++j) {
    if (R(j, j) < 0.0) Q.col(j) = -Q.col(j);
  }
  return ThinQR{std::move(Q)};
}

Svd svd(const Matrix& A) {
  Eigen::JacobiSVD<Matrix> dec(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Svd out;
  out.U = dec.matrixU();
  out.sigma = dec.singularValues();  // Eigen returns descending
  out.V = dec.matrixV();
  fix_column_signs(out.U, &out.V);
  return out;
}

Matrix sym_inverse(const Matrix& A) {
  SymEig e = sym_eig(A);
  return e.Q * e.lambda.cwiseInverse().asDiagonal() * e.Q.transpose();
}

Matrix sym_sqrt(const Matrix& A) {
  SymEig e = sym_eig(A);
  return e.Q * e.lambda.cwiseMax(0.0).cwiseSqrt().asDiagonal() * e.Q.transpose();
}

Matrix sym_inv_sqrt(const Matrix& A) {
  SymEig e = sym_eig(A);
  return e.Q * e.lambda.cwiseSqrt().cwiseInverse().asDiagonal() * e.Q.transpose();
}

Matrix sym_pinv_sqrt(const Matrix& A, double rel_tol) {
  SymEig e = sym_eig(A);
  const double cut = rel_tol * std::max(e.lambda.size() > 0 ? e.lambda(0) : 0.0, 0.0);
  Vector d = Vector::Zero(e.lambda.size());
  for (Eigen::Index i = 0; i < e.lambda.size(); ++i) {
    if (e.lambda(i) > cut && e.lambda(i) > 0.0) d(i) = 1.0 / std::sqrt(e.lambda(i));
  }
  return e.Q * d.asDiagonal() * e.Q.transpose();
}

double logdet_spd(const Matrix& A) {
  Eigen::LLT<Matrix> llt(0.5 * (A + A.transpose()));
  if (llt.info() != Eigen::Success) throw std::runtime_error("logdet_spd: matrix not SPD");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < A.rows(); ++i) acc += std::log(llt.matrixL()(i, i));
  return 2.0 * acc;
}

double nuclear_norm(const Matrix& M) {
  Eigen::JacobiSVD<Matrix> dec(M);
  return dec.singularValues().sum();
}

}  // namespace proklsh::linalg
