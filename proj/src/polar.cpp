#include "proklsh/polar.hpp"

#include "proklsh/linalg.hpp"

namespace proklsh::polar {

Matrix polar_exact(const Matrix& M, double rank_tol) {
  if (M.size() == 0) return M;
  linalg::Svd dec = linalg::svd(M);
  const double smax = dec.sigma.size() > 0 ? dec.sigma(0) : 0.0;
  if (smax <= 0.0) return Matrix::Zero(M.rows(), M.cols());
  Matrix out = Matrix::Zero(M.rows(), M.cols());
  for (Eigen::Index k = 0; k < dec.sigma.size(); ++k) {
    if (dec.sigma(k) > rank_tol * smax)
      out += dec.U.col(k) * dec.V.col(k).transpose();
  }
  return out;
}

Matrix newton_schulz(const Matrix& M, const NsConfig& cfg) {
  const double fro = M.norm();
  if (fro == 0.0) return Matrix::Zero(M.rows(), M.cols());
  Matrix X = M / (fro + cfg.eps);
  const bool wide = M.rows() <= M.cols();
  for (int t = 0; t < cfg.iters; ++t) {
    if (wide) {
      Matrix A = X * X.transpose();
      X = cfg.a * X + (cfg.b * A + cfg.c * A * A) * X;
    } else {
      Matrix A = X.transpose() * X;
      X = cfg.a * X + X * (cfg.b * A + cfg.c * A * A);
    }
  }
  return X;
}

Matrix apply(const Matrix& M, PolarMode mode, const NsConfig& cfg) {
  return mode == PolarMode::Exact ? polar_exact(M) : newton_schulz(M, cfg);
}

}  // namespace proklsh::polar
