#pragma once

#include <cstdint>
#include <random>

#include "proklsh/linalg.hpp"
#include "proklsh/types.hpp"

namespace proklsh::rng {

inline Matrix gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& eng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix out(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = dist(eng);
  return out;
}

inline Matrix orthonormal(Eigen::Index n, Eigen::Index r, std::mt19937_64& eng) {
  // Gaussian + sign-fixed thin QR gives Haar-distributed orthonormal columns.
  return linalg::thin_qr(gaussian(n, r, eng)).Q;
}

inline Matrix spd_with_spectrum(const Vector& eigs, std::mt19937_64& eng) {
  const Eigen::Index n = eigs.size();
  Matrix Q = orthonormal(n, n, eng);
  return Q * eigs.asDiagonal() * Q.transpose();
}

// Singular values drawn log-uniform in [lo, hi]; keeps test matrices away from
// accidental near-rank-deficiency.
inline Matrix with_spectrum_range(Eigen::Index m, Eigen::Index n, double lo, double hi,
                                  std::mt19937_64& eng) {
  const Eigen::Index k = std::min(m, n);
  std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
  Vector s(k);
  for (Eigen::Index i = 0; i < k; ++i) s(i) = std::exp(u(eng));
  Matrix U = orthonormal(m, k, eng);
  Matrix V = orthonormal(n, k, eng);
  return U * s.asDiagonal() * V.transpose();
}

}  // namespace proklsh::rng
