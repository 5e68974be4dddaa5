#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "proklsh/linalg.hpp"
#include "proklsh/polar.hpp"
#include "proklsh/rng.hpp"

using namespace proklsh;

namespace {

// Scalar orbit of the quintic iteration. Each singular value of the matrix
// iteration follows exactly this map, so it doubles as an oracle for the
// matrix version after Frobenius pre-normalization.
double scalar_orbit(double x0, const polar::NsConfig& cfg) {
  double x = x0;
  for (int i = 0; i < cfg.iters; ++i) x = cfg.a * x + cfg.b * x * x * x + cfg.c * x * x * x * x * x;
  return x;
}

}  // namespace

TEST_CASE("exact polar factor: orthogonal, and M^T U is symmetric PSD") {
  std::mt19937_64 eng(101);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index m = 3 + trial % 6, n = 3 + (trial / 2) % 6;
    Matrix M = rng::with_spectrum_range(m, n, 0.1, 3.0, eng);
    Matrix U = polar::polar_exact(M);
    const Eigen::Index k = std::min(m, n);
    if (m <= n)
      CHECK((U * U.transpose() - Matrix::Identity(m, m)).norm() <= 1e-12 * std::sqrt(double(k)));
    else
      CHECK((U.transpose() * U - Matrix::Identity(n, n)).norm() <= 1e-12 * std::sqrt(double(k)));
    Matrix H = M.transpose() * U;  // should be the symmetric PSD polar part
    CHECK((H - H.transpose()).norm() <= 1e-10);
    CHECK(linalg::sym_eig(0.5 * (H + H.transpose())).lambda.minCoeff() >= -1e-10);
  }
}

TEST_CASE("exact polar of an orthogonal-spectrum matrix is itself") {
  std::mt19937_64 eng(111);
  Matrix Q = rng::orthonormal(6, 4, eng);
  CHECK((polar::polar_exact(Q) - Q).norm() <= 1e-12);
}

TEST_CASE("zero input maps to zero, tiny trailing directions are dropped") {
  CHECK(polar::polar_exact(Matrix::Zero(4, 7)).norm() == 0.0);
  std::mt19937_64 eng(121);
  Matrix U = rng::orthonormal(5, 2, eng), V = rng::orthonormal(6, 2, eng);
  Vector s(2);
  s << 1.0, 1e-14;  // second direction is below the rank cutoff
  Matrix M = U * s.asDiagonal() * V.transpose();
  Matrix P = polar::polar_exact(M);
  CHECK((P - U.col(0) * V.col(0).transpose()).norm() <= 1e-10);
}

TEST_CASE("Newton-Schulz singular values follow the scalar orbit") {
  polar::NsConfig cfg;
  std::mt19937_64 eng(131);
  Matrix U = rng::orthonormal(6, 3, eng), V = rng::orthonormal(8, 3, eng);
  Vector s(3);
  s << 2.0, 0.9, 0.3;
  Matrix M = U * s.asDiagonal() * V.transpose();
  Matrix X = polar::newton_schulz(M, cfg);
  const double norm0 = M.norm() + cfg.eps;
  // Row/column spaces are preserved, so X = U f(s/||M||_F) V^T exactly.
  for (int i = 0; i < 3; ++i) {
    const double expect = scalar_orbit(s(i) / norm0, cfg);
    const double got = U.col(i).transpose() * X * V.col(i);
    CHECK(got == doctest::Approx(expect).epsilon(1e-9));
  }
  // Nothing leaks outside the planted row/column spaces.
  CHECK((X - U * U.transpose() * X * V * V.transpose()).norm() <= 1e-10);
}

TEST_CASE("Newton-Schulz lands near the exact polar factor on generic input") {
  std::mt19937_64 eng(141);
  for (int trial = 0; trial < 10; ++trial) {
    Matrix M = rng::with_spectrum_range(7, 9, 0.05, 1.0, eng);
    Matrix approx = polar::newton_schulz(M);
    Matrix exact = polar::polar_exact(M);
    auto sv = linalg::svd(approx);
    // The quintic targets a band around 1, not machine precision. Its scalar
    // map has a local max of 1.2023 and a local min of 0.6815; five sweeps
    // keep every singular value inside that envelope.
    CHECK(sv.sigma.maxCoeff() <= 1.21);
    CHECK(sv.sigma.minCoeff() >= 0.67);
    CHECK((approx - exact).norm() <= 0.35 * std::sqrt(double(exact.cols())));
  }
}

TEST_CASE("mode dispatch selects the requested branch") {
  std::mt19937_64 eng(151);
  Matrix M = rng::with_spectrum_range(4, 5, 0.3, 1.0, eng);
  CHECK((polar::apply(M, polar::PolarMode::Exact) - polar::polar_exact(M)).norm() == 0.0);
  CHECK((polar::apply(M, polar::PolarMode::NewtonSchulz) - polar::newton_schulz(M)).norm() == 0.0);
}
