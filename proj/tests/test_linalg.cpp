#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "proklsh/linalg.hpp"
#include "proklsh/rng.hpp"

using namespace proklsh;

namespace {

// Modified Gram-Schmidt, used as an independent cross-check for thin_qr.
Matrix mgs(const Matrix& A) {
  Matrix Q = A;
  for (Eigen::Index j = 0; j < Q.cols(); ++j) {
    for (Eigen::Index k = 0; k < j; ++k) Q.col(j) -= Q.col(k).dot(Q.col(j)) * Q.col(k);
    Q.col(j) /= Q.col(j).norm();
  }
  return Q;
}

// Power iteration for the top singular value, independent of the SVD path.
double top_sigma(const Matrix& M, int iters = 500) {
  std::mt19937_64 eng(7);
  Vector v = rng::gaussian(M.cols(), 1, eng);
  v /= v.norm();
  for (int i = 0; i < iters; ++i) {
    v = M.transpose() * (M * v);
    v /= v.norm();
  }
  return (M * v).norm();
}

double logdet_via_cholesky(const Matrix& A) {
  Eigen::LLT<Matrix> llt(A);
  REQUIRE(llt.info() == Eigen::Success);
  return 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
}

}  // namespace

TEST_CASE("symmetric eigendecomposition reconstructs and sorts descending") {
  std::mt19937_64 eng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = 3 + trial % 7;
    Vector eigs(n);
    std::uniform_real_distribution<double> u(0.1, 5.0);
    for (Eigen::Index i = 0; i < n; ++i) eigs(i) = u(eng);
    Matrix A = rng::spd_with_spectrum(eigs, eng);
    auto ed = linalg::sym_eig(A);
    CHECK((ed.Q * ed.lambda.asDiagonal() * ed.Q.transpose() - A).norm() <= 1e-12 * A.norm());
    CHECK((ed.Q.transpose() * ed.Q - Matrix::Identity(n, n)).norm() <= 1e-12);
    for (Eigen::Index i = 0; i + 1 < n; ++i) CHECK(ed.lambda(i) >= ed.lambda(i + 1));
  }
}

TEST_CASE("eigenvector sign convention is deterministic") {
  std::mt19937_64 eng(12);
  Matrix A = rng::spd_with_spectrum(Vector::LinSpaced(5, 1.0, 5.0), eng);
  auto e1 = linalg::sym_eig(A);
  auto e2 = linalg::sym_eig(A);
  CHECK((e1.Q - e2.Q).norm() == 0.0);
  for (Eigen::Index j = 0; j < e1.Q.cols(); ++j) {
    Eigen::Index lead = 0;
    while (lead < e1.Q.rows() && std::abs(e1.Q(lead, j)) <= 1e-12) ++lead;
    REQUIRE(lead < e1.Q.rows());
    CHECK(e1.Q(lead, j) > 0.0);
  }
}

TEST_CASE("thin QR matches Gram-Schmidt span and has orthonormal columns") {
  std::mt19937_64 eng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = 5 + trial % 6, r = 1 + trial % 4;
    Matrix A = rng::with_spectrum_range(n, r, 0.2, 3.0, eng);
    Matrix Q = linalg::thin_qr(A).Q;
    Matrix Qo = mgs(A);
    CHECK((Q.transpose() * Q - Matrix::Identity(r, r)).norm() <= 1e-12);
    // Same column space: projectors agree.
    CHECK((Q * Q.transpose() - Qo * Qo.transpose()).norm() <= 1e-10);
    // Sign convention: R = Q^T A has a nonnegative diagonal.
    Matrix R = Q.transpose() * A;
    for (Eigen::Index i = 0; i < r; ++i) CHECK(R(i, i) >= 0.0);
    CHECK((Q * R - A).norm() <= 1e-12 * A.norm());
  }
}

TEST_CASE("thin QR flags rank-deficient input") {
  Matrix A(4, 2);
  A << 1, 2, 1, 2, 1, 2, 1, 2;  // second column is double the first
  CHECK_THROWS_AS((void)linalg::thin_qr(A), linalg::RankDeficiencyError);
  Matrix Z = Matrix::Zero(4, 2);
  CHECK_THROWS_AS((void)linalg::thin_qr(Z), linalg::RankDeficiencyError);
}

TEST_CASE("SVD reconstructs, orders, and agrees with power iteration") {
  std::mt19937_64 eng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::Index m = 4 + trial % 5, n = 6 + trial % 4;
    Matrix M = rng::with_spectrum_range(m, n, 0.1, 4.0, eng);
    auto sv = linalg::svd(M);
    CHECK((sv.U * sv.sigma.asDiagonal() * sv.V.transpose() - M).norm() <= 1e-12 * M.norm());
    for (Eigen::Index i = 0; i + 1 < sv.sigma.size(); ++i) CHECK(sv.sigma(i) >= sv.sigma(i + 1));
    CHECK(sv.sigma(0) == doctest::Approx(top_sigma(M)).epsilon(1e-9));
  }
}

TEST_CASE("symmetric inverse and roots against explicit spectra") {
  std::mt19937_64 eng(41);
  Vector eigs(4);
  eigs << 4.0, 1.0, 0.25, 0.04;
  Matrix A = rng::spd_with_spectrum(eigs, eng);
  Matrix I = Matrix::Identity(4, 4);
  CHECK((linalg::sym_inverse(A) * A - I).norm() <= 1e-11);
  Matrix S = linalg::sym_sqrt(A);
  CHECK((S * S - A).norm() <= 1e-12 * A.norm());
  Matrix R = linalg::sym_inv_sqrt(A);
  CHECK((R * A * R - I).norm() <= 1e-10);
}

TEST_CASE("pseudo-inverse root annihilates the null space") {
  std::mt19937_64 eng(51);
  Matrix U = rng::orthonormal(6, 2, eng);
  Vector s(2);
  s << 3.0, 0.5;
  Matrix A = U * s.asDiagonal() * U.transpose();  // rank 2 in R^6
  Matrix P = linalg::sym_pinv_sqrt(A);
  // On the range: P A P = projector. Off the range: P kills it.
  CHECK((P * A * P - U * U.transpose()).norm() <= 1e-10);
  Matrix N = Matrix::Identity(6, 6) - U * U.transpose();
  CHECK((P * N).norm() <= 1e-10);
}

TEST_CASE("log-determinant matches the Cholesky oracle") {
  std::mt19937_64 eng(61);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::Index n = 3 + trial;
    Vector eigs(n);
    std::uniform_real_distribution<double> u(0.05, 9.0);
    for (Eigen::Index i = 0; i < n; ++i) eigs(i) = u(eng);
    Matrix A = rng::spd_with_spectrum(eigs, eng);
    CHECK(linalg::logdet_spd(A) == doctest::Approx(logdet_via_cholesky(A)).epsilon(1e-11));
  }
}

TEST_CASE("nuclear norm equals the sum of singular values") {
  std::mt19937_64 eng(71);
  Matrix M = rng::with_spectrum_range(5, 8, 0.2, 2.0, eng);
  double expected = linalg::svd(M).sigma.sum();
  CHECK(linalg::nuclear_norm(M) == doctest::Approx(expected).epsilon(1e-12));
  // Invariance under one-sided rotation.
  Matrix Q = rng::orthonormal(5, 5, eng);
  CHECK(linalg::nuclear_norm(Q * M) == doctest::Approx(expected).epsilon(1e-10));
}
