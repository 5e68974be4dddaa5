#pragma once

#include <stdexcept>
#include <string>

#include "proklsh/types.hpp"

namespace proklsh::linalg {

struct RankDeficiencyError : std::runtime_error {
  explicit RankDeficiencyError(const std::string& what) : std::runtime_error(what) {}
};

// Eigendecomposition of a symmetric matrix, eigenvalues sorted descending.
// Column signs are fixed so the first entry with magnitude > 1e-12 is positive.
// Within a degenerate cluster only the spanned subspace is meaningful.
struct SymEig {
  Matrix Q;        // orthogonal, columns are eigenvectors
  Vector lambda;   // descending
};

struct ThinQR {
  Matrix Q;  // n x r, orthonormal columns; implicit R = Q^T A has nonneg diagonal
};

struct Svd {
  Matrix U;      // m x k
  Vector sigma;  // k, descending
  Matrix V;      // n x k
};

SymEig sym_eig(const Matrix& A);

// Thin QR of an n x r matrix, r <= n. Throws RankDeficiencyError when a column
// norm is <= 1e-12 or an R diagonal entry collapses; callers decide the fallback.
ThinQR thin_qr(const Matrix& A);

Svd svd(const Matrix& A);

// Helpers shared by the analysis code. All operate on symmetric input.
Matrix sym_inverse(const Matrix& A);
Matrix sym_sqrt(const Matrix& A);
Matrix sym_inv_sqrt(const Matrix& A);
// Pseudo-inverse square root: eigenvalues <= rel_tol * lambda_max are dropped.
Matrix sym_pinv_sqrt(const Matrix& A, double rel_tol = 1e-10);
double logdet_spd(const Matrix& A);
double nuclear_norm(const Matrix& M);

}  // namespace proklsh::linalg
