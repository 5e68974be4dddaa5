#pragma once

#include "proklsh/types.hpp"

namespace proklsh::polar {

// Quintic Newton-Schulz iteration settings. The coefficients target fast
// inflation of small singular values at the price of ~0.3 wiggle around 1.
struct NsConfig {
  double a = 3.4445;
  double b = -4.7750;
  double c = 2.0315;
  int iters = 5;
  double eps = 1e-8;  // pre-normalization epsilon
};

enum class PolarMode { Exact, NewtonSchulz };

// Orthogonal polar factor U V^T, dropping singular values <= rank_tol * sigma_max.
// Zero input maps to zero.
Matrix polar_exact(const Matrix& M, double rank_tol = 1e-10);

// Odd-polynomial iteration from X0 = M / (||M||_F + eps); acts on each singular
// value independently, so row/column spaces are preserved.
Matrix newton_schulz(const Matrix& M, const NsConfig& cfg = {});

Matrix apply(const Matrix& M, PolarMode mode, const NsConfig& cfg = {});

}  // namespace proklsh::polar
