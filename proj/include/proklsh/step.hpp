#pragma once

#include <stdexcept>

#include "proklsh/state.hpp"

namespace proklsh {

struct NonFiniteGradientError : std::runtime_error {
  explicit NonFiniteGradientError(const std::string& what) : std::runtime_error(what) {}
};

// Both deltas are reported in the original W orientation.
// delta_sub is supported on span(U) from the right, delta_res on its complement.
struct UpdateDecomposition {
  Matrix delta_sub;
  Matrix delta_res;
  double c_a = 1.0;
};

enum class Ablation { SubspaceOnly, ComplementOnly };

// Update direction for a (possibly momentum-blended) gradient Ghat, using the
// lagged eigenbases with damped inverse roots 1/(sqrt(lambda)+eps).
UpdateDecomposition update_direction(const Matrix& Ghat, const ProState& st, const Hyper& h,
                                     polar::PolarMode mode = polar::PolarMode::NewtonSchulz);

// One full optimizer step: Nesterov momentum, direction, weight update,
// statistics EMA on the raw gradient, subspace tracking, periodic QR refresh.
// Returns the new weights; the state is updated in place.
Matrix pro_step(const Matrix& W, const Matrix& G, ProState& st, const Hyper& h,
                polar::PolarMode mode = polar::PolarMode::NewtonSchulz);

// pro_step with one direction component zeroed; statistics phases unchanged.
Matrix ablation_step(const Matrix& W, const Matrix& G, ProState& st, const Hyper& h,
                     Ablation which, polar::PolarMode mode = polar::PolarMode::NewtonSchulz);

// Complement term replaced by mu_perp^{-1/2}-scaled whitening (no polar factor),
// mixing weight forced to 1, EMA momentum instead of Nesterov.
Matrix smok_hop_step(const Matrix& W, const Matrix& G, ProState& st, const Hyper& h);

// Tracking phase in isolation: one-step power/EMA update of U with the induced
// rotation of S and QS. G is taken in the original W orientation. On a
// rank-deficient target the phase is skipped and a diagnostic counter bumped.
void subspace_track(ProState& st, const Matrix& G, const Hyper& h);

}  // namespace proklsh
