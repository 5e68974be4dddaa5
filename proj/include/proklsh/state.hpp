#pragma once

#include <cstdint>

#include "proklsh/polar.hpp"
#include "proklsh/types.hpp"

namespace proklsh {

struct Hyper {
  double lr = 0.01;
  double momentum = 0.95;      // mu
  double ema = 0.95;           // beta2
  double damping = 1e-8;       // eps in the damped inverse roots
  double mixing = 0.01;        // alpha_kl, weight on the subspace term
  int qr_period = 10;          // tau, eigenbasis refresh cadence
  polar::NsConfig ns;
  int rank = 8;                // r
  double init_scale = 0.1;     // lambda0
  double weight_decay = 0.0;
  int clip_cap = 4000;
  int clip_floor = 10;
};

// Right: project the n side (m <= n). Left: m > n; implemented by transposing
// at the module boundary so a single code path serves both.
enum class Orientation { Right, Left };

Orientation orientation(Eigen::Index m, Eigen::Index n);

// Inverse-root ceilings; equivalently eigenvalue floors 1/C^2. Formulas take
// the original W shape and orient internally (projected side is always the
// larger one).
struct ClipCeilings {
  double c_l = 0.0;   // unrestricted-side factor
  double c_s = 0.0;   // subspace factor (ceiling from the projected side's full dim)
  double c_mu = 0.0;  // complement scalar
};

ClipCeilings clip_ceilings(Eigen::Index m, Eigen::Index n, const Hyper& h);

// All matrices live in oriented (core) coordinates: under Left the problem is
// stored transposed, so `m` below means min(rows, cols) and `n` max(rows, cols).
struct ProState {
  Orientation orient = Orientation::Right;
  Eigen::Index rows = 0, cols = 0;  // original W shape

  Matrix M;       // m x n momentum
  Matrix U;       // n x r subspace basis, orthonormal columns
  Matrix L;       // m x m factor EMA
  Matrix S;       // r x r factor EMA
  Matrix QL;      // m x m lagged eigenbasis of L
  Vector lam_l;   // m eigenvalue EMAs
  Matrix QS;      // r x r lagged eigenbasis of S
  Vector lam_s;   // r eigenvalue EMAs
  double mu_perp = 0.0;
  std::int64_t step_count = 0;
  std::int64_t tracking_skips = 0;  // diagnostic: rank-deficient tracking targets
  std::int64_t refresh_skips = 0;   // diagnostic: rank-deficient refresh targets

  Eigen::Index core_m() const { return orient == Orientation::Right ? rows : cols; }
  Eigen::Index core_n() const { return orient == Orientation::Right ? cols : rows; }
  Eigen::Index rank() const { return U.cols(); }
  // Aspect scale sqrt(max(1, rows/cols)) from the original shape; > 1 only for Left.
  double aspect_scale() const;
};

// Builds state from the first gradient: U from its top-r singular vectors,
// factor EMAs seeded from the projected gradient, eigenvalues at init_scale.
// Throws std::invalid_argument when G0 is zero, r > min(m,n), or r = max(m,n).
ProState init_state(const Matrix& G0, const Hyper& h);

// Floors lam_l, lam_s, mu_perp at 1/C^2 with the matching ceilings.
void apply_clip(ProState& st, const ClipCeilings& c);

}  // namespace proklsh
