#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "proklsh/state.hpp"
#include "proklsh/types.hpp"

namespace proklsh::kl {

// Gradient population G = A B^T + sigma * SigL^{1/2} Xi SigR^{1/2} with Xi iid
// standard normal; SigL/SigR default to identity (iid noise of variance sigma^2).
struct SpikedModel {
  Matrix A;      // m x rho
  Matrix B;      // n x rho
  double sigma = 1.0;
  Matrix SigL;   // m x m noise row covariance
  Matrix SigR;   // n x n noise column covariance

  Eigen::Index m() const { return A.rows(); }
  Eigen::Index n() const { return B.rows(); }
  Eigen::Index rho() const { return A.cols(); }
};

SpikedModel make_spiked(const Matrix& A, const Matrix& B, double sigma);
SpikedModel make_spiked_separable(const Matrix& A, const Matrix& B, double sigma,
                                  const Matrix& SigL, const Matrix& SigR);

enum class Side { L, R };

// Closed-form second moments: side L gives E[G P^{-1} G^T] for an n x n
// inv_precond, side R gives E[G^T P^{-1} G] for an m x m one.
Matrix expected_whitened(const SpikedModel& mdl, Side side, const Matrix& inv_precond);

// (1/2)[n logdet L + m logdet Rhat + Tr(Rhat^{-1} Phi_L)] up to the additive
// constant that does not depend on (L, Rhat). Invariant under (cL, Rhat/c).
double kl_objective(const SpikedModel& mdl, const Matrix& L, const Matrix& Rhat);

struct SolveOptions {
  double tol = 1e-10;
  int max_iter = 10000;
  double damping = 0.5;  // new = (1-d)*old + d*target; plain iteration retried on failure
};

struct StationaryPair {
  Matrix L;  // m x m, gauge-fixed to Tr(L) = m
  Matrix R;  // n x n
  bool converged = false;
  int iterations = 0;
  double residual = 0.0;  // max relative residual at exit
  double objective = 0.0;
};

StationaryPair solve_full_stationary(const SpikedModel& mdl, const SolveOptions& opt = {});

struct RestrictedStationary {
  Matrix L;   // m x m
  Matrix U;   // n x r (fixed input)
  Matrix S;   // r x r
  double mu_perp = 0.0;
  bool converged = false;
  int iterations = 0;
  double res_s = 0.0, res_mu = 0.0, res_l = 0.0;
  double objective = 0.0;
  Matrix rhat() const;  // materialized U S U^T + mu_perp * Pperp
};

struct RestrictedInit {
  Matrix L;
  Matrix S;
  double mu_perp = 0.0;
};

RestrictedStationary solve_restricted_stationary(const SpikedModel& mdl, const Matrix& U,
                                                 const SolveOptions& opt = {},
                                                 const std::optional<RestrictedInit>& init = {});

struct SubsetResult {
  std::vector<int> index_set;  // 0-based indices into the descending spectrum
  double tail_am_gm = 0.0;     // AM/GM of the complement eigenvalues
};

// Enumerates all size-r subsets of the spectrum (n <= 20); picks the one whose
// complement minimizes AM/GM, ties broken by lexicographic order.
SubsetResult optimal_subspace_bruteforce(const Matrix& Phi, int r);
SubsetResult optimal_subspace_bruteforce(const Vector& eigs_desc, int r);

// Reduced fixed-L objective logdet(U^T Phi U) + (n-r) log Tr(Pperp Phi).
double reduced_objective(const Matrix& Phi, const Matrix& U);

struct OptimalityReport {
  double f_opt = 0.0;          // at the brute-force-optimal eigenspace
  double best_random = 0.0;    // smallest f over random Stiefel samples
  double max_violation = 0.0;  // max(0, f_opt - f_random) over samples
};

OptimalityReport subspace_optimality_check(const Matrix& Phi, int r, int trials,
                                           std::uint64_t seed);
// Variant with Phi evaluated at the full stationary L of the model.
OptimalityReport subspace_optimality_check(const SpikedModel& mdl, int r, int trials,
                                           std::uint64_t seed);

struct GapReport {
  double j_full = 0.0;
  double j_restr = 0.0;            // best candidate
  double j_restr_top = 0.0;        // U = top-r eigenvectors of R*
  double j_restr_bruteforce = 0.0; // U = brute-force-optimal eigenvector subset
  double gap = 0.0;
  double bound = 0.0;  // (m(n-r)/2) log(AM/GM) over the bottom n-r eigenvalues of R*
  double tail_am = 0.0, tail_gm = 0.0;
  bool converged = false;
};

GapReport approximation_gap(const SpikedModel& mdl, int r, const SolveOptions& opt = {});

struct Bracket {
  double lower = 0.0;
  double upper = 0.0;
  double c_a = 0.0;
  long k = 0;  // upper/lower = sqrt(k)
};

Bracket alpha_bracket(Eigen::Index m, Eigen::Index n, Eigen::Index r);

// Tr(L^{-1} E[G Rhat^{-1} G^T]); equals m*n at a restricted stationary point.
double sigma_p_stationary(const SpikedModel& mdl, const RestrictedStationary& pt);
// Tr(S^{-1} U^T Phi_L U); equals m*r at a restricted stationary point.
double subspace_second_moment(const SpikedModel& mdl, const RestrictedStationary& pt);

struct MeasureConstants {
  double c_a = 1.0;
  double clip = 1.0;   // C
  double theta = 1.0;  // Theta
  double alpha_kl = 0.01;
};

// (c_a/(C sqrt(Theta))) ||grad Pperp||_* + (alpha_kl/Theta) ||grad U||_F^2.
// Zero iff grad is zero.
double mixed_norm_measure(const Matrix& grad, const Matrix& U, const MeasureConstants& k);

enum class DescentOptimizer { ProExact, SmokHop };

struct DescentEtaReport {
  double eta = 0.0;
  int monotone_steps = 0;  // steps before the first loss increase
  bool monotone = false;   // no increase over the whole run
  double final_loss = 0.0;
  double initial_loss = 0.0;
  bool structure_ok = false;  // per-step surrogate inequality held throughout
  double worst_margin = 0.0;  // max over steps of lhs - rhs (negative is good)
};

struct DescentReport {
  std::vector<DescentEtaReport> per_eta;
};

// Runs `steps` deterministic steps on f(W) = 0.5 ||W - Wstar||_F^2 for each eta
// (momentum and weight decay off) and checks both monotonicity and the
// per-step expected-decrease inequality with measured constants.
DescentReport descent_check(const Matrix& W0, const Matrix& Wstar, DescentOptimizer which,
                            const std::vector<double>& etas, int steps, const Hyper& base);

}  // namespace proklsh::kl
