#include "proklsh/kl_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "proklsh/linalg.hpp"
#include "proklsh/rng.hpp"
#include "proklsh/step.hpp"

namespace proklsh::kl {

namespace {

void validate_model(const SpikedModel& mdl) {
  if (mdl.A.cols() != mdl.B.cols()) throw std::invalid_argument("SpikedModel: A/B rank mismatch");
  if (mdl.rho() >= std::min(mdl.m(), mdl.n()))
    throw std::invalid_argument("SpikedModel: rho must be < min(m, n)");
  if (!(mdl.sigma > 0.0)) throw std::invalid_argument("SpikedModel: sigma must be positive");
  if (mdl.SigL.rows() != mdl.m() || mdl.SigL.cols() != mdl.m() ||
      mdl.SigR.rows() != mdl.n() || mdl.SigR.cols() != mdl.n())
    throw std::invalid_argument("SpikedModel: noise factor shape mismatch");
}

double am_over_gm(const Vector& vals) {
  const double am = vals.mean();
  const double gm = std::exp(vals.array().log().mean());
  return am / gm;
}

}  // namespace

SpikedModel make_spiked(const Matrix& A, const Matrix& B, double sigma) {
  SpikedModel mdl{A, B, sigma, Matrix::Identity(A.rows(), A.rows()),
                  Matrix::Identity(B.rows(), B.rows())};
  validate_model(mdl);
  return mdl;
}

SpikedModel make_spiked_separable(const Matrix& A, const Matrix& B, double sigma,
                                  const Matrix& SigL, const Matrix& SigR) {
  SpikedModel mdl{A, B, sigma, SigL, SigR};
  validate_model(mdl);
  return mdl;
}

Matrix expected_whitened(const SpikedModel& mdl, Side side, const Matrix& inv_precond) {
  validate_model(mdl);
  const double s2 = mdl.sigma * mdl.sigma;
  if (side == Side::L) {
    if (inv_precond.rows() != mdl.n() || inv_precond.cols() != mdl.n())
      throw std::invalid_argument("expected_whitened: side L wants an n x n inverse");
    Matrix core = mdl.B.transpose() * inv_precond * mdl.B;  // rho x rho
    return mdl.A * core * mdl.A.transpose() +
           s2 * (inv_precond * mdl.SigR).trace() * mdl.SigL;
  }
  if (inv_precond.rows() != mdl.m() || inv_precond.cols() != mdl.m())
    throw std::invalid_argument("expected_whitened: side R wants an m x m inverse");
  Matrix core = mdl.A.transpose() * inv_precond * mdl.A;
  return mdl.B * core * mdl.B.transpose() +
         s2 * (inv_precond * mdl.SigL).trace() * mdl.SigR;
}

double kl_objective(const SpikedModel& mdl, const Matrix& L, const Matrix& Rhat) {
  const double nn = static_cast<double>(mdl.n()), mm = static_cast<double>(mdl.m());
  Matrix Phi = expected_whitened(mdl, Side::R, linalg::sym_inverse(L));
  const double trace_term = (linalg::sym_inverse(Rhat) * Phi).trace();
  return 0.5 * (nn * linalg::logdet_spd(L) + mm * linalg::logdet_spd(Rhat) + trace_term);
}

StationaryPair solve_full_stationary(const SpikedModel& mdl, const SolveOptions& opt) {
  validate_model(mdl);
  const Eigen::Index m = mdl.m(), n = mdl.n();
  const double md = static_cast<double>(m), nd = static_cast<double>(n);

  auto attempt = [&](double d) {
    StationaryPair out;
    Matrix L = Matrix::Identity(m, m);
    Matrix R = Matrix::Identity(n, n);
    Matrix Rt = expected_whitened(mdl, Side::R, linalg::sym_inverse(L)) / md;
    for (int it = 1; it <= opt.max_iter; ++it) {
      Matrix L_old = L;
      R = (1.0 - d) * R + d * Rt;
      Matrix Lt = expected_whitened(mdl, Side::L, linalg::sym_inverse(R)) / nd;
      L = (1.0 - d) * L + d * Lt;
      const double res_l = (1.0 - d) * (L_old - Lt).norm() / L.norm();
      const double c = md / L.trace();
      L *= c;
      R /= c;
      Rt = expected_whitened(mdl, Side::R, linalg::sym_inverse(L)) / md;
      const double res_r = (R - Rt).norm() / R.norm();
      out.iterations = it;
      out.residual = std::max(res_l, res_r);
      if (out.residual <= opt.tol) {
        out.converged = true;
        break;
      }
    }
    out.L = std::move(L);
    out.R = std::move(R);
    return out;
  };

  StationaryPair out = attempt(opt.damping);
  if (!out.converged && opt.damping != 1.0) {
    StationaryPair plain = attempt(1.0);
    if (plain.converged || plain.residual < out.residual) out = std::move(plain);
  }
  out.objective = kl_objective(mdl, out.L, out.R);
  return out;
}

Matrix RestrictedStationary::rhat() const {
  Matrix Pperp = Matrix::Identity(U.rows(), U.rows()) - U * U.transpose();
  return U * S * U.transpose() + mu_perp * Pperp;
}

RestrictedStationary solve_restricted_stationary(const SpikedModel& mdl, const Matrix& U,
                                                 const SolveOptions& opt,
                                                 const std::optional<RestrictedInit>& init) {
  validate_model(mdl);
  const Eigen::Index m = mdl.m(), n = mdl.n(), r = U.cols();
  if (U.rows() != n) throw std::invalid_argument("solve_restricted_stationary: U must be n x r");
  if (r < 1 || r >= n) throw std::invalid_argument("solve_restricted_stationary: need 1 <= r < n");
  if ((U.transpose() * U - Matrix::Identity(r, r)).norm() > 1e-8)
    throw std::invalid_argument("solve_restricted_stationary: U not orthonormal");
  const double md = static_cast<double>(m), nd = static_cast<double>(n);
  const double perp_dim = md * static_cast<double>(n - r);
  const Matrix Pperp = Matrix::Identity(n, n) - U * U.transpose();

  auto attempt = [&](double d) {
    RestrictedStationary out;
    out.U = U;
    Matrix L;
    Matrix S;
    double mu = 0.0;
    if (init.has_value()) {
      L = init->L;
      S = init->S;
      mu = init->mu_perp;
    } else {
      L = Matrix::Identity(m, m);
      Matrix Phi0 = expected_whitened(mdl, Side::R, linalg::sym_inverse(L));
      S = (U.transpose() * Phi0 * U) / md;
      mu = (Phi0.trace() - (U.transpose() * Phi0 * U).trace()) / perp_dim;
    }
    Matrix Phi = expected_whitened(mdl, Side::R, linalg::sym_inverse(L));
    for (int it = 1; it <= opt.max_iter; ++it) {
      Matrix St = (U.transpose() * Phi * U) / md;
      const double mut = (Phi.trace() - (U.transpose() * Phi * U).trace()) / perp_dim;
      S = (1.0 - d) * S + d * St;
      mu = (1.0 - d) * mu + d * mut;
      Matrix rhat_inv = U * linalg::sym_inverse(S) * U.transpose() + (1.0 / mu) * Pperp;
      Matrix Lt = expected_whitened(mdl, Side::L, rhat_inv) / nd;
      Matrix L_pre = (1.0 - d) * L + d * Lt;
      const double res_l = (1.0 - d) * (L - Lt).norm() / L_pre.norm();
      const double c = md / L_pre.trace();
      L = c * L_pre;
      S /= c;
      mu /= c;
      Phi = expected_whitened(mdl, Side::R, linalg::sym_inverse(L));
      // Residuals of the S and mu equations at the current point.
      Matrix St2 = (U.transpose() * Phi * U) / md;
      const double mut2 = (Phi.trace() - (U.transpose() * Phi * U).trace()) / perp_dim;
      out.res_s = (S - St2).norm() / S.norm();
      out.res_mu = std::abs(mu - mut2) / mu;
      out.res_l = res_l;
      out.iterations = it;
      if (std::max({out.res_s, out.res_mu, out.res_l}) <= opt.tol) {
        out.converged = true;
        break;
      }
    }
    out.L = std::move(L);
    out.S = std::move(S);
    out.mu_perp = mu;
    return out;
  };

  RestrictedStationary out = attempt(opt.damping);
  if (!out.converged && opt.damping != 1.0) {
    RestrictedStationary plain = attempt(1.0);
    const double worst_a = std::max({out.res_s, out.res_mu, out.res_l});
    const double worst_b = std::max({plain.res_s, plain.res_mu, plain.res_l});
    if (plain.converged || worst_b < worst_a) out = std::move(plain);
  }
  out.objective = kl_objective(mdl, out.L, out.rhat());
  return out;
}

SubsetResult optimal_subspace_bruteforce(const Vector& eigs_desc, int r) {
  const int n = static_cast<int>(eigs_desc.size());
  if (n > 20) throw std::invalid_argument("optimal_subspace_bruteforce: n must be <= 20");
  if (r < 1 || r >= n) throw std::invalid_argument("optimal_subspace_bruteforce: need 1 <= r < n");
  for (int i = 0; i < n; ++i)
    if (!(eigs_desc(i) > 0.0))
      throw std::invalid_argument("optimal_subspace_bruteforce: spectrum must be positive");

  std::vector<int> idx(r);
  for (int i = 0; i < r; ++i) idx[i] = i;
  SubsetResult best;
  bool first = true;
  while (true) {
    Vector comp(n - r);
    int p = 0, q = 0;
    for (int i = 0; i < n; ++i) {
      if (p < r && idx[p] == i) {
        ++p;
      } else {
        comp(q++) = eigs_desc(i);
      }
    }
    const double ratio = am_over_gm(comp);
    if (first || ratio < best.tail_am_gm) {  // strict: ties keep the earlier subset
      best.index_set = idx;
      best.tail_am_gm = ratio;
      first = false;
    }
    // next lexicographic combination
    int i = r - 1;
    while (i >= 0 && idx[i] == n - r + i) --i;
    if (i < 0) break;
    ++idx[i];
    for (int j = i + 1; j < r; ++j) idx[j] = idx[j - 1] + 1;
  }
  return best;
}

SubsetResult optimal_subspace_bruteforce(const Matrix& Phi, int r) {
  return optimal_subspace_bruteforce(linalg::sym_eig(Phi).lambda, r);
}

double reduced_objective(const Matrix& Phi, const Matrix& U) {
  const Eigen::Index n = Phi.rows(), r = U.cols();
  const double sub = linalg::logdet_spd(U.transpose() * Phi * U);
  if (n == r) return sub;
  const double tail = Phi.trace() - (U.transpose() * Phi * U).trace();
  return sub + static_cast<double>(n - r) * std::log(tail);
}

OptimalityReport subspace_optimality_check(const Matrix& Phi, int r, int trials,
                                           std::uint64_t seed) {
  linalg::SymEig eig = linalg::sym_eig(Phi);
  SubsetResult pick = optimal_subspace_bruteforce(eig.lambda, r);
  Matrix Uopt(Phi.rows(), r);
  for (int j = 0; j < r; ++j) Uopt.col(j) = eig.Q.col(pick.index_set[j]);

  OptimalityReport rep;
  rep.f_opt = reduced_objective(Phi, Uopt);
  rep.best_random = std::numeric_limits<double>::infinity();
  for (int t = 0; t < trials; ++t) {
    std::mt19937_64 eng(seed + 1000003ULL * static_cast<std::uint64_t>(t));
    Matrix Ur = rng::orthonormal(Phi.rows(), r, eng);
    const double f = reduced_objective(Phi, Ur);
    rep.best_random = std::min(rep.best_random, f);
    rep.max_violation = std::max(rep.max_violation, rep.f_opt - f);
  }
  return rep;
}

OptimalityReport subspace_optimality_check(const SpikedModel& mdl, int r, int trials,
                                           std::uint64_t seed) {
  StationaryPair full = solve_full_stationary(mdl);
  Matrix Phi = expected_whitened(mdl, Side::R, linalg::sym_inverse(full.L));
  return subspace_optimality_check(Phi, r, trials, seed);
}

GapReport approximation_gap(const SpikedModel& mdl, int r, const SolveOptions& opt) {
  const Eigen::Index m = mdl.m(), n = mdl.n();
  if (r < 1 || r >= n) throw std::invalid_argument("approximation_gap: need 1 <= r < n");
  GapReport rep;
  StationaryPair full = solve_full_stationary(mdl, opt);
  rep.j_full = full.objective;

  linalg::SymEig eig = linalg::sym_eig(full.R);
  Vector tail = eig.lambda.tail(n - r);
  rep.tail_am = tail.mean();
  rep.tail_gm = std::exp(tail.array().log().mean());
  rep.bound = 0.5 * static_cast<double>(m) * static_cast<double>(n - r) *
              std::log(rep.tail_am / rep.tail_gm);

  auto solve_for_subset = [&](const std::vector<int>& idx) {
    Matrix Uc(n, r);
    Vector sel(r);
    double comp_sum = 0.0;
    std::vector<bool> taken(n, false);
    for (int j = 0; j < r; ++j) {
      Uc.col(j) = eig.Q.col(idx[j]);
      sel(j) = eig.lambda(idx[j]);
      taken[idx[j]] = true;
    }
    for (Eigen::Index i = 0; i < n; ++i)
      if (!taken[i]) comp_sum += eig.lambda(i);
    RestrictedInit warm{full.L, Matrix(sel.asDiagonal()),
                        comp_sum / static_cast<double>(n - r)};
    return solve_restricted_stationary(mdl, Uc, opt, warm);
  };

  std::vector<int> top(r);
  for (int j = 0; j < r; ++j) top[j] = j;
  RestrictedStationary rs_top = solve_for_subset(top);
  rep.j_restr_top = rs_top.objective;

  SubsetResult pick = optimal_subspace_bruteforce(eig.lambda, r);
  bool same = pick.index_set == top;
  RestrictedStationary rs_bf = same ? rs_top : solve_for_subset(pick.index_set);
  rep.j_restr_bruteforce = rs_bf.objective;

  rep.j_restr = std::min(rep.j_restr_top, rep.j_restr_bruteforce);
  rep.gap = rep.j_restr - rep.j_full;
  rep.converged = full.converged && rs_top.converged && rs_bf.converged;
  return rep;
}

Bracket alpha_bracket(Eigen::Index m, Eigen::Index n, Eigen::Index r) {
  if (m < 1 || n < 1) throw std::invalid_argument("alpha_bracket: bad dims");
  if (r < 0 || r >= std::max(m, n))
    throw std::invalid_argument("alpha_bracket: need 0 <= r < max(m, n)");
  const double mbar = static_cast<double>(std::min(m, n));
  const double nbar = static_cast<double>(std::max(m, n));
  Bracket b;
  b.c_a = std::sqrt(std::max(1.0, static_cast<double>(m) / static_cast<double>(n)));
  b.k = static_cast<long>(std::min(mbar, nbar - static_cast<double>(r)));
  const double denom = std::sqrt(mbar * (nbar - static_cast<double>(r)));
  b.lower = b.c_a / denom;
  b.upper = b.c_a * std::sqrt(static_cast<double>(b.k)) / denom;
  return b;
}

double sigma_p_stationary(const SpikedModel& mdl, const RestrictedStationary& pt) {
  const Eigen::Index n = mdl.n();
  Matrix Pperp = Matrix::Identity(n, n) - pt.U * pt.U.transpose();
  Matrix rhat_inv = pt.U * linalg::sym_inverse(pt.S) * pt.U.transpose() +
                    (1.0 / pt.mu_perp) * Pperp;
  Matrix Ew = expected_whitened(mdl, Side::L, rhat_inv);
  return (linalg::sym_inverse(pt.L) * Ew).trace();
}

double subspace_second_moment(const SpikedModel& mdl, const RestrictedStationary& pt) {
  Matrix Phi = expected_whitened(mdl, Side::R, linalg::sym_inverse(pt.L));
  return (linalg::sym_inverse(pt.S) * (pt.U.transpose() * Phi * pt.U)).trace();
}

double mixed_norm_measure(const Matrix& grad, const Matrix& U, const MeasureConstants& k) {
  if (grad.cols() != U.rows()) throw std::invalid_argument("mixed_norm_measure: shape mismatch");
  Matrix GU = grad * U;
  Matrix Gperp = grad - GU * U.transpose();
  return k.c_a / (k.clip * std::sqrt(k.theta)) * linalg::nuclear_norm(Gperp) +
         k.alpha_kl / k.theta * GU.squaredNorm();
}

DescentReport descent_check(const Matrix& W0, const Matrix& Wstar, DescentOptimizer which,
                            const std::vector<double>& etas, int steps, const Hyper& base) {
  if (W0.rows() != Wstar.rows() || W0.cols() != Wstar.cols())
    throw std::invalid_argument("descent_check: shape mismatch");
  DescentReport rep;
  for (double eta : etas) {
    Hyper h = base;
    h.lr = eta;
    h.momentum = 0.0;
    h.weight_decay = 0.0;

    Matrix G0 = W0 - Wstar;
    ProState st = init_state(G0, h);
    const ClipCeilings ceil = clip_ceilings(W0.rows(), W0.cols(), h);
    const double C = std::max({ceil.c_l, ceil.c_s, ceil.c_mu});
    const double theta_init = std::max({st.lam_l.maxCoeff(), st.lam_s.maxCoeff(), st.mu_perp});

    DescentEtaReport er;
    er.eta = eta;
    er.initial_loss = 0.5 * G0.squaredNorm();
    Matrix W = W0;
    double loss = er.initial_loss;
    double gmax = 0.0;
    double worst = -std::numeric_limits<double>::infinity();
    int first_increase = 0;
    for (int t = 1; t <= steps; ++t) {
      Matrix G = W - Wstar;
      gmax = std::max(gmax, linalg::svd(G).sigma(0));
      const double theta = std::max(theta_init, C * C * gmax * gmax);
      const double theta_eff = std::pow(std::sqrt(theta) + h.damping, 2);

      Matrix Gc = st.orient == Orientation::Right ? G : Matrix(G.transpose());
      double surrogate;
      if (which == DescentOptimizer::ProExact) {
        surrogate = mixed_norm_measure(
            Gc, st.U, MeasureConstants{st.aspect_scale(), C, theta_eff, h.mixing});
      } else {
        surrogate = Gc.squaredNorm() / theta_eff;
      }

      Matrix Wn = which == DescentOptimizer::ProExact
                      ? pro_step(W, G, st, h, polar::PolarMode::Exact)
                      : smok_hop_step(W, G, st, h);
      Matrix delta = (W - Wn) / eta;
      const double loss_n = 0.5 * (Wn - Wstar).squaredNorm();
      const double lhs = loss_n - loss;
      const double rhs = -eta * surrogate + 0.5 * eta * eta * delta.squaredNorm();
      worst = std::max(worst, lhs - rhs);
      if (loss_n > loss && first_increase == 0) first_increase = t;
      loss = loss_n;
      W = std::move(Wn);
    }
    er.monotone = first_increase == 0;
    er.monotone_steps = er.monotone ? steps : first_increase - 1;
    er.final_loss = loss;
    er.worst_margin = worst;
    er.structure_ok = worst <= 1e-8 * std::max(1.0, er.initial_loss);
    rep.per_eta.push_back(er);
  }
  return rep;
}

}  // namespace proklsh::kl
