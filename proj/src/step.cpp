#include "proklsh/step.hpp"

#include <cmath>

#include "proklsh/linalg.hpp"

namespace proklsh {

namespace {

enum class DirKind { Pro, SmokHop, SubspaceOnly, ComplementOnly };

Vector damped_inv_root(const Vector& lam, double eps) {
  return (lam.cwiseSqrt().array() + eps).inverse().matrix();
}

struct CoreDir {
  Matrix delta_sub;   // core m x n
  Matrix white_perp;  // core m x n, L^{-1/2}-whitened complement gradient
};

CoreDir core_direction(const Matrix& Gc_hat, const ProState& st, const Hyper& h) {
  const Vector dl = damped_inv_root(st.lam_l, h.damping);
  const Vector ds = damped_inv_root(st.lam_s, h.damping);
  Matrix Gpar = Gc_hat * st.U;                         // m x r
  Matrix Gperp = Gc_hat - Gpar * st.U.transpose();     // m x n
  Matrix white_par = st.QL * (dl.asDiagonal() * (st.QL.transpose() * Gpar));
  CoreDir out;
  out.delta_sub = ((white_par * st.QS) * ds.asDiagonal()) * st.QS.transpose() * st.U.transpose();
  out.white_perp = st.QL * (dl.asDiagonal() * (st.QL.transpose() * Gperp));
  return out;
}

void check_inputs(const Matrix& W, const Matrix& G, const ProState& st) {
  if (W.rows() != st.rows || W.cols() != st.cols || G.rows() != st.rows || G.cols() != st.cols)
    throw std::invalid_argument("step: W/G shape does not match state");
  if (!G.allFinite()) throw NonFiniteGradientError("step: non-finite gradient");
  if (!W.allFinite()) throw NonFiniteGradientError("step: non-finite weights");
}

Matrix orient_in(const Matrix& X, const ProState& st) {
  return st.orient == Orientation::Right ? X : Matrix(X.transpose());
}

Matrix orient_out(Matrix X, const ProState& st) {
  return st.orient == Orientation::Right ? X : Matrix(X.transpose());
}

// Statistics EMA on the raw gradient, in the literal line order of the
// practical scheme: every line reads the latest written values, and each
// per-eigenvalue EMA is clipped immediately.
void statistics_update(ProState& st, const Matrix& Gc, const Hyper& h, const ClipCeilings& c) {
  const double b2 = h.ema;
  const Eigen::Index m = st.core_m(), n = st.core_n(), r = st.rank();
  Matrix Gt = Gc * st.U;                      // m x r
  Matrix Gp = Gc - Gt * st.U.transpose();     // m x n

  Matrix T1 = st.QL.transpose() * Gt * st.QS;  // m x r
  Vector ldiag = (T1 * st.lam_s.cwiseSqrt().cwiseInverse().asDiagonal())
                     .rowwise().squaredNorm() / static_cast<double>(r);
  Vector rdiag = (st.lam_l.cwiseSqrt().cwiseInverse().asDiagonal() * T1)
                     .colwise().squaredNorm().transpose() / static_cast<double>(m);
  Matrix Gp2 = st.QL.transpose() * Gp;  // m x n
  Vector e_res = Gp2.rowwise().squaredNorm();

  st.lam_l = b2 * st.lam_l +
             (1.0 - b2) / static_cast<double>(n) *
                 (static_cast<double>(r) * ldiag + e_res / st.mu_perp);
  st.lam_l = st.lam_l.cwiseMax(1.0 / (c.c_l * c.c_l));

  st.lam_s = b2 * st.lam_s + (1.0 - b2) * rdiag;
  st.lam_s = st.lam_s.cwiseMax(1.0 / (c.c_s * c.c_s));

  if (n > r) {
    const double dperp = e_res.cwiseQuotient(st.lam_l).sum() /
                         (static_cast<double>(m) * static_cast<double>(n - r));
    st.mu_perp = b2 * st.mu_perp + (1.0 - b2) * dperp;
    st.mu_perp = std::max(st.mu_perp, 1.0 / (c.c_mu * c.c_mu));
  }

  Matrix A = Gt * st.QS * st.lam_s.cwiseSqrt().cwiseInverse().asDiagonal();
  st.L = b2 * st.L + (1.0 - b2) / static_cast<double>(n) *
                         (A * A.transpose() + (1.0 / st.mu_perp) * (Gp * Gp.transpose()));
  Matrix Bm = st.lam_l.cwiseSqrt().cwiseInverse().asDiagonal() * (st.QL.transpose() * Gt);
  st.S = b2 * st.S + (1.0 - b2) / static_cast<double>(m) * (Bm.transpose() * Bm);
}

void track_core(ProState& st, const Matrix& Gc, double b2) {
  const Eigen::Index m = st.core_m();
  Matrix GU = Gc * st.U;  // m x r
  Matrix target = b2 * st.U * st.S +
                  (1.0 - b2) / static_cast<double>(m) *
                      (Gc.transpose() * (st.QL * (st.lam_l.cwiseInverse().asDiagonal() *
                                                  (st.QL.transpose() * GU))));
  try {
    Matrix Unew = linalg::thin_qr(target).Q;
    Matrix T = st.U.transpose() * Unew;
    st.S = T.transpose() * st.S * T;
    st.QS = T.transpose() * st.QS;
    st.U = std::move(Unew);
  } catch (const linalg::RankDeficiencyError&) {
    ++st.tracking_skips;
  }
}

void refresh_bases(ProState& st) {
  try {
    st.QL = linalg::thin_qr(st.L * st.QL).Q;
  } catch (const linalg::RankDeficiencyError&) {
    ++st.refresh_skips;
  }
  try {
    st.QS = linalg::thin_qr(st.S * st.QS).Q;
  } catch (const linalg::RankDeficiencyError&) {
    ++st.refresh_skips;
  }
}

Matrix step_impl(const Matrix& W, const Matrix& G, ProState& st, const Hyper& h,
                 polar::PolarMode mode, DirKind kind) {
  check_inputs(W, G, st);
  const ClipCeilings ceil = clip_ceilings(st.rows, st.cols, h);
  const Matrix Gc = orient_in(G, st);
  Matrix Wc = orient_in(W, st);
  ++st.step_count;

  Matrix Gc_hat;
  if (kind == DirKind::SmokHop) {
    st.M = h.momentum * st.M + (1.0 - h.momentum) * Gc;
    Gc_hat = st.M;
  } else {
    st.M = h.momentum * st.M + Gc;
    Gc_hat = Gc + h.momentum * st.M;
  }

  CoreDir dir = core_direction(Gc_hat, st, h);
  Matrix direction;
  switch (kind) {
    case DirKind::Pro:
      direction = polar::apply(dir.white_perp, mode, h.ns) * st.aspect_scale() +
                  h.mixing * dir.delta_sub;
      break;
    case DirKind::SubspaceOnly:
      direction = h.mixing * dir.delta_sub;
      break;
    case DirKind::ComplementOnly:
      direction = polar::apply(dir.white_perp, mode, h.ns) * st.aspect_scale();
      break;
    case DirKind::SmokHop:
      direction = (1.0 / (std::sqrt(st.mu_perp) + h.damping)) * dir.white_perp + dir.delta_sub;
      break;
  }
  Wc = (1.0 - h.lr * h.weight_decay) * Wc - h.lr * direction;

  statistics_update(st, Gc, h, ceil);
  track_core(st, Gc, h.ema);
  if (h.qr_period > 0 && st.step_count % h.qr_period == 0) refresh_bases(st);

  return orient_out(std::move(Wc), st);
}

}  // namespace

UpdateDecomposition update_direction(const Matrix& Ghat, const ProState& st, const Hyper& h,
                                     polar::PolarMode mode) {
  if (Ghat.rows() != st.rows || Ghat.cols() != st.cols)
    throw std::invalid_argument("update_direction: shape mismatch");
  CoreDir dir = core_direction(orient_in(Ghat, st), st, h);
  UpdateDecomposition out;
  out.c_a = st.aspect_scale();
  out.delta_sub = orient_out(std::move(dir.delta_sub), st);
  out.delta_res = orient_out(polar::apply(dir.white_perp, mode, h.ns) * out.c_a, st);
  return out;
}

Matrix pro_step(const Matrix& W, const Matrix& G, ProState& st, const Hyper& h,
                polar::PolarMode mode) {
  return step_impl(W, G, st, h, mode, DirKind::Pro);
}

Matrix ablation_step(const Matrix& W, const Matrix& G, ProState& st, const Hyper& h,
                     Ablation which, polar::PolarMode mode) {
  return step_impl(W, G, st, h, mode,
                   which == Ablation::SubspaceOnly ? DirKind::SubspaceOnly
                                                   : DirKind::ComplementOnly);
}

Matrix smok_hop_step(const Matrix& W, const Matrix& G, ProState& st, const Hyper& h) {
  return step_impl(W, G, st, h, polar::PolarMode::NewtonSchulz, DirKind::SmokHop);
}

void subspace_track(ProState& st, const Matrix& G, const Hyper& h) {
  if (G.rows() != st.rows || G.cols() != st.cols)
    throw std::invalid_argument("subspace_track: shape mismatch");
  track_core(st, orient_in(G, st), h.ema);
}

}  // namespace proklsh
