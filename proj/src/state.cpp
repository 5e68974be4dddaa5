#include "proklsh/state.hpp"

#include <cmath>
#include <stdexcept>

#include "proklsh/linalg.hpp"

namespace proklsh {

Orientation orientation(Eigen::Index m, Eigen::Index n) {
  return m <= n ? Orientation::Right : Orientation::Left;
}

ClipCeilings clip_ceilings(Eigen::Index m, Eigen::Index n, const Hyper& h) {
  const double lo = static_cast<double>(std::min(m, n));
  const double hi = static_cast<double>(std::max(m, n));
  const double cap = static_cast<double>(h.clip_cap);
  const double floor = static_cast<double>(h.clip_floor);
  ClipCeilings c;
  c.c_l = std::max(floor, std::min(lo, cap));
  c.c_s = std::max(floor, std::min(hi, cap));
  c.c_mu = std::max(floor, std::min(hi, cap));
  return c;
}

double ProState::aspect_scale() const {
  return std::sqrt(std::max(1.0, static_cast<double>(rows) / static_cast<double>(cols)));
}

ProState init_state(const Matrix& G0, const Hyper& h) {
  const Eigen::Index m0 = G0.rows(), n0 = G0.cols();
  const Eigen::Index r = h.rank;
  if (m0 < 1 || n0 < 1) throw std::invalid_argument("init_state: empty gradient");
  if (!G0.allFinite()) throw std::invalid_argument("init_state: non-finite first gradient");
  if (G0.norm() == 0.0) throw std::invalid_argument("init_state: zero first gradient");
  if (r < 1) throw std::invalid_argument("init_state: rank must be >= 1");
  if (r > std::min(m0, n0)) throw std::invalid_argument("init_state: rank exceeds min(m, n)");
  if (r >= std::max(m0, n0))
    throw std::invalid_argument("init_state: rank must be < max(m, n), the projected side");

  ProState st;
  st.orient = orientation(m0, n0);
  st.rows = m0;
  st.cols = n0;
  const Matrix Gc = st.orient == Orientation::Right ? G0 : Matrix(G0.transpose());
  const Eigen::Index m = Gc.rows(), n = Gc.cols();

  linalg::Svd dec = linalg::svd(Gc);
  st.U = dec.V.leftCols(r);

  const double b2 = h.ema;
  Matrix Gt = Gc * st.U;  // m x r
  st.L = ((1.0 - b2) / static_cast<double>(r)) * (Gt * Gt.transpose());
  st.S = ((1.0 - b2) / static_cast<double>(m)) * (Gt.transpose() * Gt);
  st.QL = linalg::sym_eig(st.L).Q;
  st.QS = linalg::sym_eig(st.S).Q;
  st.lam_l = Vector::Constant(m, h.init_scale);
  st.lam_s = Vector::Constant(r, h.init_scale);
  st.mu_perp = h.init_scale;
  st.M = Matrix::Zero(m, n);
  st.step_count = 0;

  apply_clip(st, clip_ceilings(m0, n0, h));
  return st;
}

void apply_clip(ProState& st, const ClipCeilings& c) {
  st.lam_l = st.lam_l.cwiseMax(1.0 / (c.c_l * c.c_l));
  st.lam_s = st.lam_s.cwiseMax(1.0 / (c.c_s * c.c_s));
  st.mu_perp = std::max(st.mu_perp, 1.0 / (c.c_mu * c.c_mu));
}

}  // namespace proklsh
