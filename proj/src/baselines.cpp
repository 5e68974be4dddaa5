#include "proklsh/baselines.hpp"

#include <cmath>

#include "proklsh/linalg.hpp"
#include "proklsh/step.hpp"

namespace proklsh {

namespace {

double side_ceiling(Eigen::Index dim, const Hyper& h) {
  return std::max(static_cast<double>(h.clip_floor),
                  std::min(static_cast<double>(dim), static_cast<double>(h.clip_cap)));
}

void check_pair(const Matrix& W, const Matrix& G, Eigen::Index rows, Eigen::Index cols) {
  if (W.rows() != rows || W.cols() != cols || G.rows() != rows || G.cols() != cols)
    throw std::invalid_argument("baseline step: W/G shape mismatch");
  if (!G.allFinite()) throw NonFiniteGradientError("baseline step: non-finite gradient");
}

}  // namespace

KlShampooState klshampoo_init(const Matrix& G0, const Hyper& h) {
  if (!G0.allFinite()) throw std::invalid_argument("klshampoo_init: non-finite first gradient");
  if (G0.norm() == 0.0) throw std::invalid_argument("klshampoo_init: zero first gradient");
  KlShampooState st;
  st.rows = G0.rows();
  st.cols = G0.cols();
  const double b2 = h.ema;
  st.L = ((1.0 - b2) / static_cast<double>(st.cols)) * (G0 * G0.transpose());
  st.R = ((1.0 - b2) / static_cast<double>(st.rows)) * (G0.transpose() * G0);
  st.QL = linalg::sym_eig(st.L).Q;
  st.QR = linalg::sym_eig(st.R).Q;
  st.lam_l = Vector::Constant(st.rows, h.init_scale);
  st.lam_r = Vector::Constant(st.cols, h.init_scale);
  st.M = Matrix::Zero(st.rows, st.cols);
  return st;
}

Matrix klshampoo_step(const Matrix& W, const Matrix& G, KlShampooState& st, const Hyper& h) {
  check_pair(W, G, st.rows, st.cols);
  const double b2 = h.ema;
  const Eigen::Index m = st.rows, n = st.cols;
  const double cl = side_ceiling(m, h), cr = side_ceiling(n, h);
  ++st.step_count;

  st.M = h.momentum * st.M + (1.0 - h.momentum) * G;

  const Vector dl = (st.lam_l.cwiseSqrt().array() + h.damping).inverse().matrix();
  const Vector dr = (st.lam_r.cwiseSqrt().array() + h.damping).inverse().matrix();
  Matrix delta = st.QL * (dl.asDiagonal() * (st.QL.transpose() * st.M * st.QR) *
                          dr.asDiagonal()) * st.QR.transpose();
  Matrix Wn = (1.0 - h.lr * h.weight_decay) * W - h.lr * delta;

  // Statistics in the same literal line order as the projected optimizer:
  // the left targets read the old right eigenvalues and vice versa, matrix
  // EMAs read the freshly clipped vectors.
  Matrix T = st.QL.transpose() * G * st.QR;  // m x n
  Vector dl_target = (T * st.lam_r.cwiseSqrt().cwiseInverse().asDiagonal())
                         .rowwise().squaredNorm() / static_cast<double>(n);
  Vector dr_target = (st.lam_l.cwiseSqrt().cwiseInverse().asDiagonal() * T)
                         .colwise().squaredNorm().transpose() / static_cast<double>(m);
  st.lam_l = (b2 * st.lam_l + (1.0 - b2) * dl_target).cwiseMax(1.0 / (cl * cl));
  st.lam_r = (b2 * st.lam_r + (1.0 - b2) * dr_target).cwiseMax(1.0 / (cr * cr));

  Matrix A = G * st.QR * st.lam_r.cwiseSqrt().cwiseInverse().asDiagonal();
  st.L = b2 * st.L + (1.0 - b2) / static_cast<double>(n) * (A * A.transpose());
  Matrix Bm = st.lam_l.cwiseSqrt().cwiseInverse().asDiagonal() * (st.QL.transpose() * G);
  st.R = b2 * st.R + (1.0 - b2) / static_cast<double>(m) * (Bm.transpose() * Bm);

  if (h.qr_period > 0 && st.step_count % h.qr_period == 0) {
    try {
      st.QL = linalg::thin_qr(st.L * st.QL).Q;
    } catch (const linalg::RankDeficiencyError&) {
      ++st.refresh_skips;
    }
    try {
      st.QR = linalg::thin_qr(st.R * st.QR).Q;
    } catch (const linalg::RankDeficiencyError&) {
      ++st.refresh_skips;
    }
  }
  return Wn;
}

MuonState muon_init(Eigen::Index rows, Eigen::Index cols) {
  return MuonState{Matrix::Zero(rows, cols)};
}

Matrix muon_step(const Matrix& W, const Matrix& G, MuonState& st, const Hyper& h,
                 polar::PolarMode mode) {
  check_pair(W, G, W.rows(), W.cols());
  if (st.M.rows() != G.rows() || st.M.cols() != G.cols())
    throw std::invalid_argument("muon_step: state shape mismatch");
  st.M = h.momentum * st.M + G;
  const double c_a = std::sqrt(std::max(1.0, static_cast<double>(G.rows()) /
                                                 static_cast<double>(G.cols())));
  Matrix dir = polar::apply(G + h.momentum * st.M, mode, h.ns);
  return (1.0 - h.lr * h.weight_decay) * W - h.lr * c_a * dir;
}

AdamState adam_init(Eigen::Index rows, Eigen::Index cols) {
  return AdamState{Matrix::Zero(rows, cols), Matrix::Zero(rows, cols), 0};
}

Matrix adam_step(const Matrix& W, const Matrix& G, AdamState& st, const Hyper& h) {
  check_pair(W, G, W.rows(), W.cols());
  const double b1 = h.momentum, b2 = h.ema;
  ++st.step_count;
  st.m1 = b1 * st.m1 + (1.0 - b1) * G;
  st.v2 = b2 * st.v2 + (1.0 - b2) * G.cwiseProduct(G);
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(st.step_count));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(st.step_count));
  Matrix mhat = st.m1 / bc1;
  Matrix vhat = st.v2 / bc2;
  Matrix delta = mhat.cwiseQuotient((vhat.cwiseSqrt().array() + h.damping).matrix());
  return (1.0 - h.lr * h.weight_decay) * W - h.lr * delta;
}

}  // namespace proklsh
