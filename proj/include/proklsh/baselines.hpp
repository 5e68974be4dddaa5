#pragma once

#include <cstdint>

#include "proklsh/state.hpp"

namespace proklsh {

// Full two-sided preconditioner with the same lagged-eigenbasis EMA machinery
// as the projected optimizer, no subspace restriction and no polar factor.
struct KlShampooState {
  Eigen::Index rows = 0, cols = 0;
  Matrix M;      // m x n momentum (EMA)
  Matrix L;      // m x m
  Matrix R;      // n x n
  Matrix QL;     // m x m
  Vector lam_l;  // m
  Matrix QR;     // n x n
  Vector lam_r;  // n
  std::int64_t step_count = 0;
  std::int64_t refresh_skips = 0;
};

KlShampooState klshampoo_init(const Matrix& G0, const Hyper& h);
Matrix klshampoo_step(const Matrix& W, const Matrix& G, KlShampooState& st, const Hyper& h);

struct MuonState {
  Matrix M;
};

MuonState muon_init(Eigen::Index rows, Eigen::Index cols);
Matrix muon_step(const Matrix& W, const Matrix& G, MuonState& st, const Hyper& h,
                 polar::PolarMode mode = polar::PolarMode::NewtonSchulz);

struct AdamState {
  Matrix m1;
  Matrix v2;
  std::int64_t step_count = 0;
};

AdamState adam_init(Eigen::Index rows, Eigen::Index cols);
Matrix adam_step(const Matrix& W, const Matrix& G, AdamState& st, const Hyper& h);

}  // namespace proklsh
