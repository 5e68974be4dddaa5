#pragma once

#include <Eigen/Dense>

namespace proklsh {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

}  // namespace proklsh
