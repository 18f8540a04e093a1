#pragma once

#include <Eigen/Dense>

namespace ude {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

}  // namespace ude
