#pragma once

#include <Eigen/Dense>
#include <cstdint>

namespace peerfx {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

}  // namespace peerfx
