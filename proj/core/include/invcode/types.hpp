#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

namespace invcode {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Task (worker) ids are 1-based throughout the public API: ids 1..k are the
/// systematic data tasks, k+1..n the parity tasks.
using TaskId = int;

using VecList = std::vector<Vec>;

}  // namespace invcode
