#pragma once

#include <Eigen/Dense>

namespace cvxrom {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Index = Eigen::Index;

} // namespace cvxrom
