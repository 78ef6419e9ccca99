#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace meshlearn {

using Index = Eigen::Index;

/// One scalar per mesh node for one timestep.
using Field = Eigen::VectorXd;

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Compressed-row sparse matrix. Row-major storage keeps each row's
/// contributions in ascending column order, which fixes the summation order
/// of every product.
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

using Triplet = Eigen::Triplet<double>;

}  // namespace meshlearn
