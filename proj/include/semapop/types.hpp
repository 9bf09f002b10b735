#pragma once

#include <Eigen/Dense>

namespace semapop {

using Real = double;
using Index = Eigen::Index;

template <class Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <class Scalar>
using RowVecX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Matrix = MatX<Real>;
using Vector = VecX<Real>;
using RowVector = RowVecX<Real>;
using MatrixF = MatX<float>;

using ConstMatrixRef = Eigen::Ref<const Matrix>;
using ConstVectorRef = Eigen::Ref<const Vector>;

} // namespace semapop
