#pragma once

#include "semapop/autodiff.hpp"
#include "semapop/rng.hpp"
#include "semapop/types.hpp"

#include <functional>

namespace semapop::testing {

// Central finite differences of a scalar function with respect to one
// parameter matrix. `f` must re-evaluate the full computation.
inline Matrix finite_difference(Matrix& param, const std::function<double()>& f,
                                double h = 1e-6) {
    Matrix grad(param.rows(), param.cols());
    for (Index i = 0; i < param.rows(); ++i) {
        for (Index j = 0; j < param.cols(); ++j) {
            const double orig = param(i, j);
            const double step = h * std::max(1.0, std::abs(orig));
            param(i, j) = orig + step;
            const double fp = f();
            param(i, j) = orig - step;
            const double fm = f();
            param(i, j) = orig;
            grad(i, j) = (fp - fm) / (2.0 * step);
        }
    }
    return grad;
}

inline double max_relative_error(const Matrix& a, const Matrix& b, double floor = 1e-6) {
    double worst = 0.0;
    for (Index i = 0; i < a.rows(); ++i)
        for (Index j = 0; j < a.cols(); ++j) {
            const double denom = std::max({std::abs(a(i, j)), std::abs(b(i, j)), floor});
            worst = std::max(worst, std::abs(a(i, j) - b(i, j)) / denom);
        }
    return worst;
}

} // namespace semapop::testing
