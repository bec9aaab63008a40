#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "hydroq/error.hpp"
#include "hydroq/tensor.hpp"

namespace hydroq {

/// Solves A x = b for symmetric positive definite A by Cholesky.
inline std::vector<double> cholesky_solve(Matrix A, std::vector<double> b) {
    const std::size_t n = A.rows();
    if (A.cols() != n || b.size() != n) throw ShapeError("cholesky_solve: shape mismatch");
    for (std::size_t j = 0; j < n; ++j) {
        double d = A(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= A(j, k) * A(j, k);
        if (!(d > 0.0)) throw Error("cholesky_solve: matrix not positive definite");
        A(j, j) = std::sqrt(d);
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = A(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= A(i, k) * A(j, k);
            A(i, j) = s / A(j, j);
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < i; ++k) b[i] -= A(i, k) * b[k];
        b[i] /= A(i, i);
    }
    for (std::size_t i = n; i-- > 0;) {
        for (std::size_t k = i + 1; k < n; ++k) b[i] -= A(k, i) * b[k];
        b[i] /= A(i, i);
    }
    return b;
}

/// argmin_w |X w - y|^2 + ridge |w|^2 via the normal equations.
inline std::vector<double> ridge_least_squares(const Matrix& X, std::span<const double> y,
                                               double ridge) {
    if (X.rows() != y.size()) throw ShapeError("ridge_least_squares: row mismatch");
    const std::size_t p = X.cols();
    Matrix G(p, p);
    std::vector<double> rhs(p, 0.0);
    for (std::size_t r = 0; r < X.rows(); ++r) {
        auto x = X.row(r);
        for (std::size_t i = 0; i < p; ++i) {
            rhs[i] += x[i] * y[r];
            for (std::size_t j = 0; j <= i; ++j) G(i, j) += x[i] * x[j];
        }
    }
    for (std::size_t i = 0; i < p; ++i) {
        G(i, i) += ridge;
        for (std::size_t j = 0; j < i; ++j) G(j, i) = G(i, j);
    }
    return cholesky_solve(std::move(G), std::move(rhs));
}

} // namespace hydroq
