#pragma once

#include <string>

#include "hydroq/error.hpp"
#include "hydroq/tensor.hpp"

namespace hydroq::nn {

enum class LossKind { MSE, Pinball };

struct LossSpec {
    LossKind kind = LossKind::MSE;
    double tau = 0.5; // used only by Pinball

    static LossSpec mse() { return {LossKind::MSE, 0.5}; }
    static LossSpec pinball(double tau) {
        LossSpec s{LossKind::Pinball, tau};
        s.validate();
        return s;
    }

    void validate() const {
        if (kind == LossKind::Pinball && !(tau > 0.0 && tau < 1.0))
            throw Error("pinball tau must lie in (0,1), got " + std::to_string(tau));
    }
};

struct LossValue {
    double loss = 0.0;
    Matrix grad; // d(loss)/d(pred)
};

/// Mean tilted absolute error over all elements. At a zero residual the
/// subgradient 0 is used.
inline LossValue pinball_loss(const Matrix& pred, const Matrix& target, double tau) {
    if (!(tau > 0.0 && tau < 1.0))
        throw Error("pinball tau must lie in (0,1), got " + std::to_string(tau));
    require_same_shape(pred, target, "pinball_loss");
    const std::size_t n = pred.data().size();
    LossValue v{0.0, Matrix(pred.rows(), pred.cols())};
    const double inv = 1.0 / double(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double m = target.data()[k] - pred.data()[k];
        if (m > 0.0) {
            v.loss += tau * m;
            v.grad.data()[k] = -tau * inv;
        } else if (m < 0.0) {
            v.loss += (tau - 1.0) * m;
            v.grad.data()[k] = (1.0 - tau) * inv;
        }
    }
    v.loss *= inv;
    return v;
}

inline LossValue mse_loss(const Matrix& pred, const Matrix& target) {
    require_same_shape(pred, target, "mse_loss");
    const std::size_t n = pred.data().size();
    LossValue v{0.0, Matrix(pred.rows(), pred.cols())};
    const double inv = 1.0 / double(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double e = pred.data()[k] - target.data()[k];
        v.loss += e * e;
        v.grad.data()[k] = 2.0 * e * inv;
    }
    v.loss *= inv;
    return v;
}

inline LossValue evaluate_loss(const LossSpec& spec, const Matrix& pred, const Matrix& target) {
    return spec.kind == LossKind::MSE ? mse_loss(pred, target) : pinball_loss(pred, target, spec.tau);
}

} // namespace hydroq::nn
