#pragma once

// Central-difference gradient check for the network + loss stack.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "hydroq/neural/loss.hpp"
#include "hydroq/neural/network.hpp"

namespace gradcheck {

using namespace hydroq;

struct Result {
    std::size_t checked = 0;
    std::size_t skipped = 0; // stencil straddled a ReLU, max-pool or pinball kink
    std::size_t failures = 0;
    double worst = 0.0;      // worst error, relative with a 1e-3 magnitude floor
};

/// Which side of every non-differentiable point the evaluation sits on.
inline std::vector<long> kink_signature(const nn::ForwardCache& cache, const Matrix& pred,
                                        const Matrix& target, const nn::LossSpec& loss) {
    std::vector<long> sig;
    for (const auto& s : cache.samples) {
        for (double z : s.conv_pre) sig.push_back(z > 0.0);
        for (auto a : s.pool_arg) sig.push_back(long(a));
    }
    if (loss.kind == nn::LossKind::Pinball)
        for (std::size_t k = 0; k < pred.data().size(); ++k)
            sig.push_back(target.data()[k] > pred.data()[k] ? 1 : target.data()[k] < pred.data()[k] ? -1 : 0);
    return sig;
}

inline Result run(const nn::NetSpec& spec, const nn::LossSpec& loss, std::uint64_t seed,
                  std::size_t batch = 3, double h = 1e-5, double tol = 1e-4) {
    std::mt19937_64 rng(seed * 7919 + 17);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    nn::NetParams params = nn::init_params(spec, seed);
    Tensor3 x(batch, spec.window, spec.input_features);
    for (double& v : x.data()) v = u(rng);
    Matrix y(batch, spec.horizon);
    for (double& v : y.data()) v = u(rng);

    nn::ForwardCache cache;
    const Matrix pred = nn::forward(spec, params, x, &cache);
    const auto base_sig = kink_signature(cache, pred, y, loss);
    const auto lv = nn::evaluate_loss(loss, pred, y);
    const auto grad = nn::backward(spec, params, cache, lv.grad);

    Result r;
    auto eval = [&](std::vector<long>& sig) {
        nn::ForwardCache c;
        const Matrix p = nn::forward(spec, params, x, &c);
        sig = kink_signature(c, p, y, loss);
        return nn::evaluate_loss(loss, p, y).loss;
    };
    std::vector<long> sp, sm;
    for (std::size_t k = 0; k < params.values.size(); ++k) {
        const double orig = params.values[k];
        params.values[k] = orig + h;
        const double lp = eval(sp);
        params.values[k] = orig - h;
        const double lm = eval(sm);
        params.values[k] = orig;
        if (sp != base_sig || sm != base_sig) {
            ++r.skipped;
            continue;
        }
        const double num = (lp - lm) / (2.0 * h);
        const double err = std::abs(num - grad[k]) / std::max({std::abs(num), std::abs(grad[k]), 1e-3});
        r.worst = std::max(r.worst, err);
        r.failures += err > tol;
        ++r.checked;
    }
    return r;
}

} // namespace gradcheck
