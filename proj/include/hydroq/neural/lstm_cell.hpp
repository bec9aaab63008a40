#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace hydroq::nn {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Read-only view of one LSTM layer's weights. Gate blocks are stacked in the
/// order input, forget, cell, output; W is 4H x in, U is 4H x H.
struct LstmWeights {
    const double* W;
    const double* U;
    const double* b;
    std::size_t in;
    std::size_t hid;
};

struct LstmGrads {
    double* W;
    double* U;
    double* b;
};

/// Activations of a single time step, packed in one buffer.
class LstmStep {
public:
    void reshape(std::size_t in, std::size_t hid) {
        in_ = in;
        hid_ = hid;
        buf_.resize(in + 9 * hid);
    }

    std::span<double> x() { return {buf_.data(), in_}; }
    std::span<const double> x() const { return {buf_.data(), in_}; }
#define HYDROQ_LSTM_FIELD(name, k)                                                     \
    std::span<double> name() { return {buf_.data() + in_ + (k) * hid_, hid_}; }        \
    std::span<const double> name() const { return {buf_.data() + in_ + (k) * hid_, hid_}; }
    HYDROQ_LSTM_FIELD(i, 0)
    HYDROQ_LSTM_FIELD(f, 1)
    HYDROQ_LSTM_FIELD(g, 2)
    HYDROQ_LSTM_FIELD(o, 3)
    HYDROQ_LSTM_FIELD(c_prev, 4)
    HYDROQ_LSTM_FIELD(h_prev, 5)
    HYDROQ_LSTM_FIELD(c, 6)
    HYDROQ_LSTM_FIELD(tanh_c, 7)
    HYDROQ_LSTM_FIELD(h, 8)
#undef HYDROQ_LSTM_FIELD

private:
    std::size_t in_ = 0;
    std::size_t hid_ = 0;
    std::vector<double> buf_;
};

/// step.x(), step.h_prev() and step.c_prev() must be filled by the caller.
inline void lstm_forward(const LstmWeights& w, LstmStep& step) {
    const std::size_t in = w.in, hid = w.hid;
    auto x = step.x();
    auto hp = step.h_prev();
    auto cp = step.c_prev();
    auto gi = step.i(), gf = step.f(), gg = step.g(), go = step.o();
    auto c = step.c(), tc = step.tanh_c(), h = step.h();
    for (std::size_t r = 0; r < 4 * hid; ++r) {
        double z = w.b[r];
        const double* wr = w.W + r * in;
        for (std::size_t k = 0; k < in; ++k) z += wr[k] * x[k];
        const double* ur = w.U + r * hid;
        for (std::size_t k = 0; k < hid; ++k) z += ur[k] * hp[k];
        const std::size_t gate = r / hid, u = r % hid;
        switch (gate) {
        case 0: gi[u] = sigmoid(z); break;
        case 1: gf[u] = sigmoid(z); break;
        case 2: gg[u] = std::tanh(z); break;
        default: go[u] = sigmoid(z); break;
        }
    }
    for (std::size_t u = 0; u < hid; ++u) {
        c[u] = gf[u] * cp[u] + gi[u] * gg[u];
        tc[u] = std::tanh(c[u]);
        h[u] = go[u] * tc[u];
    }
}

/// Backpropagates dh/dc at the step's outputs. Accumulates into `grads` and
/// overwrites dx, dh_prev and dc_prev. `dz` is scratch of size 4*hid.
inline void lstm_backward(const LstmWeights& w, const LstmStep& step, std::span<const double> dh,
                          std::span<const double> dc, LstmGrads& grads, std::span<double> dx,
                          std::span<double> dh_prev, std::span<double> dc_prev,
                          std::span<double> dz) {
    const std::size_t in = w.in, hid = w.hid;
    auto gi = step.i(), gf = step.f(), gg = step.g(), go = step.o();
    auto cp = step.c_prev(), tc = step.tanh_c();
    for (std::size_t u = 0; u < hid; ++u) {
        const double d_o = dh[u] * tc[u];
        const double dct = dc[u] + dh[u] * go[u] * (1.0 - tc[u] * tc[u]);
        dz[u] = dct * gg[u] * gi[u] * (1.0 - gi[u]);
        dz[hid + u] = dct * cp[u] * gf[u] * (1.0 - gf[u]);
        dz[2 * hid + u] = dct * gi[u] * (1.0 - gg[u] * gg[u]);
        dz[3 * hid + u] = d_o * go[u] * (1.0 - go[u]);
        dc_prev[u] = dct * gf[u];
    }
    auto x = step.x();
    auto hp = step.h_prev();
    std::fill(dx.begin(), dx.end(), 0.0);
    std::fill(dh_prev.begin(), dh_prev.end(), 0.0);
    for (std::size_t r = 0; r < 4 * hid; ++r) {
        const double d = dz[r];
        grads.b[r] += d;
        double* gw = grads.W + r * in;
        const double* wr = w.W + r * in;
        for (std::size_t k = 0; k < in; ++k) {
            gw[k] += d * x[k];
            dx[k] += d * wr[k];
        }
        double* gu = grads.U + r * hid;
        const double* ur = w.U + r * hid;
        for (std::size_t k = 0; k < hid; ++k) {
            gu[k] += d * hp[k];
            dh_prev[k] += d * ur[k];
        }
    }
}

} // namespace hydroq::nn
