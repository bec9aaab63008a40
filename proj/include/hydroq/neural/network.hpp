#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <vector>

#include "hydroq/neural/lstm_cell.hpp"
#include "hydroq/neural/spec.hpp"
#include "hydroq/tensor.hpp"

namespace hydroq::nn {

/// Activations kept from forward for one sample.
struct SampleCache {
    std::vector<LstmStep> seq_a;        // LSTM, forward direction, or encoder
    std::vector<LstmStep> seq_b;        // backward direction, or decoder
    std::vector<double> input;          // flattened window (CNN1D, Dense)
    std::vector<double> head_in;        // features entering the dense head
    std::vector<double> conv_pre;       // conv pre-activations, conv_length x filters
    std::vector<std::size_t> pool_arg;  // winning conv position, pooled_length x filters
};

struct ForwardCache {
    bool valid = false;
    NetSpec spec;
    std::size_t batch = 0;
    std::vector<SampleCache> samples;
};

namespace detail {

inline LstmWeights lstm_weights(const NetParams& p, const std::string& prefix, std::size_t in,
                                std::size_t hid) {
    return {p.view(prefix + ".W").data(), p.view(prefix + ".U").data(),
            p.view(prefix + ".b").data(), in, hid};
}

inline LstmGrads lstm_grads(std::vector<double>& g, const ParamLayout& l, const std::string& prefix) {
    return {g.data() + l.at(prefix + ".W").offset, g.data() + l.at(prefix + ".U").offset,
            g.data() + l.at(prefix + ".b").offset};
}

/// Runs a zero-initialised LSTM over the N x F window `x`, optionally in
/// reverse time order.
inline void run_sequence(const LstmWeights& w, std::span<const double> x, std::size_t steps,
                         bool reverse, std::vector<LstmStep>& cache) {
    cache.resize(steps);
    for (std::size_t s = 0; s < steps; ++s) {
        LstmStep& st = cache[s];
        st.reshape(w.in, w.hid);
        const std::size_t t = reverse ? steps - 1 - s : s;
        std::copy_n(x.begin() + t * w.in, w.in, st.x().begin());
        if (s == 0) {
            std::fill(st.h_prev().begin(), st.h_prev().end(), 0.0);
            std::fill(st.c_prev().begin(), st.c_prev().end(), 0.0);
        } else {
            std::ranges::copy(cache[s - 1].h(), st.h_prev().begin());
            std::ranges::copy(cache[s - 1].c(), st.c_prev().begin());
        }
        lstm_forward(w, st);
    }
}

/// Backpropagates from the final state through every step of `cache`.
/// On return dh/dc hold the gradient w.r.t. the initial state.
inline void backprop_sequence(const LstmWeights& w, const std::vector<LstmStep>& cache,
                              LstmGrads& g, std::vector<double>& dh, std::vector<double>& dc) {
    std::vector<double> dx(w.in), dhp(w.hid), dcp(w.hid), dz(4 * w.hid);
    for (std::size_t s = cache.size(); s-- > 0;) {
        lstm_backward(w, cache[s], dh, dc, g, dx, dhp, dcp, dz);
        dh.swap(dhp);
        dc.swap(dcp);
    }
}

inline void dense_forward(std::span<const double> W, std::span<const double> b,
                          std::span<const double> in, std::span<double> out) {
    const std::size_t D = in.size();
    for (std::size_t r = 0; r < out.size(); ++r) {
        double z = b[r];
        const double* wr = W.data() + r * D;
        for (std::size_t k = 0; k < D; ++k) z += wr[k] * in[k];
        out[r] = z;
    }
}

/// Accumulates head gradients and writes d(loss)/d(in) into `din`.
inline void dense_backward(std::span<const double> W, std::span<const double> in,
                           std::span<const double> dout, double* gW, double* gb,
                           std::span<double> din) {
    const std::size_t D = in.size();
    std::fill(din.begin(), din.end(), 0.0);
    for (std::size_t r = 0; r < dout.size(); ++r) {
        const double d = dout[r];
        gb[r] += d;
        double* gw = gW + r * D;
        const double* wr = W.data() + r * D;
        for (std::size_t k = 0; k < D; ++k) {
            gw[k] += d * in[k];
            din[k] += d * wr[k];
        }
    }
}

} // namespace detail

/// Batched forward pass over a B x N x F input. Fills `cache` for backward
/// when one is supplied.
inline Matrix forward(const NetSpec& spec, const NetParams& params, const Tensor3& batch,
                      ForwardCache* cache = nullptr) {
    if (batch.dim1() != spec.window || batch.dim2() != spec.input_features)
        throw ShapeError("forward: batch shape does not match NetSpec");
    if (params.values.size() != params.layout.total || params.layout.total != parameter_count(spec))
        throw ShapeError("forward: parameter vector does not match NetSpec");

    const std::size_t B = batch.dim0(), N = spec.window, F = spec.input_features;
    const std::size_t Hd = spec.hidden_units, H = spec.horizon;
    Matrix out(B, H);
    ForwardCache local;
    ForwardCache& c = cache ? *cache : local;
    c.valid = false;
    c.spec = spec;
    c.batch = B;
    c.samples.resize(B);

    const auto headW = params.view("head.W");
    const auto headb = params.view("head.b");

    for (std::size_t b = 0; b < B; ++b) {
        SampleCache& sc = c.samples[b];
        const auto x = batch.slab(b);
        auto y = out.row(b);
        switch (spec.kind) {
        case NetKind::LSTM: {
            auto w = detail::lstm_weights(params, "lstm", F, Hd);
            detail::run_sequence(w, x, N, false, sc.seq_a);
            sc.head_in.assign(sc.seq_a.back().h().begin(), sc.seq_a.back().h().end());
            detail::dense_forward(headW, headb, sc.head_in, y);
            break;
        }
        case NetKind::BDLSTM: {
            auto wf = detail::lstm_weights(params, "fwd", F, Hd);
            auto wb = detail::lstm_weights(params, "bwd", F, Hd);
            detail::run_sequence(wf, x, N, false, sc.seq_a);
            detail::run_sequence(wb, x, N, true, sc.seq_b);
            sc.head_in.resize(2 * Hd);
            std::ranges::copy(sc.seq_a.back().h(), sc.head_in.begin());
            std::ranges::copy(sc.seq_b.back().h(), sc.head_in.begin() + Hd);
            detail::dense_forward(headW, headb, sc.head_in, y);
            break;
        }
        case NetKind::EDLSTM: {
            auto we = detail::lstm_weights(params, "enc", F, Hd);
            auto wd = detail::lstm_weights(params, "dec", 1, Hd);
            detail::run_sequence(we, x, N, false, sc.seq_a);
            sc.seq_b.resize(H);
            double prev = 0.0;
            for (std::size_t k = 0; k < H; ++k) {
                LstmStep& st = sc.seq_b[k];
                st.reshape(1, Hd);
                st.x()[0] = prev;
                const LstmStep& from = k == 0 ? sc.seq_a.back() : sc.seq_b[k - 1];
                std::ranges::copy(from.h(), st.h_prev().begin());
                std::ranges::copy(from.c(), st.c_prev().begin());
                lstm_forward(wd, st);
                double v = 0.0;
                detail::dense_forward(headW, headb, st.h(), std::span<double>(&v, 1));
                y[k] = v;
                prev = v;
            }
            break;
        }
        case NetKind::CNN1D: {
            const std::size_t L = spec.conv_length(), P = spec.pooled_length();
            const auto K = params.view("conv.K");
            const auto kb = params.view("conv.b");
            const std::size_t KF = NetSpec::kKernel * F;
            sc.input.assign(x.begin(), x.end());
            sc.conv_pre.resize(L * Hd);
            for (std::size_t p = 0; p < L; ++p)
                for (std::size_t j = 0; j < Hd; ++j) {
                    double z = kb[j];
                    const double* kr = K.data() + j * KF;
                    const double* xp = x.data() + p * F; // rows p..p+2 are contiguous
                    for (std::size_t k = 0; k < KF; ++k) z += kr[k] * xp[k];
                    sc.conv_pre[p * Hd + j] = z;
                }
            sc.pool_arg.resize(P * Hd);
            sc.head_in.resize(P * Hd);
            for (std::size_t q = 0; q < P; ++q)
                for (std::size_t j = 0; j < Hd; ++j) {
                    std::size_t best = q * NetSpec::kPool;
                    double best_v = std::max(0.0, sc.conv_pre[best * Hd + j]);
                    for (std::size_t s = 1; s < NetSpec::kPool; ++s) {
                        const std::size_t pos = q * NetSpec::kPool + s;
                        const double v = std::max(0.0, sc.conv_pre[pos * Hd + j]);
                        if (v > best_v) {
                            best = pos;
                            best_v = v;
                        }
                    }
                    sc.pool_arg[q * Hd + j] = best;
                    sc.head_in[q * Hd + j] = best_v;
                }
            detail::dense_forward(headW, headb, sc.head_in, y);
            break;
        }
        case NetKind::Dense:
            sc.input.assign(x.begin(), x.end());
            detail::dense_forward(headW, headb, sc.input, y);
            break;
        }
    }
    c.valid = true;
    return out;
}

/// Exact gradient of the scalar loss w.r.t. every parameter, given the
/// gradient w.r.t. the predictions of the cached forward pass.
inline std::vector<double> backward(const NetSpec& spec, const NetParams& params,
                                    const ForwardCache& cache, const Matrix& loss_grad) {
    if (!cache.valid) throw Error("backward: missing forward cache");
    if (!(cache.spec == spec)) throw ShapeError("backward: cache was built for another NetSpec");
    if (loss_grad.rows() != cache.batch || loss_grad.cols() != spec.horizon)
        throw ShapeError("backward: loss gradient shape mismatch");

    const std::size_t F = spec.input_features, Hd = spec.hidden_units, H = spec.horizon;
    const auto& L = params.layout;
    std::vector<double> g(L.total, 0.0);
    const auto headW = params.view("head.W");
    double* gW = g.data() + L.at("head.W").offset;
    double* gb = g.data() + L.at("head.b").offset;

    for (std::size_t b = 0; b < cache.batch; ++b) {
        const SampleCache& sc = cache.samples[b];
        const auto dy = loss_grad.row(b);
        switch (spec.kind) {
        case NetKind::LSTM: {
            std::vector<double> dh(Hd), dc(Hd, 0.0);
            detail::dense_backward(headW, sc.head_in, dy, gW, gb, dh);
            auto w = detail::lstm_weights(params, "lstm", F, Hd);
            auto lg = detail::lstm_grads(g, L, "lstm");
            detail::backprop_sequence(w, sc.seq_a, lg, dh, dc);
            break;
        }
        case NetKind::BDLSTM: {
            std::vector<double> din(2 * Hd);
            detail::dense_backward(headW, sc.head_in, dy, gW, gb, din);
            std::vector<double> dh(din.begin(), din.begin() + Hd), dc(Hd, 0.0);
            auto wf = detail::lstm_weights(params, "fwd", F, Hd);
            auto gf = detail::lstm_grads(g, L, "fwd");
            detail::backprop_sequence(wf, sc.seq_a, gf, dh, dc);
            dh.assign(din.begin() + Hd, din.end());
            std::fill(dc.begin(), dc.end(), 0.0);
            auto wb = detail::lstm_weights(params, "bwd", F, Hd);
            auto gbw = detail::lstm_grads(g, L, "bwd");
            detail::backprop_sequence(wb, sc.seq_b, gbw, dh, dc);
            break;
        }
        case NetKind::EDLSTM: {
            auto we = detail::lstm_weights(params, "enc", F, Hd);
            auto wd = detail::lstm_weights(params, "dec", 1, Hd);
            auto ge = detail::lstm_grads(g, L, "enc");
            auto gd = detail::lstm_grads(g, L, "dec");
            std::vector<double> dh(Hd, 0.0), dc(Hd, 0.0), dhead(Hd), dhp(Hd), dcp(Hd), dz(4 * Hd);
            double dx_next = 0.0;
            for (std::size_t k = H; k-- > 0;) {
                // Output k feeds the loss directly and the decoder input at k+1.
                const double dyk = dy[k] + dx_next;
                detail::dense_backward(headW, sc.seq_b[k].h(), std::span<const double>(&dyk, 1),
                                       gW, gb, dhead);
                for (std::size_t u = 0; u < Hd; ++u) dh[u] += dhead[u];
                double dx = 0.0;
                lstm_backward(wd, sc.seq_b[k], dh, dc, gd, std::span<double>(&dx, 1), dhp, dcp, dz);
                dh.swap(dhp);
                dc.swap(dcp);
                dx_next = dx;
            }
            detail::backprop_sequence(we, sc.seq_a, ge, dh, dc);
            break;
        }
        case NetKind::CNN1D: {
            const std::size_t P = spec.pooled_length();
            const std::size_t KF = NetSpec::kKernel * F;
            std::vector<double> dpool(P * Hd);
            detail::dense_backward(headW, sc.head_in, dy, gW, gb, dpool);
            double* gK = g.data() + L.at("conv.K").offset;
            double* gkb = g.data() + L.at("conv.b").offset;
            for (std::size_t q = 0; q < P; ++q)
                for (std::size_t j = 0; j < Hd; ++j) {
                    const std::size_t pos = sc.pool_arg[q * Hd + j];
                    if (sc.conv_pre[pos * Hd + j] <= 0.0) continue;
                    const double d = dpool[q * Hd + j];
                    gkb[j] += d;
                    const double* xp = sc.input.data() + pos * F;
                    double* gk = gK + j * KF;
                    for (std::size_t k = 0; k < KF; ++k) gk[k] += d * xp[k];
                }
            break;
        }
        case NetKind::Dense: {
            std::vector<double> din(sc.input.size());
            detail::dense_backward(headW, sc.input, dy, gW, gb, din);
            break;
        }
        }
    }
    return g;
}

/// Forecast for a single N x F window.
inline std::vector<double> predict_window(const NetSpec& spec, const NetParams& params,
                                          std::span<const double> window) {
    Tensor3 one(1, spec.window, spec.input_features);
    if (window.size() != one.data().size()) throw ShapeError("predict_window: window size mismatch");
    std::ranges::copy(window, one.data().begin());
    const Matrix y = forward(spec, params, one);
    return y.data();
}

} // namespace hydroq::nn
