#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hydroq/error.hpp"

namespace hydroq::nn {

/// Forecaster architectures. Dense is a single affine map from the flattened
/// window to the horizon; it backs the static branch of the stacked ensemble.
enum class NetKind { LSTM, BDLSTM, EDLSTM, CNN1D, Dense };

inline const char* to_string(NetKind k) {
    switch (k) {
    case NetKind::LSTM: return "LSTM";
    case NetKind::BDLSTM: return "BD-LSTM";
    case NetKind::EDLSTM: return "ED-LSTM";
    case NetKind::CNN1D: return "CNN1D";
    case NetKind::Dense: return "DENSE";
    }
    return "?";
}

inline NetKind parse_net_kind(std::string_view s) {
    if (s == "LSTM") return NetKind::LSTM;
    if (s == "BD-LSTM" || s == "BDLSTM") return NetKind::BDLSTM;
    if (s == "ED-LSTM" || s == "EDLSTM") return NetKind::EDLSTM;
    if (s == "CNN1D" || s == "CNN") return NetKind::CNN1D;
    if (s == "DENSE") return NetKind::Dense;
    throw Error("unknown model kind '" + std::string(s) + "'");
}

struct NetSpec {
    NetKind kind = NetKind::LSTM;
    std::size_t input_features = 6;
    std::size_t window = 5;
    std::size_t horizon = 5;
    std::size_t hidden_units = 20; // LSTM cells, or CNN filters
    std::size_t layers = 1;

    static constexpr std::size_t kKernel = 3;
    static constexpr std::size_t kPool = 2;

    std::size_t conv_length() const { return window - kKernel + 1; }
    std::size_t pooled_length() const { return conv_length() / kPool; }

    void validate() const {
        if (hidden_units == 0) throw Error("NetSpec: hidden_units must be > 0");
        if (horizon == 0) throw Error("NetSpec: horizon must be >= 1");
        if (window == 0) throw Error("NetSpec: window must be >= 1");
        if (input_features == 0) throw Error("NetSpec: input_features must be >= 1");
        if (layers != 1) throw Error("NetSpec: only single-layer networks are supported");
        if (kind == NetKind::CNN1D && window < kKernel + kPool - 1)
            throw Error("NetSpec: CNN1D needs window >= 4");
    }

    bool operator==(const NetSpec&) const = default;
};

/// A named 2-D block inside the flat parameter vector.
struct TensorSlot {
    std::string name;
    std::size_t offset = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    double fan_in = 1.0;

    std::size_t size() const noexcept { return rows * cols; }
};

struct ParamLayout {
    std::vector<TensorSlot> slots;
    std::size_t total = 0;

    const TensorSlot& at(std::string_view name) const {
        for (const auto& s : slots)
            if (s.name == name) return s;
        throw Error("no parameter tensor named " + std::string(name));
    }

    void add(std::string name, std::size_t rows, std::size_t cols, double fan_in) {
        slots.push_back({std::move(name), total, rows, cols, fan_in});
        total += rows * cols;
    }
};

namespace detail {

inline void add_lstm(ParamLayout& l, const std::string& prefix, std::size_t in, std::size_t hid) {
    const double fan = double(in + hid);
    l.add(prefix + ".W", 4 * hid, in, fan);
    l.add(prefix + ".U", 4 * hid, hid, fan);
    l.add(prefix + ".b", 4 * hid, 1, fan);
}

} // namespace detail

inline ParamLayout make_layout(const NetSpec& spec) {
    spec.validate();
    ParamLayout l;
    const std::size_t F = spec.input_features, Hd = spec.hidden_units, H = spec.horizon;
    switch (spec.kind) {
    case NetKind::LSTM:
        detail::add_lstm(l, "lstm", F, Hd);
        l.add("head.W", H, Hd, double(Hd));
        l.add("head.b", H, 1, double(Hd));
        break;
    case NetKind::BDLSTM:
        detail::add_lstm(l, "fwd", F, Hd);
        detail::add_lstm(l, "bwd", F, Hd);
        l.add("head.W", H, 2 * Hd, double(2 * Hd));
        l.add("head.b", H, 1, double(2 * Hd));
        break;
    case NetKind::EDLSTM:
        detail::add_lstm(l, "enc", F, Hd);
        detail::add_lstm(l, "dec", 1, Hd);
        l.add("head.W", 1, Hd, double(Hd));
        l.add("head.b", 1, 1, double(Hd));
        break;
    case NetKind::CNN1D: {
        const double fan = double(NetSpec::kKernel * F);
        l.add("conv.K", Hd, NetSpec::kKernel * F, fan);
        l.add("conv.b", Hd, 1, fan);
        const std::size_t flat = spec.pooled_length() * Hd;
        l.add("head.W", H, flat, double(flat));
        l.add("head.b", H, 1, double(flat));
        break;
    }
    case NetKind::Dense: {
        const std::size_t flat = spec.window * F;
        l.add("head.W", H, flat, double(flat));
        l.add("head.b", H, 1, double(flat));
        break;
    }
    }
    return l;
}

inline std::size_t parameter_count(const NetSpec& spec) { return make_layout(spec).total; }

struct NetParams {
    ParamLayout layout;
    std::vector<double> values;

    std::span<double> view(std::string_view name) {
        const auto& s = layout.at(name);
        return {values.data() + s.offset, s.size()};
    }
    std::span<const double> view(std::string_view name) const {
        const auto& s = layout.at(name);
        return {values.data() + s.offset, s.size()};
    }
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights; LSTM forget-gate biases
/// start at 1.
inline NetParams init_params(const NetSpec& spec, std::uint64_t seed) {
    NetParams p;
    p.layout = make_layout(spec);
    p.values.assign(p.layout.total, 0.0);
    std::mt19937_64 rng(seed);
    for (const auto& slot : p.layout.slots) {
        const double bound = 1.0 / std::sqrt(slot.fan_in);
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (std::size_t i = 0; i < slot.size(); ++i) p.values[slot.offset + i] = dist(rng);
        const bool lstm_bias = slot.name.size() > 2 && slot.name.ends_with(".b") &&
                               slot.name != "head.b" && slot.name != "conv.b";
        if (lstm_bias) {
            const std::size_t hid = slot.rows / 4;
            for (std::size_t i = hid; i < 2 * hid; ++i) p.values[slot.offset + i] = 1.0;
        }
    }
    return p;
}

} // namespace hydroq::nn
