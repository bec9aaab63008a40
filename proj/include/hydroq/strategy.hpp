#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hydroq/camels.hpp"
#include "hydroq/linalg.hpp"
#include "hydroq/neural/network.hpp"
#include "hydroq/series.hpp"

namespace hydroq {

enum class StrategyKind { Individual, BatchIndicator, BatchStatic, StackedEnsemble };

inline const char* to_string(StrategyKind k) {
    switch (k) {
    case StrategyKind::Individual: return "INDIVIDUAL";
    case StrategyKind::BatchIndicator: return "BATCH_INDICATOR";
    case StrategyKind::BatchStatic: return "BATCH_STATIC";
    case StrategyKind::StackedEnsemble: return "STACKED_ENSEMBLE";
    }
    return "?";
}

inline StrategyKind parse_strategy(std::string_view s) {
    if (s == "INDIVIDUAL") return StrategyKind::Individual;
    if (s == "BATCH_INDICATOR") return StrategyKind::BatchIndicator;
    if (s == "BATCH_STATIC") return StrategyKind::BatchStatic;
    if (s == "STACKED_ENSEMBLE") return StrategyKind::StackedEnsemble;
    throw Error("unknown strategy '" + std::string(s) + "'");
}

enum class IndicatorEncoding { OneHot, Integer };

/// One station after scaling and embedding.
struct StationData {
    std::string station_id;
    ScalerParams scaler;     // fitted on training days only
    Matrix scaled;           // kSeriesFeatures x T
    WindowedDataset dataset; // every window, unsplit
};

/// A region's stations in sorted-id order, scaled and embedded with a shared
/// train/test boundary.
struct PreparedRegion {
    std::vector<StationData> stations;
    std::map<std::string, StaticAttributes> statics;
    std::vector<Date> dates;
    SplitSpec split;
    std::size_t boundary = 0;
    std::size_t window = 0;
    std::size_t horizon = 0;
    std::vector<Rejection> rejections;
};

inline PreparedRegion prepare_region(const RegionBundle& region, std::size_t window,
                                     std::size_t horizon, const SplitSpec& split = {}) {
    PreparedRegion pr;
    pr.statics = region.statics;
    pr.split = split;
    pr.window = window;
    pr.horizon = horizon;
    if (region.stations.empty()) throw Error("prepare_region: region has no stations");
    pr.dates = region.stations.front().dates;
    pr.boundary = split.boundary_index(pr.dates.size());
    for (const auto& s : region.stations) {
        const Matrix raw = feature_matrix(s);
        try {
            StationData sd;
            sd.station_id = s.station_id;
            sd.scaler = fit_minmax(raw, pr.boundary);
            sd.scaled = apply_scale(raw, sd.scaler);
            sd.dataset = embed(sd.scaled, window, horizon);
            pr.stations.push_back(std::move(sd));
        } catch (const Error& e) {
            pr.rejections.push_back({s.station_id, RejectReason::TooShort, e.what()});
        }
    }
    std::sort(pr.stations.begin(), pr.stations.end(),
              [](const auto& a, const auto& b) { return a.station_id < b.station_id; });
    return pr;
}

/// Stacks datasets sample-wise; station slot of dataset k becomes k.
inline WindowedDataset concat_datasets(const std::vector<const WindowedDataset*>& parts) {
    if (parts.empty()) throw Error("concat_datasets: nothing to concatenate");
    const auto& first = *parts.front();
    std::size_t M = 0;
    for (const auto* p : parts) {
        if (p->window != first.window || p->horizon != first.horizon ||
            p->features() != first.features())
            throw ShapeError("concat_datasets: incompatible datasets");
        M += p->size();
    }
    WindowedDataset out;
    out.window = first.window;
    out.horizon = first.horizon;
    out.source_length = first.source_length;
    out.inputs = Tensor3(M, first.window, first.features());
    out.targets = Matrix(M, first.horizon);
    std::size_t row = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto& p = *parts[k];
        std::ranges::copy(p.inputs.data(), out.inputs.slab(row).begin());
        std::ranges::copy(p.targets.data(), out.targets.row(row).begin());
        for (std::size_t m = 0; m < p.size(); ++m) {
            out.origin_index.push_back(p.origin_index[m]);
            out.station.push_back(k);
        }
        row += p.size();
    }
    return out;
}

/// Appends `extra` (one row per station slot) to every timestep of every sample.
inline WindowedDataset append_station_columns(const WindowedDataset& ds, const Matrix& extra) {
    const std::size_t M = ds.size(), N = ds.window, F = ds.features(), E = extra.cols();
    WindowedDataset out = ds;
    out.inputs = Tensor3(M, N, F + E);
    for (std::size_t m = 0; m < M; ++m) {
        const auto add = extra.row(ds.station[m]);
        for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t f = 0; f < F; ++f) out.inputs(m, n, f) = ds.inputs(m, n, f);
            for (std::size_t e = 0; e < E; ++e) out.inputs(m, n, F + e) = add[e];
        }
    }
    return out;
}

inline std::vector<std::pair<std::string, WindowedDataset>> build_individual(const PreparedRegion& pr) {
    std::vector<std::pair<std::string, WindowedDataset>> out;
    for (const auto& s : pr.stations) out.emplace_back(s.station_id, s.dataset);
    return out;
}

/// All stations' windows with the station identity appended at every step.
inline WindowedDataset build_batch_indicator(const PreparedRegion& pr,
                                             IndicatorEncoding enc = IndicatorEncoding::OneHot) {
    std::vector<const WindowedDataset*> parts;
    for (const auto& s : pr.stations) parts.push_back(&s.dataset);
    const WindowedDataset all = concat_datasets(parts);
    const std::size_t S = pr.stations.size();
    Matrix code;
    if (enc == IndicatorEncoding::OneHot) {
        code = Matrix(S, S);
        for (std::size_t k = 0; k < S; ++k) code(k, k) = 1.0;
    } else {
        code = Matrix(S, 1);
        for (std::size_t k = 0; k < S; ++k) code(k, 0) = S > 1 ? double(k) / double(S - 1) : 0.0;
    }
    return append_station_columns(all, code);
}

/// S x 7 static attributes, min-max scaled across the region's stations.
inline Matrix scaled_statics(const PreparedRegion& pr) {
    const std::size_t S = pr.stations.size();
    Matrix raw(7, S);
    for (std::size_t k = 0; k < S; ++k) {
        auto it = pr.statics.find(pr.stations[k].station_id);
        if (it == pr.statics.end())
            throw Error("missing statics for station " + pr.stations[k].station_id);
        const auto v = it->second.values();
        for (std::size_t a = 0; a < 7; ++a) raw(a, k) = v[a];
    }
    const Matrix scaled = apply_scale(raw, fit_minmax(raw, S));
    Matrix out(S, 7);
    for (std::size_t k = 0; k < S; ++k)
        for (std::size_t a = 0; a < 7; ++a) out(k, a) = scaled(a, k);
    return out;
}

/// All stations' windows with the scaled static attributes appended at every step.
inline WindowedDataset build_batch_static(const PreparedRegion& pr) {
    const Matrix statics = scaled_statics(pr);
    std::vector<const WindowedDataset*> parts;
    for (const auto& s : pr.stations) parts.push_back(&s.dataset);
    return append_station_columns(concat_datasets(parts), statics);
}

/// Inputs of the two stacked-ensemble base models, row-aligned.
struct StackedInputs {
    WindowedDataset temporal; // N x 6 forcing windows
    WindowedDataset statics;  // 1 x 7 static vector per sample
};

inline StackedInputs build_stacked_inputs(const PreparedRegion& pr) {
    const Matrix statics = scaled_statics(pr);
    std::vector<const WindowedDataset*> parts;
    for (const auto& s : pr.stations) parts.push_back(&s.dataset);
    StackedInputs in;
    in.temporal = concat_datasets(parts);
    in.statics = in.temporal;
    in.statics.window = 1;
    in.statics.inputs = Tensor3(in.temporal.size(), 1, 7);
    for (std::size_t m = 0; m < in.temporal.size(); ++m)
        for (std::size_t a = 0; a < 7; ++a) in.statics.inputs(m, 0, a) = statics(in.temporal.station[m], a);
    return in;
}

/// Per-step affine map from [temporal forecast | static forecast | 1] to the
/// final forecast; H x (2H+1) coefficients.
struct EnsembleCombiner {
    Matrix coef;

    std::size_t horizon() const noexcept { return coef.rows(); }
};

inline constexpr double kStackRidge = 1e-8;

/// Least-squares fit of the combiner on training forecasts.
inline EnsembleCombiner fit_combiner(const Matrix& temporal, const Matrix& statics,
                                     const Matrix& targets) {
    require_same_shape(temporal, targets, "fit_combiner");
    require_same_shape(statics, targets, "fit_combiner");
    const std::size_t M = targets.rows(), H = targets.cols();
    Matrix X(M, 2 * H + 1);
    for (std::size_t m = 0; m < M; ++m) {
        for (std::size_t h = 0; h < H; ++h) {
            X(m, h) = temporal(m, h);
            X(m, H + h) = statics(m, h);
        }
        X(m, 2 * H) = 1.0;
    }
    EnsembleCombiner c{Matrix(H, 2 * H + 1)};
    std::vector<double> y(M);
    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t m = 0; m < M; ++m) y[m] = targets(m, h);
        // Escalate the ridge only if rounding defeats the factorisation.
        std::vector<double> w;
        for (double ridge = kStackRidge;; ridge *= 100.0) {
            try {
                w = ridge_least_squares(X, y, ridge);
                break;
            } catch (const Error&) {
                if (ridge > 1.0) throw;
            }
        }
        std::ranges::copy(w, c.coef.row(h).begin());
    }
    return c;
}

inline std::vector<double> predict_stacked(const EnsembleCombiner& c, std::span<const double> temporal,
                                           std::span<const double> statics) {
    const std::size_t H = c.horizon();
    if (temporal.size() != H || statics.size() != H) throw ShapeError("predict_stacked: size mismatch");
    std::vector<double> out(H);
    for (std::size_t h = 0; h < H; ++h) {
        auto w = c.coef.row(h);
        double v = w[2 * H];
        for (std::size_t k = 0; k < H; ++k) v += w[k] * temporal[k] + w[H + k] * statics[k];
        out[h] = v;
    }
    return out;
}

inline Matrix predict_stacked(const EnsembleCombiner& c, const Matrix& temporal, const Matrix& statics) {
    require_same_shape(temporal, statics, "predict_stacked");
    Matrix out(temporal.rows(), temporal.cols());
    for (std::size_t m = 0; m < temporal.rows(); ++m)
        std::ranges::copy(predict_stacked(c, temporal.row(m), statics.row(m)), out.row(m).begin());
    return out;
}

/// Runs both trained base models on their inputs and fits the combiner.
inline EnsembleCombiner fit_stacked_ensemble(const nn::NetSpec& temporal_spec,
                                             const nn::NetParams& temporal_params,
                                             const nn::NetSpec& static_spec,
                                             const nn::NetParams& static_params,
                                             const StackedInputs& train) {
    const Matrix tf = nn::forward(temporal_spec, temporal_params, train.temporal.inputs);
    const Matrix sf = nn::forward(static_spec, static_params, train.statics.inputs);
    return fit_combiner(tf, sf, train.temporal.targets);
}

} // namespace hydroq
