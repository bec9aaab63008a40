#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "hydroq/date.hpp"
#include "hydroq/error.hpp"
#include "hydroq/tensor.hpp"

namespace hydroq {

/// One station's aligned daily record. Missing cells are NaN until
/// fill_missing has run.
struct CatchmentSeries {
    std::string station_id;
    std::vector<Date> dates;
    std::vector<double> precip;     // mm/day
    std::vector<double> tmin;       // degC
    std::vector<double> tmax;       // degC
    std::vector<double> streamflow; // mm/day

    std::size_t size() const noexcept { return dates.size(); }
    bool operator==(const CatchmentSeries&) const = default;
};

// Row order of the model feature matrix. Streamflow is row 0 and is also the
// prediction target.
enum FeatureRow : std::size_t {
    kFlowRow = 0,
    kPrecipRow = 1,
    kTminRow = 2,
    kTmaxRow = 3,
    kSinRow = 4,
    kCosRow = 5,
    kSeriesFeatures = 6,
};

struct ScalerParams {
    std::vector<double> min;
    std::vector<double> max;
    std::vector<bool> degenerate;

    std::size_t features() const noexcept { return min.size(); }
    bool operator==(const ScalerParams&) const = default;
};

/// Per-row min/max over columns [0, train_boundary).
inline ScalerParams fit_minmax(const Matrix& series, std::size_t train_boundary) {
    if (series.rows() == 0 || series.cols() == 0 || train_boundary == 0)
        throw Error("empty series");
    if (train_boundary > series.cols())
        throw Error("fit_minmax: train boundary beyond series end");
    ScalerParams p;
    for (std::size_t f = 0; f < series.rows(); ++f) {
        double lo = series(f, 0), hi = series(f, 0);
        for (std::size_t t = 1; t < train_boundary; ++t) {
            lo = std::min(lo, series(f, t));
            hi = std::max(hi, series(f, t));
        }
        p.min.push_back(lo);
        p.max.push_back(hi);
        p.degenerate.push_back(lo == hi);
    }
    return p;
}

inline double scale_value(double x, const ScalerParams& p, std::size_t f) {
    if (p.degenerate[f]) return 0.0;
    return (x - p.min[f]) / (p.max[f] - p.min[f]);
}

inline double invert_value(double x, const ScalerParams& p, std::size_t f) {
    if (p.degenerate[f]) return p.min[f];
    return x * (p.max[f] - p.min[f]) + p.min[f];
}

/// Values outside the training range map outside [0,1]; nothing is clipped.
inline Matrix apply_scale(const Matrix& series, const ScalerParams& p) {
    if (series.rows() != p.features()) throw ShapeError("apply_scale: feature count mismatch");
    Matrix out(series.rows(), series.cols());
    for (std::size_t f = 0; f < series.rows(); ++f)
        for (std::size_t t = 0; t < series.cols(); ++t)
            out(f, t) = scale_value(series(f, t), p, f);
    return out;
}

inline Matrix invert_scale(const Matrix& scaled, const ScalerParams& p) {
    if (scaled.rows() != p.features()) throw ShapeError("invert_scale: feature count mismatch");
    Matrix out(scaled.rows(), scaled.cols());
    for (std::size_t f = 0; f < scaled.rows(); ++f)
        for (std::size_t t = 0; t < scaled.cols(); ++t)
            out(f, t) = invert_value(scaled(f, t), p, f);
    return out;
}

/// Position within the year as a point on the unit circle. Normalized by the
/// actual year length so Dec 31 is always just short of a full turn.
inline std::pair<double, double> seasonal_encode(Date date) {
    const double angle =
        2.0 * std::numbers::pi * double(day_of_year(date)) / double(year_length(date));
    return {std::sin(angle), std::cos(angle)};
}

/// F x T model input matrix in FeatureRow order.
inline Matrix feature_matrix(const CatchmentSeries& s) {
    const std::size_t T = s.size();
    Matrix m(kSeriesFeatures, T);
    for (std::size_t t = 0; t < T; ++t) {
        m(kFlowRow, t) = s.streamflow[t];
        m(kPrecipRow, t) = s.precip[t];
        m(kTminRow, t) = s.tmin[t];
        m(kTmaxRow, t) = s.tmax[t];
        auto [sn, cs] = seasonal_encode(s.dates[t]);
        m(kSinRow, t) = sn;
        m(kCosRow, t) = cs;
    }
    return m;
}

/// Supervised samples cut from a series by a unit-delay sliding window.
struct WindowedDataset {
    Tensor3 inputs;                      // M x N x F
    Matrix targets;                      // M x H
    std::vector<std::size_t> origin_index; // first input day of each sample
    std::vector<std::size_t> station;    // source station slot of each sample
    std::size_t window = 0;              // N
    std::size_t horizon = 0;             // H
    std::size_t source_length = 0;       // T

    std::size_t size() const noexcept { return origin_index.size(); }
    std::size_t features() const noexcept { return inputs.dim2(); }
    bool operator==(const WindowedDataset&) const = default;
};

/// Sample m covers input days [m, m+N) for every row of `series` and targets
/// row `target_row` on days [m+N, m+N+H).
inline WindowedDataset embed(const Matrix& series, std::size_t window, std::size_t horizon,
                             std::size_t target_row = kFlowRow) {
    if (window == 0 || horizon == 0) throw Error("embed: window and horizon must be >= 1");
    const std::size_t T = series.cols();
    const std::size_t F = series.rows();
    if (T < window + horizon) throw Error("series too short to embed");
    if (target_row >= F) throw ShapeError("embed: target row out of range");
    const std::size_t M = T - window - horizon + 1;

    WindowedDataset ds;
    ds.inputs = Tensor3(M, window, F);
    ds.targets = Matrix(M, horizon);
    ds.origin_index.resize(M);
    ds.station.assign(M, 0);
    ds.window = window;
    ds.horizon = horizon;
    ds.source_length = T;
    for (std::size_t m = 0; m < M; ++m) {
        ds.origin_index[m] = m;
        for (std::size_t n = 0; n < window; ++n)
            for (std::size_t f = 0; f < F; ++f) ds.inputs(m, n, f) = series(f, m + n);
        for (std::size_t h = 0; h < horizon; ++h)
            ds.targets(m, h) = series(target_row, m + window + h);
    }
    return ds;
}

/// Copy of the listed samples, in the order given.
inline WindowedDataset select_samples(const WindowedDataset& ds,
                                      const std::vector<std::size_t>& rows) {
    WindowedDataset out;
    const std::size_t N = ds.window, F = ds.features(), H = ds.horizon;
    out.inputs = Tensor3(rows.size(), N, F);
    out.targets = Matrix(rows.size(), H);
    out.window = N;
    out.horizon = H;
    out.source_length = ds.source_length;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const std::size_t r = rows[i];
        auto src = ds.inputs.slab(r);
        std::copy(src.begin(), src.end(), out.inputs.slab(i).begin());
        auto trg = ds.targets.row(r);
        std::copy(trg.begin(), trg.end(), out.targets.row(i).begin());
        out.origin_index.push_back(ds.origin_index[r]);
        out.station.push_back(ds.station[r]);
    }
    return out;
}

struct SplitSpec {
    double train_fraction = 0.6;
    /// When false, test samples may draw input context from the last training
    /// days as long as every target day is at or after the boundary.
    bool disjoint = true;

    std::size_t boundary_index(std::size_t T) const {
        if (!(train_fraction > 0.0 && train_fraction < 1.0))
            throw Error("train_fraction must lie in (0,1)");
        return static_cast<std::size_t>(std::floor(train_fraction * double(T) + 1e-9));
    }
};

struct SplitResult {
    WindowedDataset train;
    WindowedDataset test;
    std::size_t boundary = 0;
    std::size_t dropped = 0;
};

/// Row indices of the train and test samples. Samples wholly before the
/// boundary train, samples wholly at/after it test, straddlers are dropped.
struct SplitRows {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
    std::size_t boundary = 0;
    std::size_t dropped = 0;
};

inline SplitRows split_rows(const WindowedDataset& ds, const SplitSpec& spec) {
    if (ds.size() == 0) throw Error("chrono_split: empty dataset");
    SplitRows res;
    res.boundary = spec.boundary_index(ds.source_length);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const std::size_t start = ds.origin_index[i];
        const std::size_t end = start + ds.window + ds.horizon; // exclusive
        const std::size_t test_from = spec.disjoint ? start : start + ds.window;
        if (end <= res.boundary)
            res.train.push_back(i);
        else if (test_from >= res.boundary)
            res.test.push_back(i);
        else
            ++res.dropped;
    }
    if (res.train.empty()) throw Error("empty train");
    if (res.test.empty()) throw Error("empty test");
    return res;
}

inline SplitResult chrono_split(const WindowedDataset& ds, const SplitSpec& spec) {
    const SplitRows rows = split_rows(ds, spec);
    return {select_samples(ds, rows.train), select_samples(ds, rows.test), rows.boundary, rows.dropped};
}

} // namespace hydroq
