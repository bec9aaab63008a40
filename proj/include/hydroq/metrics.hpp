#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hydroq/error.hpp"
#include "hydroq/tensor.hpp"

namespace hydroq {

/// SER percent levels, in the column order of the result tables.
inline constexpr std::array<int, 7> kSerLevels = {1, 2, 5, 10, 25, 50, 75};

struct RmseResult {
    std::vector<double> per_step; // one per horizon step
    double aggregate = 0.0;       // mean of per_step
};

inline RmseResult rmse(const Matrix& pred, const Matrix& obs) {
    require_same_shape(pred, obs, "rmse");
    if (obs.rows() == 0 || obs.cols() == 0) throw Error("rmse: empty input");
    RmseResult r;
    for (std::size_t h = 0; h < obs.cols(); ++h) {
        double ss = 0.0;
        for (std::size_t m = 0; m < obs.rows(); ++m) {
            const double e = pred(m, h) - obs(m, h);
            ss += e * e;
        }
        r.per_step.push_back(std::sqrt(ss / double(obs.rows())));
    }
    double sum = 0.0;
    for (double v : r.per_step) sum += v;
    r.aggregate = sum / double(r.per_step.size());
    return r;
}

/// RMSE over every element of the listed rows.
inline double flattened_rmse(const Matrix& pred, const Matrix& obs,
                             std::span<const std::size_t> rows) {
    double ss = 0.0;
    for (std::size_t m : rows)
        for (std::size_t h = 0; h < obs.cols(); ++h) {
            const double e = pred(m, h) - obs(m, h);
            ss += e * e;
        }
    return std::sqrt(ss / double(rows.size() * obs.cols()));
}

/// Nash-Sutcliffe efficiency.
inline double nse(std::span<const double> pred, std::span<const double> obs) {
    if (pred.size() != obs.size()) throw ShapeError("nse: length mismatch");
    if (obs.empty()) throw Error("nse: empty input");
    double mean = 0.0;
    for (double o : obs) mean += o;
    mean /= double(obs.size());
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < obs.size(); ++k) {
        num += (obs[k] - pred[k]) * (obs[k] - pred[k]);
        den += (obs[k] - mean) * (obs[k] - mean);
    }
    if (den == 0.0) throw Error("NSE undefined: observations have zero variance");
    return 1.0 - num / den;
}

/// Linear interpolation between order statistics (level in [0,1]).
inline double empirical_quantile(std::vector<double> values, double level) {
    if (values.empty()) throw Error("empirical_quantile: empty input");
    std::sort(values.begin(), values.end());
    const double pos = std::clamp(level, 0.0, 1.0) * double(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double w = pos - double(lo);
    return values[lo] + w * (values[hi] - values[lo]);
}

/// Samples whose observed horizon maximum reaches the top-i% threshold of
/// all observed values.
inline std::vector<std::size_t> ser_qualifying(const Matrix& obs, double i_percent) {
    if (!(i_percent > 0.0 && i_percent <= 100.0))
        throw Error("ser: percent level must lie in (0,100]");
    const double threshold = empirical_quantile(obs.data(), 1.0 - i_percent / 100.0);
    std::vector<std::size_t> rows;
    for (std::size_t m = 0; m < obs.rows(); ++m) {
        auto r = obs.row(m);
        if (*std::max_element(r.begin(), r.end()) >= threshold) rows.push_back(m);
    }
    return rows;
}

/// RMSE over the qualifying windows; nullopt when none qualify.
inline std::optional<double> ser(const Matrix& pred, const Matrix& obs, double i_percent) {
    require_same_shape(pred, obs, "ser");
    if (obs.rows() == 0) throw Error("ser: empty input");
    const auto rows = ser_qualifying(obs, i_percent);
    if (rows.empty()) return std::nullopt;
    return flattened_rmse(pred, obs, rows);
}

enum class MetricSpace { Scaled, Original };

inline const char* to_string(MetricSpace s) { return s == MetricSpace::Scaled ? "scaled" : "original"; }

struct ForecastReport {
    std::string strategy;
    std::string model;
    std::string station;
    std::uint64_t seed = 0;
    MetricSpace space = MetricSpace::Scaled;
    Matrix predictions;  // M x H
    Matrix observations; // M x H
    std::vector<double> rmse_step;
    std::vector<double> nse_step; // NaN where undefined
    std::array<double, 7> ser_table{}; // NaN where undefined
    double rmse_mean = 0.0;
};

inline ForecastReport make_report(Matrix pred, Matrix obs) {
    ForecastReport r;
    const auto rr = rmse(pred, obs);
    r.rmse_step = rr.per_step;
    r.rmse_mean = rr.aggregate;
    for (std::size_t h = 0; h < obs.cols(); ++h) {
        std::vector<double> p(obs.rows()), o(obs.rows());
        for (std::size_t m = 0; m < obs.rows(); ++m) {
            p[m] = pred(m, h);
            o[m] = obs(m, h);
        }
        try {
            r.nse_step.push_back(nse(p, o));
        } catch (const Error&) {
            r.nse_step.push_back(std::numeric_limits<double>::quiet_NaN());
        }
    }
    for (std::size_t k = 0; k < kSerLevels.size(); ++k)
        r.ser_table[k] = ser(pred, obs, kSerLevels[k]).value_or(std::numeric_limits<double>::quiet_NaN());
    r.predictions = std::move(pred);
    r.observations = std::move(obs);
    return r;
}

/// Headline metrics in table order: SER1..SER75, RMSE, then NSE per step.
inline std::vector<std::pair<std::string, double>> headline_metrics(const ForecastReport& r) {
    std::vector<std::pair<std::string, double>> out;
    for (std::size_t k = 0; k < kSerLevels.size(); ++k)
        out.emplace_back("SER" + std::to_string(kSerLevels[k]), r.ser_table[k]);
    out.emplace_back("RMSE", r.rmse_mean);
    for (std::size_t h = 0; h < r.nse_step.size(); ++h)
        out.emplace_back("NSE" + std::to_string(h + 1), r.nse_step[h]);
    return out;
}

struct MetricSummary {
    double mean = 0.0;
    double std = 0.0; // sample standard deviation
    std::size_t runs = 0;
    bool single_run = false;
};

/// Mean and sample std over runs, skipping undefined (NaN) entries.
inline MetricSummary summarize(std::span<const double> values) {
    MetricSummary s;
    double sum = 0.0;
    for (double v : values)
        if (!std::isnan(v)) {
            sum += v;
            ++s.runs;
        }
    if (s.runs == 0) {
        s.mean = s.std = std::numeric_limits<double>::quiet_NaN();
        return s;
    }
    s.mean = sum / double(s.runs);
    if (s.runs == 1) {
        s.single_run = true;
        return s;
    }
    double ss = 0.0;
    for (double v : values)
        if (!std::isnan(v)) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / double(s.runs - 1));
    return s;
}

/// Per-metric summary over reports, in headline_metrics order.
inline std::vector<std::pair<std::string, MetricSummary>> summarize(
    std::span<const ForecastReport> reports) {
    std::vector<std::pair<std::string, MetricSummary>> out;
    if (reports.empty()) return out;
    const auto names = headline_metrics(reports.front());
    for (std::size_t k = 0; k < names.size(); ++k) {
        std::vector<double> vals;
        for (const auto& r : reports) vals.push_back(headline_metrics(r)[k].second);
        out.emplace_back(names[k].first, summarize(std::span<const double>(vals)));
    }
    return out;
}

} // namespace hydroq
