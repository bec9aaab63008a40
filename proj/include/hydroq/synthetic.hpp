#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "hydroq/camels.hpp"
#include "hydroq/date.hpp"
#include "hydroq/error.hpp"
#include "hydroq/series.hpp"

namespace hydroq::synth {

/// Parameters of the seeded rainfall-runoff generator.
struct SynthSpec {
    std::uint64_t seed = 1;
    std::size_t length = 4000;        // days
    double storms_per_year = 40.0;    // compound-Poisson rate
    double pareto_tail = 1.8;         // tail index of storm depths, > 1
    double pareto_scale = 5.0;        // minimum storm depth, mm
    double recession = 0.9;           // linear reservoir constant k per day
    double baseflow = 0.2;            // mm/day
    double temp_mean = 18.0;          // degC
    double temp_amplitude = 7.0;      // degC
    double initial_storage = 0.0;     // mm
    Date start = make_date(1990, 1, 1);
    std::string station_id = "SYN000";

    void validate() const {
        if (!(recession > 0.0 && recession < 1.0)) throw Error("SynthSpec: recession must lie in (0,1)");
        if (storms_per_year < 0.0) throw Error("SynthSpec: storm rate must be >= 0");
        if (!(pareto_tail > 1.0)) throw Error("SynthSpec: Pareto tail index must be > 1");
        if (!(pareto_scale > 0.0)) throw Error("SynthSpec: Pareto scale must be > 0");
        if (baseflow < 0.0 || initial_storage < 0.0) throw Error("SynthSpec: negative storage or baseflow");
        if (length == 0) throw Error("SynthSpec: length must be >= 1");
    }
};

/// Storms arrive as a daily Poisson count with Pareto depths. Storage follows
/// S[t+1] = k*S[t] + P[t] and flow[t] = (1-k)*S[t] + baseflow, so rain shows
/// up in the flow one day later.
inline CatchmentSeries generate(const SynthSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::poisson_distribution<int> storms(spec.storms_per_year / 365.25);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);

    CatchmentSeries s;
    s.station_id = spec.station_id;
    double storage = spec.initial_storage;
    const double k = spec.recession;
    for (std::size_t t = 0; t < spec.length; ++t) {
        const Date d = spec.start + std::chrono::days{static_cast<long>(t)};
        s.dates.push_back(d);
        double p = 0.0;
        const int n = spec.storms_per_year > 0.0 ? storms(rng) : 0;
        for (int j = 0; j < n; ++j)
            p += spec.pareto_scale * std::pow(1.0 - unit(rng), -1.0 / spec.pareto_tail);
        const double angle = 2.0 * std::numbers::pi * day_of_year(d) / year_length(d);
        const double tmax = spec.temp_mean + spec.temp_amplitude * std::cos(angle) + 1.5 * noise(rng);
        const double tmin = tmax - 8.0 - 2.0 * std::abs(noise(rng));
        s.precip.push_back(p);
        s.tmax.push_back(tmax);
        s.tmin.push_back(tmin);
        s.streamflow.push_back((1.0 - k) * storage + spec.baseflow);
        storage = k * storage + p;
    }
    return s;
}

/// Indices of the top_k flow days, largest first; ties go to the earlier day.
inline std::vector<std::size_t> known_extremes(const CatchmentSeries& s, std::size_t top_k) {
    if (top_k > s.size()) throw Error("known_extremes: top_k exceeds series length");
    std::vector<std::size_t> idx(s.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return s.streamflow[a] > s.streamflow[b]; });
    idx.resize(top_k);
    return idx;
}

/// Summary attributes computed from a series with the usual hydrological
/// signature definitions (high flow = 9x median, low flow = 0.2x mean).
inline StaticAttributes compute_statics(const CatchmentSeries& s) {
    const std::size_t T = s.size();
    if (T == 0) throw Error("compute_statics: empty series");
    const double years = double(T) / 365.25;
    const double qsum = std::accumulate(s.streamflow.begin(), s.streamflow.end(), 0.0);
    const double psum = std::accumulate(s.precip.begin(), s.precip.end(), 0.0);
    const double qmean = qsum / double(T);
    std::vector<double> sorted = s.streamflow;
    std::nth_element(sorted.begin(), sorted.begin() + T / 2, sorted.end());
    const double median = sorted[T / 2];

    std::size_t high = 0, low = 0, zero = 0, runs = 0;
    bool in_run = false;
    for (double q : s.streamflow) {
        const bool hi = q > 9.0 * median;
        high += hi;
        if (hi && !in_run) ++runs;
        in_run = hi;
        low += q < 0.2 * qmean;
        zero += q == 0.0;
    }

    // Elasticity from annual anomalies, median over years.
    std::vector<double> py, qy;
    for (std::size_t start = 0; start + 365 <= T; start += 365) {
        py.push_back(std::accumulate(s.precip.begin() + start, s.precip.begin() + start + 365, 0.0));
        qy.push_back(std::accumulate(s.streamflow.begin() + start, s.streamflow.begin() + start + 365, 0.0));
    }
    double elasticity = 0.0;
    if (py.size() >= 2) {
        const double pbar = std::accumulate(py.begin(), py.end(), 0.0) / double(py.size());
        const double qbar = std::accumulate(qy.begin(), qy.end(), 0.0) / double(qy.size());
        std::vector<double> e;
        for (std::size_t y = 0; y < py.size(); ++y)
            if (py[y] != pbar && qbar > 0.0) e.push_back((qy[y] - qbar) / (py[y] - pbar) * pbar / qbar);
        if (!e.empty()) {
            std::nth_element(e.begin(), e.begin() + e.size() / 2, e.end());
            elasticity = e[e.size() / 2];
        }
    }

    StaticAttributes a;
    a.station_id = s.station_id;
    a.mean_streamflow = qmean;
    a.streamflow_rainfall_sensitivity = elasticity;
    a.runoff_ratio = psum > 0.0 ? qsum / psum : 0.0;
    a.high_flow_freq = double(high) / years;
    a.high_flow_duration = runs ? double(high) / double(runs) : 0.0;
    a.low_flow_freq = double(low) / years;
    a.zero_flow_freq = double(zero) / years;
    return a;
}

/// A region of `stations` catchments derived from one base spec. Station i
/// gets its own seed and progressively wetter, slower-draining parameters.
inline std::vector<CatchmentSeries> generate_region(const SynthSpec& base, std::size_t stations) {
    std::vector<CatchmentSeries> out;
    for (std::size_t i = 0; i < stations; ++i) {
        SynthSpec s = base;
        s.seed = base.seed + 1000 * i;
        s.storms_per_year = base.storms_per_year * (1.0 + 0.15 * double(i));
        s.baseflow = base.baseflow * (1.0 + 0.25 * double(i));
        s.recession = std::min(0.98, base.recession + 0.02 * double(i));
        char id[32];
        std::snprintf(id, sizeof id, "SYN%03zu", i);
        s.station_id = id;
        out.push_back(generate(s));
    }
    return out;
}

} // namespace hydroq::synth
