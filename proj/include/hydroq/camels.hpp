#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hydroq/csv.hpp"
#include "hydroq/date.hpp"
#include "hydroq/error.hpp"
#include "hydroq/series.hpp"

namespace hydroq {

inline constexpr std::array<const char*, 7> kStaticColumns = {
    "mean_streamflow", "streamflow_rainfall_sensitivity", "runoff_ratio", "high_flow_freq",
    "high_flow_duration", "low_flow_freq", "zero_flow_freq"};

/// The seven catchment summary attributes.
struct StaticAttributes {
    std::string station_id;
    double mean_streamflow = 0.0;                 // mm/day
    double streamflow_rainfall_sensitivity = 0.0;
    double runoff_ratio = 0.0;
    double high_flow_freq = 0.0;                  // days/year
    double high_flow_duration = 0.0;              // days
    double low_flow_freq = 0.0;                   // days/year
    double zero_flow_freq = 0.0;                  // days/year

    std::array<double, 7> values() const {
        return {mean_streamflow, streamflow_rainfall_sensitivity, runoff_ratio, high_flow_freq,
                high_flow_duration, low_flow_freq, zero_flow_freq};
    }
    static StaticAttributes from_values(std::string id, const std::array<double, 7>& v) {
        return {std::move(id), v[0], v[1], v[2], v[3], v[4], v[5], v[6]};
    }
    bool operator==(const StaticAttributes&) const = default;
};

struct StaticTable {
    std::map<std::string, StaticAttributes> records;
    std::size_t ignored_columns = 0;
};

struct RegionBundle {
    std::string region_id;
    std::vector<CatchmentSeries> stations; // sorted by station_id
    std::map<std::string, StaticAttributes> statics;
    Date common_start{};
    Date common_end{};
};

enum class RejectReason { FlowGapFraction, FlowGapTooLong, ForcingMissing, TooShort, MissingStatics };

inline const char* to_string(RejectReason r) {
    switch (r) {
    case RejectReason::FlowGapFraction: return "flow_gap_fraction";
    case RejectReason::FlowGapTooLong: return "flow_gap_too_long";
    case RejectReason::ForcingMissing: return "forcing_missing";
    case RejectReason::TooShort: return "too_short";
    case RejectReason::MissingStatics: return "missing_statics";
    }
    return "unknown";
}

struct Rejection {
    std::string station_id;
    RejectReason reason;
    std::string detail;
};

namespace detail {

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) lines.push_back(std::move(line));
    return lines;
}

inline std::size_t column_index(const std::vector<std::string>& header, const std::string& name,
                                const std::string& path) {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (csv::trim(header[i]) == name) return i;
    throw Error(path + ": missing column " + name);
}

inline bool blank(const std::string& line) {
    return csv::trim(line).empty() || line == "\r";
}

} // namespace detail

/// Reads a `date,precip_mm,tmin_c,tmax_c,streamflow` file. Rows may arrive in
/// any order; the result is a consecutive daily calendar from the first to the
/// last date, with absent days filled by NaN.
inline CatchmentSeries load_timeseries_csv(const std::filesystem::path& path) {
    const auto lines = detail::read_lines(path);
    const std::string p = path.string();
    if (lines.empty()) throw ParseError(p, 1, "missing header");
    const auto header = csv::split(lines[0]);
    const std::size_t c_date = detail::column_index(header, "date", p);
    const std::size_t c_precip = detail::column_index(header, "precip_mm", p);
    const std::size_t c_tmin = detail::column_index(header, "tmin_c", p);
    const std::size_t c_tmax = detail::column_index(header, "tmax_c", p);
    const std::size_t c_flow = detail::column_index(header, "streamflow", p);

    struct Row {
        Date date;
        double precip, tmin, tmax, flow;
    };
    std::vector<Row> rows;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (detail::blank(lines[i])) continue;
        const auto cells = csv::split(lines[i]);
        if (cells.size() != header.size())
            throw ParseError(p, i + 1, "expected " + std::to_string(header.size()) + " cells");
        auto date = parse_date(csv::trim(cells[c_date]));
        if (!date) throw ParseError(p, i + 1, "bad date '" + cells[c_date] + "'");
        Row r{*date, 0, 0, 0, 0};
        const std::pair<std::size_t, double*> fields[] = {
            {c_precip, &r.precip}, {c_tmin, &r.tmin}, {c_tmax, &r.tmax}, {c_flow, &r.flow}};
        for (auto [col, dst] : fields) {
            auto v = csv::parse_cell(cells[col]);
            if (!v) throw ParseError(p, i + 1, "bad number '" + cells[col] + "'");
            *dst = *v;
        }
        if (r.flow < 0.0) throw ParseError(p, i + 1, "negative streamflow");
        rows.push_back(r);
    }
    if (rows.empty()) throw ParseError(p, 2, "no data rows");
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.date < b.date; });
    for (std::size_t i = 1; i < rows.size(); ++i)
        if (rows[i].date == rows[i - 1].date)
            throw Error(p + ": duplicate date " + format_date(rows[i].date));

    CatchmentSeries s;
    s.station_id = path.stem().string();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    std::size_t next = 0;
    for (Date d = rows.front().date; d <= rows.back().date; d += std::chrono::days{1}) {
        s.dates.push_back(d);
        if (rows[next].date == d) {
            const Row& r = rows[next++];
            s.precip.push_back(r.precip);
            s.tmin.push_back(r.tmin);
            s.tmax.push_back(r.tmax);
            s.streamflow.push_back(r.flow);
        } else {
            s.precip.push_back(nan);
            s.tmin.push_back(nan);
            s.tmax.push_back(nan);
            s.streamflow.push_back(nan);
        }
    }
    return s;
}

inline void write_timeseries_csv(const std::filesystem::path& path, const CatchmentSeries& s) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << "date,precip_mm,tmin_c,tmax_c,streamflow\n";
    auto cell = [](double v) { return std::isnan(v) ? std::string() : csv::format_number(v); };
    for (std::size_t t = 0; t < s.size(); ++t)
        out << format_date(s.dates[t]) << ',' << cell(s.precip[t]) << ',' << cell(s.tmin[t]) << ','
            << cell(s.tmax[t]) << ',' << cell(s.streamflow[t]) << '\n';
}

inline StaticTable load_static_csv(const std::filesystem::path& path) {
    const auto lines = detail::read_lines(path);
    const std::string p = path.string();
    if (lines.empty()) throw ParseError(p, 1, "missing header");
    const auto header = csv::split(lines[0]);
    const std::size_t c_id = detail::column_index(header, "station_id", p);
    std::array<std::size_t, 7> cols{};
    for (std::size_t k = 0; k < kStaticColumns.size(); ++k)
        cols[k] = detail::column_index(header, kStaticColumns[k], p);

    StaticTable table;
    table.ignored_columns = header.size() - 1 - kStaticColumns.size();
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (detail::blank(lines[i])) continue;
        const auto cells = csv::split(lines[i]);
        if (cells.size() != header.size())
            throw ParseError(p, i + 1, "expected " + std::to_string(header.size()) + " cells");
        std::array<double, 7> v{};
        for (std::size_t k = 0; k < cols.size(); ++k) {
            auto x = csv::parse_cell(cells[cols[k]]);
            if (!x || std::isnan(*x))
                throw ParseError(p, i + 1, std::string("bad value for ") + kStaticColumns[k]);
            v[k] = *x;
        }
        if (v[3] < 0 || v[4] < 0 || v[5] < 0 || v[6] < 0)
            throw ParseError(p, i + 1, "negative frequency or duration");
        std::string id(csv::trim(cells[c_id]));
        if (table.records.count(id)) throw ParseError(p, i + 1, "duplicate station " + id);
        table.records.emplace(id, StaticAttributes::from_values(id, v));
    }
    return table;
}

inline void write_static_csv(const std::filesystem::path& path,
                             const std::vector<StaticAttributes>& statics) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << "station_id";
    for (const char* c : kStaticColumns) out << ',' << c;
    out << '\n';
    for (const auto& s : statics) {
        out << s.station_id;
        for (double v : s.values()) out << ',' << csv::format_number(v);
        out << '\n';
    }
}

inline void write_rejection_report(const std::filesystem::path& path,
                                   const std::vector<Rejection>& rejections) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << "station_id,reason\n";
    for (const auto& r : rejections) out << r.station_id << ',' << to_string(r.reason) << '\n';
}

/// Truncates every station to the intersection of their date ranges.
inline RegionBundle align_common(std::vector<CatchmentSeries> stations, std::string region_id = {}) {
    if (stations.empty()) throw Error("align_common: no stations");
    std::sort(stations.begin(), stations.end(),
              [](const auto& a, const auto& b) { return a.station_id < b.station_id; });
    Date start = stations.front().dates.front();
    Date end = stations.front().dates.back();
    for (const auto& s : stations) {
        if (s.dates.empty()) throw Error("align_common: empty station " + s.station_id);
        start = std::max(start, s.dates.front());
        end = std::min(end, s.dates.back());
    }
    if (start > end) throw Error("no common date range");

    RegionBundle b;
    b.region_id = std::move(region_id);
    b.common_start = start;
    b.common_end = end;
    for (auto& s : stations) {
        const auto first = std::size_t((start - s.dates.front()).count());
        const auto len = std::size_t((end - start).count()) + 1;
        auto cut = [&](std::vector<double>& v) {
            v = std::vector<double>(v.begin() + first, v.begin() + first + len);
        };
        s.dates = std::vector<Date>(s.dates.begin() + first, s.dates.begin() + first + len);
        cut(s.precip);
        cut(s.tmin);
        cut(s.tmax);
        cut(s.streamflow);
        b.stations.push_back(std::move(s));
    }
    return b;
}

/// Attaches static records; every station must have one.
inline void attach_statics(RegionBundle& bundle, const StaticTable& table) {
    for (const auto& s : bundle.stations) {
        auto it = table.records.find(s.station_id);
        if (it == table.records.end()) throw Error("missing statics for station " + s.station_id);
        bundle.statics[s.station_id] = it->second;
    }
}

struct MissingPolicy {
    double max_flow_gap_fraction = 0.05;
    std::size_t max_flow_gap_days = 7;
};

struct FillOutcome {
    std::optional<CatchmentSeries> series;
    std::optional<Rejection> rejection;

    bool accepted() const noexcept { return series.has_value(); }
};

/// Forward-fills forcings and linearly interpolates short streamflow gaps.
/// Gaps at either end of the flow record are filled with the nearest value.
inline FillOutcome fill_missing(const CatchmentSeries& in, const MissingPolicy& policy = {}) {
    CatchmentSeries s = in;
    const std::size_t T = s.size();
    auto reject = [&](RejectReason r, std::string detail) {
        return FillOutcome{std::nullopt, Rejection{s.station_id, r, std::move(detail)}};
    };

    std::size_t missing = 0;
    for (double v : s.streamflow) missing += std::isnan(v);
    if (T == 0) return reject(RejectReason::TooShort, "empty series");
    if (double(missing) / double(T) > policy.max_flow_gap_fraction)
        return reject(RejectReason::FlowGapFraction,
                      std::to_string(missing) + " of " + std::to_string(T) + " days missing");

    for (std::size_t t = 0; t < T;) {
        if (!std::isnan(s.streamflow[t])) {
            ++t;
            continue;
        }
        std::size_t end = t;
        while (end < T && std::isnan(s.streamflow[end])) ++end;
        const std::size_t len = end - t;
        if (len > policy.max_flow_gap_days)
            return reject(RejectReason::FlowGapTooLong,
                          std::to_string(len) + "-day gap from " + format_date(s.dates[t]));
        if (t == 0 && end == T) return reject(RejectReason::FlowGapFraction, "no streamflow");
        if (t == 0) {
            std::fill(s.streamflow.begin(), s.streamflow.begin() + end, s.streamflow[end]);
        } else if (end == T) {
            std::fill(s.streamflow.begin() + t, s.streamflow.end(), s.streamflow[t - 1]);
        } else {
            const double a = s.streamflow[t - 1], b = s.streamflow[end];
            for (std::size_t k = t; k < end; ++k)
                s.streamflow[k] = a + (b - a) * double(k - t + 1) / double(len + 1);
        }
        t = end;
    }

    for (auto* col : {&s.precip, &s.tmin, &s.tmax}) {
        auto first = std::find_if(col->begin(), col->end(), [](double v) { return !std::isnan(v); });
        if (first == col->end()) return reject(RejectReason::ForcingMissing, "forcing column empty");
        std::fill(col->begin(), first, *first);
        for (std::size_t t = 1; t < T; ++t)
            if (std::isnan((*col)[t])) (*col)[t] = (*col)[t - 1];
    }
    return {std::move(s), std::nullopt};
}

} // namespace hydroq
