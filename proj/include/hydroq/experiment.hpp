#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "hydroq/camels.hpp"
#include "hydroq/csv.hpp"
#include "hydroq/metrics.hpp"
#include "hydroq/neural/checkpoint.hpp"
#include "hydroq/neural/train.hpp"
#include "hydroq/quantile_switch.hpp"
#include "hydroq/strategy.hpp"
#include "hydroq/synthetic.hpp"

namespace hydroq::exp {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kQuantileModel = "QUANTILE_LSTM";

using json = nlohmann::ordered_json;

/// Where station data comes from: a synthetic region or ingest-format files.
struct DataSource {
    std::optional<synth::SynthSpec> synth;
    std::size_t synth_stations = 1;
    std::filesystem::path timeseries_dir; // one <station_id>.csv per station
    std::filesystem::path static_csv;
    std::filesystem::path region_map; // station_id,state
    std::vector<std::string> stations; // empty = all
};

struct ExperimentConfig {
    DataSource data;
    std::string region; // state code; empty = no filter
    std::vector<StrategyKind> strategies{StrategyKind::Individual};
    std::vector<std::string> models{"LSTM"};
    std::size_t window = 5;
    std::size_t horizon = 5;
    std::size_t hidden_units = 20;
    std::size_t runs = 5;
    std::uint64_t seed = 1;
    SwitchConfig switch_config;
    nn::TrainConfig train;
    double validation_fraction = 0.2; // only used with early stopping
    SplitSpec split;
    MissingPolicy missing;
    IndicatorEncoding indicator = IndicatorEncoding::OneHot;
    MetricSpace space = MetricSpace::Scaled;
    std::filesystem::path output_dir = "results";
    std::size_t threads = 0; // 0 = hardware concurrency
    bool save_models = false;
};

namespace detail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw Error(where + ": expected an object");
    for (const auto& [k, v] : j.items())
        if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; }) == allowed.end())
            throw Error(where + ": unknown key '" + k + "'");
}

template <class T>
void read(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw Error(std::string("config key '") + key + "' has the wrong type");
    }
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    if (p.empty()) return {};
    const std::filesystem::path path(p);
    return (path.is_absolute() ? path : base / path).lexically_normal();
}

inline MetricSpace parse_space(const std::string& s) {
    if (s == "scaled") return MetricSpace::Scaled;
    if (s == "original") return MetricSpace::Original;
    throw Error("metric_space must be 'scaled' or 'original'");
}

inline const char* space_name(MetricSpace s) { return s == MetricSpace::Scaled ? "scaled" : "original"; }

} // namespace detail

inline synth::SynthSpec synth_from_json(const json& j, std::size_t* stations = nullptr) {
    detail::check_keys(j,
                       {"seed", "length", "stations", "storms_per_year", "pareto_tail", "pareto_scale",
                        "recession", "baseflow", "temp_mean", "temp_amplitude", "initial_storage",
                        "start", "station_id"},
                       "synth");
    synth::SynthSpec s;
    detail::read(j, "seed", s.seed);
    detail::read(j, "length", s.length);
    detail::read(j, "storms_per_year", s.storms_per_year);
    detail::read(j, "pareto_tail", s.pareto_tail);
    detail::read(j, "pareto_scale", s.pareto_scale);
    detail::read(j, "recession", s.recession);
    detail::read(j, "baseflow", s.baseflow);
    detail::read(j, "temp_mean", s.temp_mean);
    detail::read(j, "temp_amplitude", s.temp_amplitude);
    detail::read(j, "initial_storage", s.initial_storage);
    detail::read(j, "station_id", s.station_id);
    if (j.contains("start")) {
        auto d = parse_date(j.at("start").get<std::string>());
        if (!d) throw Error("synth.start is not a YYYY-MM-DD date");
        s.start = *d;
    }
    if (stations) {
        *stations = 1;
        detail::read(j, "stations", *stations);
    }
    return s;
}

inline json synth_to_json(const synth::SynthSpec& s, std::size_t stations) {
    return {{"seed", s.seed},
            {"length", s.length},
            {"stations", stations},
            {"storms_per_year", s.storms_per_year},
            {"pareto_tail", s.pareto_tail},
            {"pareto_scale", s.pareto_scale},
            {"recession", s.recession},
            {"baseflow", s.baseflow},
            {"temp_mean", s.temp_mean},
            {"temp_amplitude", s.temp_amplitude},
            {"initial_storage", s.initial_storage},
            {"start", format_date(s.start)},
            {"station_id", s.station_id}};
}

/// Builds a config from parsed JSON; relative paths resolve against base_dir.
inline ExperimentConfig config_from_json(const json& j, const std::filesystem::path& base_dir = {}) {
    detail::check_keys(j,
                       {"data", "region", "strategies", "models", "window", "horizon", "hidden_units",
                        "runs", "seed", "switch", "train", "split", "missing", "indicator_encoding",
                        "metric_space", "output_dir", "threads", "save_models"},
                       "config");
    ExperimentConfig c;
    if (!j.contains("data")) throw Error("config: missing 'data' section");
    const auto& d = j.at("data");
    detail::check_keys(d, {"synth", "timeseries_dir", "static_csv", "region_map", "stations"}, "data");
    if (d.contains("synth")) c.data.synth = synth_from_json(d.at("synth"), &c.data.synth_stations);
    std::string s;
    if (d.contains("timeseries_dir")) c.data.timeseries_dir = detail::resolve(base_dir, d.at("timeseries_dir").get<std::string>());
    if (d.contains("static_csv")) c.data.static_csv = detail::resolve(base_dir, d.at("static_csv").get<std::string>());
    if (d.contains("region_map")) c.data.region_map = detail::resolve(base_dir, d.at("region_map").get<std::string>());
    detail::read(d, "stations", c.data.stations);

    detail::read(j, "region", c.region);
    if (j.contains("strategies")) {
        c.strategies.clear();
        for (const auto& k : j.at("strategies")) c.strategies.push_back(parse_strategy(k.get<std::string>()));
    }
    detail::read(j, "models", c.models);
    detail::read(j, "window", c.window);
    detail::read(j, "horizon", c.horizon);
    detail::read(j, "hidden_units", c.hidden_units);
    detail::read(j, "runs", c.runs);
    detail::read(j, "seed", c.seed);
    detail::read(j, "threads", c.threads);
    detail::read(j, "save_models", c.save_models);
    if (j.contains("switch")) {
        const auto& w = j.at("switch");
        detail::check_keys(w, {"hi_threshold", "mid_threshold", "hi_tau", "mid_tau"}, "switch");
        detail::read(w, "hi_threshold", c.switch_config.hi_threshold);
        detail::read(w, "mid_threshold", c.switch_config.mid_threshold);
        detail::read(w, "hi_tau", c.switch_config.hi_tau);
        detail::read(w, "mid_tau", c.switch_config.mid_tau);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        detail::check_keys(t, {"max_epochs", "batch_size", "learning_rate", "early_stop_patience", "validation_fraction"},
                           "train");
        detail::read(t, "max_epochs", c.train.max_epochs);
        detail::read(t, "batch_size", c.train.batch_size);
        detail::read(t, "learning_rate", c.train.adam.lr);
        detail::read(t, "validation_fraction", c.validation_fraction);
        if (t.contains("early_stop_patience") && !t.at("early_stop_patience").is_null()) {
            std::size_t p = 0;
            detail::read(t, "early_stop_patience", p);
            c.train.early_stop_patience = p;
        }
    }
    if (j.contains("split")) {
        const auto& sp = j.at("split");
        detail::check_keys(sp, {"train_fraction", "disjoint"}, "split");
        detail::read(sp, "train_fraction", c.split.train_fraction);
        detail::read(sp, "disjoint", c.split.disjoint);
    }
    if (j.contains("missing")) {
        const auto& m = j.at("missing");
        detail::check_keys(m, {"max_flow_gap_fraction", "max_flow_gap_days"}, "missing");
        detail::read(m, "max_flow_gap_fraction", c.missing.max_flow_gap_fraction);
        detail::read(m, "max_flow_gap_days", c.missing.max_flow_gap_days);
    }
    if (j.contains("indicator_encoding")) {
        detail::read(j, "indicator_encoding", s);
        if (s == "onehot") c.indicator = IndicatorEncoding::OneHot;
        else if (s == "integer") c.indicator = IndicatorEncoding::Integer;
        else throw Error("indicator_encoding must be 'onehot' or 'integer'");
    }
    if (j.contains("metric_space")) {
        detail::read(j, "metric_space", s);
        c.space = detail::parse_space(s);
    }
    if (j.contains("output_dir")) c.output_dir = detail::resolve(base_dir, j.at("output_dir").get<std::string>());
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(path.string() + ": " + e.what());
    }
    return config_from_json(j, path.parent_path());
}

/// Effective configuration; its dump is what the manifest hashes.
inline json config_to_json(const ExperimentConfig& c) {
    json data = json::object();
    if (c.data.synth) data["synth"] = synth_to_json(*c.data.synth, c.data.synth_stations);
    if (!c.data.timeseries_dir.empty()) data["timeseries_dir"] = c.data.timeseries_dir.generic_string();
    if (!c.data.static_csv.empty()) data["static_csv"] = c.data.static_csv.generic_string();
    if (!c.data.region_map.empty()) data["region_map"] = c.data.region_map.generic_string();
    if (!c.data.stations.empty()) data["stations"] = c.data.stations;
    json strategies = json::array();
    for (auto k : c.strategies) strategies.push_back(to_string(k));
    json train = {{"max_epochs", c.train.max_epochs},
                  {"batch_size", c.train.batch_size},
                  {"learning_rate", c.train.adam.lr},
                  {"validation_fraction", c.validation_fraction}};
    train["early_stop_patience"] = c.train.early_stop_patience ? json(*c.train.early_stop_patience) : json(nullptr);
    return {{"data", data},
            {"region", c.region},
            {"strategies", strategies},
            {"models", c.models},
            {"window", c.window},
            {"horizon", c.horizon},
            {"hidden_units", c.hidden_units},
            {"runs", c.runs},
            {"seed", c.seed},
            {"switch",
             {{"hi_threshold", c.switch_config.hi_threshold},
              {"mid_threshold", c.switch_config.mid_threshold},
              {"hi_tau", c.switch_config.hi_tau},
              {"mid_tau", c.switch_config.mid_tau}}},
            {"train", train},
            {"split", {{"train_fraction", c.split.train_fraction}, {"disjoint", c.split.disjoint}}},
            {"missing",
             {{"max_flow_gap_fraction", c.missing.max_flow_gap_fraction},
              {"max_flow_gap_days", c.missing.max_flow_gap_days}}},
            {"indicator_encoding", c.indicator == IndicatorEncoding::OneHot ? "onehot" : "integer"},
            {"metric_space", detail::space_name(c.space)},
            {"save_models", c.save_models}};
}

inline std::string fnv1a_hex(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline bool is_model_name(const std::string& m) {
    return m == kQuantileModel || m == "LSTM" || m == "BD-LSTM" || m == "ED-LSTM" || m == "CNN1D";
}

/// Problems that would stop `run`; empty means runnable.
inline std::vector<std::string> validate(const ExperimentConfig& c) {
    std::vector<std::string> out;
    namespace fs = std::filesystem;
    if (c.window < 1) out.push_back("window must be >= 1");
    if (c.horizon < 1) out.push_back("horizon must be >= 1");
    if (c.runs < 1) out.push_back("runs must be >= 1");
    if (c.hidden_units < 1) out.push_back("hidden_units must be >= 1");
    if (c.strategies.empty()) out.push_back("no strategies selected");
    if (c.models.empty()) out.push_back("no models selected");
    try {
        c.switch_config.validate();
    } catch (const Error& e) {
        out.push_back(e.what());
    }
    try {
        c.train.validate();
    } catch (const Error& e) {
        out.push_back(e.what());
    }
    if (!(c.split.train_fraction > 0.0 && c.split.train_fraction < 1.0))
        out.push_back("split.train_fraction must lie in (0,1)");
    if (c.train.early_stop_patience && !(c.validation_fraction > 0.0 && c.validation_fraction < 1.0))
        out.push_back("train.validation_fraction must lie in (0,1) when early stopping is on");

    const bool has_synth = c.data.synth.has_value(), has_files = !c.data.timeseries_dir.empty();
    if (has_synth == has_files) out.push_back("data: give exactly one of 'synth' or 'timeseries_dir'");
    if (has_synth) {
        try {
            c.data.synth->validate();
        } catch (const Error& e) {
            out.push_back(e.what());
        }
        if (c.data.synth_stations < 1) out.push_back("synth.stations must be >= 1");
        else if (c.data.synth->length < c.window + c.horizon)
            out.push_back("synth.length is too short for window + horizon");
    }
    if (has_files && !fs::is_directory(c.data.timeseries_dir))
        out.push_back("timeseries_dir does not exist: " + c.data.timeseries_dir.string());
    if (!c.data.static_csv.empty() && !fs::is_regular_file(c.data.static_csv))
        out.push_back("static_csv does not exist: " + c.data.static_csv.string());
    if (!c.data.region_map.empty() && !fs::is_regular_file(c.data.region_map))
        out.push_back("region_map does not exist: " + c.data.region_map.string());
    if (!c.region.empty() && c.data.region_map.empty() && has_files)
        out.push_back("region filter needs data.region_map");

    bool needs_statics = false;
    for (auto k : c.strategies)
        needs_statics |= k == StrategyKind::BatchStatic || k == StrategyKind::StackedEnsemble;
    if (needs_statics && has_files && c.data.static_csv.empty())
        out.push_back("BATCH_STATIC and STACKED_ENSEMBLE need data.static_csv");

    for (const auto& m : c.models) {
        if (!is_model_name(m)) {
            out.push_back("unknown model '" + m + "'");
            continue;
        }
        if (m == kQuantileModel)
            for (auto k : c.strategies)
                if (k != StrategyKind::Individual)
                    out.push_back(std::string(kQuantileModel) + " runs only with the INDIVIDUAL strategy, not " +
                                  to_string(k));
        if (m == "CNN1D" && c.window < 4) out.push_back("CNN1D needs window >= 4");
    }
    return out;
}

/// Validation that also reports unreadable or malformed config files.
inline std::vector<std::string> validate_file(const std::filesystem::path& path) {
    try {
        return validate(load_config(path));
    } catch (const std::exception& e) {
        return {e.what()};
    }
}

/// Loads (or generates) the region and applies filtering, alignment and the
/// missing-data policy. Rejected stations are appended to `rejections`.
inline RegionBundle load_region(const ExperimentConfig& c, bool need_statics, std::vector<Rejection>& rejections) {
    namespace fs = std::filesystem;
    std::vector<CatchmentSeries> raw;
    std::map<std::string, StaticAttributes> statics;
    if (c.data.synth) {
        raw = synth::generate_region(*c.data.synth, c.data.synth_stations);
        for (const auto& s : raw) statics[s.station_id] = synth::compute_statics(s);
    } else {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(c.data.timeseries_dir))
            if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) raw.push_back(load_timeseries_csv(f));
        if (!c.data.static_csv.empty()) statics = load_static_csv(c.data.static_csv).records;
    }

    std::set<std::string> keep;
    bool filtered = false;
    if (!c.data.stations.empty()) {
        keep.insert(c.data.stations.begin(), c.data.stations.end());
        filtered = true;
    }
    if (!c.region.empty() && !c.data.region_map.empty()) {
        std::set<std::string> in_region;
        const auto lines = hydroq::detail::read_lines(c.data.region_map);
        if (lines.empty()) throw Error(c.data.region_map.string() + ": empty region map");
        const auto header = csv::split(lines[0]);
        const std::size_t ci = hydroq::detail::column_index(header, "station_id", c.data.region_map);
        const std::size_t cs = hydroq::detail::column_index(header, "state", c.data.region_map);
        for (std::size_t i = 1; i < lines.size(); ++i) {
            if (hydroq::detail::blank(lines[i])) continue;
            const auto cells = csv::split(lines[i]);
            if (cells.size() <= std::max(ci, cs)) throw ParseError(c.data.region_map, i + 1, "short row");
            if (csv::trim(cells[cs]) == c.region) in_region.insert(std::string(csv::trim(cells[ci])));
        }
        if (filtered) {
            std::set<std::string> both;
            std::set_intersection(keep.begin(), keep.end(), in_region.begin(), in_region.end(),
                                  std::inserter(both, both.begin()));
            keep = std::move(both);
        } else {
            keep = std::move(in_region);
        }
        filtered = true;
    }
    if (filtered)
        std::erase_if(raw, [&](const CatchmentSeries& s) { return !keep.count(s.station_id); });
    if (raw.empty()) throw Error("no stations selected");

    RegionBundle aligned = align_common(std::move(raw), c.region);
    RegionBundle b;
    b.region_id = aligned.region_id;
    b.common_start = aligned.common_start;
    b.common_end = aligned.common_end;
    for (auto& s : aligned.stations) {
        if (need_statics && !statics.count(s.station_id)) {
            rejections.push_back({s.station_id, RejectReason::MissingStatics, "no static attributes"});
            continue;
        }
        auto filled = fill_missing(s, c.missing);
        if (!filled.accepted()) {
            rejections.push_back(*filled.rejection);
            continue;
        }
        b.stations.push_back(std::move(*filled.series));
    }
    if (b.stations.empty()) throw Error("every station was rejected");
    for (const auto& s : b.stations)
        if (auto it = statics.find(s.station_id); it != statics.end()) b.statics[s.station_id] = it->second;
    return b;
}

/// One evaluated (strategy, model, station, seed) tuple.
struct Outcome {
    ForecastReport report;
    std::vector<std::size_t> origin; // first input day of each test window
    std::vector<double> alpha_hat;   // switch model only
    std::vector<Branch> branch;
};

struct SummaryRow {
    std::string strategy;
    std::string model;
    std::string station;
    std::vector<std::uint64_t> seeds;
    std::vector<std::pair<std::string, MetricSummary>> metrics; // SER1..SER75, RMSE, NSE1..H
};

struct RunResult {
    std::vector<Outcome> outcomes; // sorted by strategy, model, station, seed
    std::vector<SummaryRow> summary;
    std::vector<Rejection> rejections;
    std::vector<Date> dates;
    std::size_t boundary = 0;
};

namespace detail {

inline nn::NetSpec base_spec(const ExperimentConfig& c, const std::string& model, std::size_t features) {
    nn::NetSpec s;
    s.kind = model == kQuantileModel ? nn::NetKind::LSTM : nn::parse_net_kind(model);
    s.input_features = features;
    s.window = c.window;
    s.horizon = c.horizon;
    s.hidden_units = c.hidden_units;
    return s;
}

/// Holds out the last part of the training period for early stopping.
inline std::pair<WindowedDataset, std::optional<WindowedDataset>> carve_validation(const ExperimentConfig& c,
                                                                                   const WindowedDataset& train,
                                                                                   std::size_t boundary) {
    if (!c.train.early_stop_patience) return {train, std::nullopt};
    const auto cut = static_cast<std::size_t>(double(boundary) * (1.0 - c.validation_fraction));
    std::vector<std::size_t> fit, val;
    for (std::size_t m = 0; m < train.size(); ++m) {
        const std::size_t o = train.origin_index[m];
        if (o + train.window + train.horizon <= cut) fit.push_back(m);
        else if (o >= cut) val.push_back(m);
    }
    if (fit.empty() || val.empty()) throw Error("training period too short for a validation hold-out");
    return {select_samples(train, fit), select_samples(train, val)};
}

inline nn::TrainResult fit(const ExperimentConfig& c, const nn::NetSpec& spec, const WindowedDataset& train,
                           std::size_t boundary, const nn::LossSpec& loss, std::uint64_t seed) {
    nn::TrainConfig tc = c.train;
    tc.seed = seed;
    auto [data, val] = carve_validation(c, train, boundary);
    return nn::train(spec, data, loss, tc, val ? &*val : nullptr);
}

inline Matrix to_space(const ExperimentConfig& c, const StationData& st, Matrix m) {
    if (c.space == MetricSpace::Original)
        for (double& v : m.data()) v = invert_value(v, st.scaler, kFlowRow);
    return m;
}

inline std::string slug(std::string s) {
    for (char& ch : s)
        if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_') ch = '_';
    return s;
}

} // namespace detail

/// Splits a multi-station prediction back into per-station outcomes.
inline std::vector<Outcome> per_station(const ExperimentConfig& c, const PreparedRegion& pr,
                                        const WindowedDataset& test, const Matrix& pred, StrategyKind strategy,
                                        const std::string& model, std::uint64_t seed) {
    std::vector<Outcome> out;
    for (std::size_t k = 0; k < pr.stations.size(); ++k) {
        std::vector<std::size_t> rows;
        for (std::size_t m = 0; m < test.size(); ++m)
            if (test.station[m] == k) rows.push_back(m);
        if (rows.empty()) continue;
        Matrix p(rows.size(), test.horizon), o(rows.size(), test.horizon);
        Outcome oc;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            std::ranges::copy(pred.row(rows[i]), p.row(i).begin());
            std::ranges::copy(test.targets.row(rows[i]), o.row(i).begin());
            oc.origin.push_back(test.origin_index[rows[i]]);
        }
        oc.report = make_report(detail::to_space(c, pr.stations[k], std::move(p)),
                                detail::to_space(c, pr.stations[k], std::move(o)));
        oc.report.strategy = to_string(strategy);
        oc.report.model = model;
        oc.report.station = pr.stations[k].station_id;
        oc.report.seed = seed;
        oc.report.space = c.space;
        out.push_back(std::move(oc));
    }
    return out;
}

/// Trains and evaluates one (strategy, model, seed) job; `station` selects
/// the station for INDIVIDUAL jobs.
inline std::vector<Outcome> run_job(const ExperimentConfig& c, const PreparedRegion& pr, StrategyKind strategy,
                                    const std::string& model, std::uint64_t seed, std::size_t station,
                                    const std::filesystem::path& model_dir) {
    namespace fs = std::filesystem;
    const auto tag = detail::slug(std::string(to_string(strategy)) + "_" + model);
    switch (strategy) {
    case StrategyKind::Individual: {
        const auto& st = pr.stations[station];
        const auto split = chrono_split(st.dataset, pr.split);
        const auto spec = detail::base_spec(c, model, kSeriesFeatures);
        Outcome oc;
        Matrix pred;
        if (model == kQuantileModel) {
            const auto flows = st.scaled.row(kFlowRow).first(pr.boundary);
            const auto fdc = build_fdc(flows);
            nn::TrainConfig tc = c.train;
            tc.seed = seed;
            tc.early_stop_patience.reset();
            const auto e = train_switch(split.train, fdc, spec, c.switch_config, tc);
            auto sp = switch_predict(e, split.test.inputs);
            pred = std::move(sp.forecast);
            oc.alpha_hat = std::move(sp.alpha_hat);
            oc.branch = std::move(sp.branch);
            if (!model_dir.empty())
                save_ensemble(model_dir / (tag + "_" + detail::slug(st.station_id) + "_seed" + std::to_string(seed)), e);
        } else {
            const auto r = detail::fit(c, spec, split.train, pr.boundary, nn::LossSpec::mse(), seed);
            pred = nn::forward(spec, r.params, split.test.inputs);
            if (!model_dir.empty())
                nn::write_checkpoint(model_dir / (tag + "_" + detail::slug(st.station_id) + "_seed" +
                                                  std::to_string(seed) + ".ckpt"),
                                     spec, r.params, seed);
        }
        oc.origin = split.test.origin_index;
        oc.report = make_report(detail::to_space(c, st, std::move(pred)),
                                detail::to_space(c, st, split.test.targets));
        oc.report.strategy = to_string(strategy);
        oc.report.model = model;
        oc.report.station = st.station_id;
        oc.report.seed = seed;
        oc.report.space = c.space;
        return {std::move(oc)};
    }
    case StrategyKind::BatchIndicator:
    case StrategyKind::BatchStatic: {
        const auto ds = strategy == StrategyKind::BatchIndicator ? build_batch_indicator(pr, c.indicator)
                                                                 : build_batch_static(pr);
        const auto split = chrono_split(ds, pr.split);
        const auto spec = detail::base_spec(c, model, ds.features());
        const auto r = detail::fit(c, spec, split.train, pr.boundary, nn::LossSpec::mse(), seed);
        if (!model_dir.empty())
            nn::write_checkpoint(model_dir / (tag + "_seed" + std::to_string(seed) + ".ckpt"), spec, r.params, seed);
        return per_station(c, pr, split.test, nn::forward(spec, r.params, split.test.inputs), strategy, model, seed);
    }
    case StrategyKind::StackedEnsemble: {
        const auto in = build_stacked_inputs(pr);
        const auto rows = split_rows(in.temporal, pr.split);
        const SplitResult ts{select_samples(in.temporal, rows.train), select_samples(in.temporal, rows.test)};
        const SplitResult ss{select_samples(in.statics, rows.train), select_samples(in.statics, rows.test)};
        StackedInputs train_in{ts.train, ss.train};
        const auto tspec = detail::base_spec(c, model, kSeriesFeatures);
        nn::NetSpec sspec{nn::NetKind::Dense, 7, 1, c.horizon, c.hidden_units, 1};
        const auto tr = detail::fit(c, tspec, ts.train, pr.boundary, nn::LossSpec::mse(), seed);
        const auto sr = detail::fit(c, sspec, ss.train, pr.boundary, nn::LossSpec::mse(), seed);
        const auto comb = fit_stacked_ensemble(tspec, tr.params, sspec, sr.params, train_in);
        const Matrix pred = predict_stacked(comb, nn::forward(tspec, tr.params, ts.test.inputs),
                                            nn::forward(sspec, sr.params, ss.test.inputs));
        if (!model_dir.empty()) {
            nn::write_checkpoint(model_dir / (tag + "_temporal_seed" + std::to_string(seed) + ".ckpt"), tspec,
                                 tr.params, seed);
            nn::write_checkpoint(model_dir / (tag + "_static_seed" + std::to_string(seed) + ".ckpt"), sspec,
                                 sr.params, seed);
        }
        return per_station(c, pr, ts.test, pred, strategy, model, seed);
    }
    }
    return {};
}

/// Mean and std over seeds for every (strategy, model, station), plus an
/// unweighted station mean under station "ALL" when there are several.
inline std::vector<SummaryRow> summarize_outcomes(const std::vector<Outcome>& outcomes) {
    std::vector<SummaryRow> rows;
    std::map<std::tuple<std::string, std::string, std::string>, std::vector<const ForecastReport*>> groups;
    std::map<std::pair<std::string, std::string>, std::map<std::uint64_t, std::vector<const ForecastReport*>>> by_seed;
    std::vector<std::pair<std::string, std::string>> order;
    for (const auto& o : outcomes) {
        const auto& r = o.report;
        groups[{r.strategy, r.model, r.station}].push_back(&r);
        auto key = std::make_pair(r.strategy, r.model);
        if (!by_seed.count(key)) order.push_back(key);
        by_seed[key][r.seed].push_back(&r);
    }
    for (const auto& key : order) {
        std::set<std::string> stations;
        for (const auto& [seed, reps] : by_seed[key])
            for (const auto* r : reps) stations.insert(r->station);
        for (const auto& station : stations) {
            const auto& reps = groups[{key.first, key.second, station}];
            SummaryRow row{key.first, key.second, station, {}, {}};
            std::vector<std::vector<double>> values;
            std::vector<std::string> names;
            for (const auto* r : reps) {
                row.seeds.push_back(r->seed);
                const auto h = headline_metrics(*r);
                if (names.empty())
                    for (const auto& [n, v] : h) names.push_back(n), values.emplace_back();
                for (std::size_t k = 0; k < h.size(); ++k) values[k].push_back(h[k].second);
            }
            for (std::size_t k = 0; k < names.size(); ++k)
                row.metrics.emplace_back(names[k], summarize(std::span<const double>(values[k])));
            rows.push_back(std::move(row));
        }
        if (stations.size() > 1) {
            SummaryRow row{key.first, key.second, "ALL", {}, {}};
            std::vector<std::string> names;
            std::vector<std::vector<double>> values;
            for (const auto& [seed, reps] : by_seed[key]) {
                row.seeds.push_back(seed);
                std::vector<double> sum;
                std::vector<std::size_t> count;
                for (const auto* r : reps) {
                    const auto h = headline_metrics(*r);
                    if (names.empty())
                        for (const auto& [n, v] : h) names.push_back(n);
                    sum.resize(h.size(), 0.0);
                    count.resize(h.size(), 0);
                    for (std::size_t k = 0; k < h.size(); ++k)
                        if (!std::isnan(h[k].second)) sum[k] += h[k].second, ++count[k];
                }
                values.resize(names.size());
                for (std::size_t k = 0; k < names.size(); ++k)
                    values[k].push_back(count[k] ? sum[k] / double(count[k]) : std::numeric_limits<double>::quiet_NaN());
            }
            for (std::size_t k = 0; k < names.size(); ++k)
                row.metrics.emplace_back(names[k], summarize(std::span<const double>(values[k])));
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

inline constexpr std::size_t kTableColumns = kSerLevels.size() + 1; // SER1..SER75, RMSE

inline void write_summary_csv(const std::filesystem::path& path, const std::vector<SummaryRow>& rows) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << "strategy,model,station,seeds,runs";
    if (!rows.empty()) {
        for (std::size_t k = 0; k < kTableColumns; ++k) out << ',' << rows[0].metrics[k].first;
        for (std::size_t k = 0; k < kTableColumns; ++k) out << ',' << rows[0].metrics[k].first << "_std";
    }
    out << '\n';
    for (const auto& r : rows) {
        out << r.strategy << ',' << r.model << ',' << r.station << ',';
        for (std::size_t i = 0; i < r.seeds.size(); ++i) out << (i ? ";" : "") << r.seeds[i];
        out << ',' << r.seeds.size();
        for (std::size_t k = 0; k < kTableColumns; ++k) out << ',' << csv::format_number(r.metrics[k].second.mean);
        for (std::size_t k = 0; k < kTableColumns; ++k) out << ',' << csv::format_number(r.metrics[k].second.std);
        out << '\n';
    }
}

inline void write_metrics_csv(const std::filesystem::path& path, const std::vector<Outcome>& outcomes) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << "strategy,model,station,seed,metric,horizon_step,value\n";
    for (const auto& o : outcomes) {
        const auto& r = o.report;
        const std::string prefix = r.strategy + ',' + r.model + ',' + r.station + ',' + std::to_string(r.seed) + ',';
        for (std::size_t k = 0; k < kSerLevels.size(); ++k)
            out << prefix << "SER" << kSerLevels[k] << ",all," << csv::format_number(r.ser_table[k]) << '\n';
        out << prefix << "RMSE,all," << csv::format_number(r.rmse_mean) << '\n';
        for (std::size_t h = 0; h < r.rmse_step.size(); ++h)
            out << prefix << "RMSE," << h + 1 << ',' << csv::format_number(r.rmse_step[h]) << '\n';
        for (std::size_t h = 0; h < r.nse_step.size(); ++h)
            out << prefix << "NSE," << h + 1 << ',' << csv::format_number(r.nse_step[h]) << '\n';
    }
}

/// Trace rows are keyed by the first forecast day of each test window.
inline void write_trace_csv(const std::filesystem::path& path, const Outcome& o, const std::vector<Date>& dates,
                            std::size_t window) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    const auto& r = o.report;
    const std::size_t H = r.observations.cols();
    out << "strategy,model,station,seed,date,observed";
    for (std::size_t h = 1; h <= H; ++h) out << ",predicted_h" << h;
    out << ",alpha_hat,branch\n";
    for (std::size_t m = 0; m < r.observations.rows(); ++m) {
        out << r.strategy << ',' << r.model << ',' << r.station << ',' << r.seed << ','
            << format_date(dates[o.origin[m] + window]) << ',' << csv::format_number(r.observations(m, 0));
        for (std::size_t h = 0; h < H; ++h) out << ',' << csv::format_number(r.predictions(m, h));
        if (o.alpha_hat.empty())
            out << ",,\n";
        else
            out << ',' << csv::format_number(o.alpha_hat[m]) << ',' << to_string(o.branch[m]) << '\n';
    }
}

inline std::string trace_name(const ForecastReport& r) {
    return detail::slug(r.strategy + "_" + r.model + "_" + r.station) + "_seed" + std::to_string(r.seed) + ".csv";
}

/// Runs every (strategy, model, seed) job and writes the result files into
/// config.output_dir. On failure the manifest is left with status
/// "incomplete" and the error is rethrown.
inline RunResult run(const ExperimentConfig& c) {
    namespace fs = std::filesystem;
    if (const auto problems = validate(c); !problems.empty()) throw Error("invalid config: " + problems.front());
    const fs::path dir = c.output_dir;
    fs::create_directories(dir);
    const json cfg = config_to_json(c);
    json manifest;
    manifest["tool"] = "hydroq";
    manifest["version"] = kVersion;
    manifest["config_hash"] = "fnv1a64:" + fnv1a_hex(cfg.dump());
    manifest["status"] = "incomplete";
    manifest["config"] = cfg;
    auto write_manifest = [&] { std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n'; };
    write_manifest();

    RunResult result;
    try {
        bool need_statics = false;
        for (auto k : c.strategies)
            need_statics |= k == StrategyKind::BatchStatic || k == StrategyKind::StackedEnsemble;
        const RegionBundle bundle = load_region(c, need_statics, result.rejections);
        PreparedRegion pr = prepare_region(bundle, c.window, c.horizon, c.split);
        result.rejections.insert(result.rejections.end(), pr.rejections.begin(), pr.rejections.end());
        if (pr.stations.empty()) throw Error("no station survived embedding");
        result.dates = pr.dates;
        result.boundary = pr.boundary;

        const fs::path model_dir = c.save_models ? dir / "models" : fs::path{};
        if (!model_dir.empty()) fs::create_directories(model_dir);

        struct Job {
            StrategyKind strategy;
            std::string model;
            std::uint64_t seed;
            std::size_t station;
        };
        std::vector<Job> jobs;
        for (auto strategy : c.strategies)
            for (const auto& model : c.models)
                for (std::size_t r = 0; r < c.runs; ++r) {
                    const std::uint64_t seed = c.seed + r;
                    if (strategy == StrategyKind::Individual)
                        for (std::size_t k = 0; k < pr.stations.size(); ++k) jobs.push_back({strategy, model, seed, k});
                    else
                        jobs.push_back({strategy, model, seed, 0});
                }

        std::vector<std::vector<Outcome>> slots(jobs.size());
        std::vector<std::exception_ptr> errors(jobs.size());
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            for (std::size_t i; (i = next++) < jobs.size();) {
                try {
                    const auto& j = jobs[i];
                    slots[i] = run_job(c, pr, j.strategy, j.model, j.seed, j.station, model_dir);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        };
        std::size_t threads = c.threads ? c.threads : std::max(1u, std::thread::hardware_concurrency());
        threads = std::min(threads, jobs.size());
        {
            std::vector<std::jthread> pool;
            for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
            worker();
        }
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);

        for (auto& s : slots)
            for (auto& o : s) result.outcomes.push_back(std::move(o));
        // Station-major within each (strategy, model) so files list stably.
        std::stable_sort(result.outcomes.begin(), result.outcomes.end(), [&](const Outcome& a, const Outcome& b) {
            auto rank = [&](const ForecastReport& r) {
                const auto si = std::find_if(c.strategies.begin(), c.strategies.end(),
                                             [&](StrategyKind k) { return r.strategy == to_string(k); });
                const auto mi = std::find(c.models.begin(), c.models.end(), r.model);
                return std::make_tuple(si - c.strategies.begin(), mi - c.models.begin(), r.station, r.seed);
            };
            return rank(a.report) < rank(b.report);
        });
        result.summary = summarize_outcomes(result.outcomes);

        write_summary_csv(dir / "summary.csv", result.summary);
        write_metrics_csv(dir / "metrics.csv", result.outcomes);
        write_rejection_report(dir / "rejections.csv", result.rejections);
        fs::create_directories(dir / "traces");
        json traces = json::array();
        for (const auto& o : result.outcomes) {
            const auto name = trace_name(o.report);
            write_trace_csv(dir / "traces" / name, o, pr.dates, c.window);
            traces.push_back("traces/" + name);
        }

        json stations = json::array();
        for (const auto& s : pr.stations) stations.push_back(s.station_id);
        manifest["stations"] = stations;
        manifest["rejected_stations"] = result.rejections.size();
        manifest["first_date"] = format_date(pr.dates.front());
        manifest["last_date"] = format_date(pr.dates.back());
        manifest["train_boundary_date"] = format_date(pr.dates[pr.boundary]);
        manifest["metric_space"] = detail::space_name(c.space);
        manifest["outputs"] = {{"summary", "summary.csv"},
                               {"metrics", "metrics.csv"},
                               {"rejections", "rejections.csv"},
                               {"traces", traces}};
        manifest["status"] = "complete";
        write_manifest();
    } catch (const std::exception& e) {
        manifest["status"] = "incomplete";
        manifest["error"] = e.what();
        write_manifest();
        throw;
    }
    return result;
}

/// Writes a synthetic region in the ingest layout: timeseries/<id>.csv and statics.csv.
inline std::vector<std::filesystem::path> write_synthetic_region(const synth::SynthSpec& spec, std::size_t stations,
                                                                 const std::filesystem::path& out) {
    namespace fs = std::filesystem;
    fs::create_directories(out / "timeseries");
    std::vector<fs::path> written;
    std::vector<StaticAttributes> statics;
    for (const auto& s : synth::generate_region(spec, stations)) {
        const auto p = out / "timeseries" / (s.station_id + ".csv");
        write_timeseries_csv(p, s);
        written.push_back(p);
        statics.push_back(synth::compute_statics(s));
    }
    write_static_csv(out / "statics.csv", statics);
    written.push_back(out / "statics.csv");
    return written;
}

} // namespace hydroq::exp
