#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <map>
#include <sstream>

#include "hydroq/experiment.hpp"
#include "test_util.hpp"

using namespace hydroq;
namespace fs = std::filesystem;

namespace {

int cli(const std::string& args) {
    const std::string cmd = std::string(HYDROQ_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(testutil::read_file(p));
    for (std::string line; std::getline(in, line);) rows.push_back(csv::split(line));
    return rows;
}

std::size_t column(const std::vector<std::string>& header, const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw std::runtime_error("no column " + name);
    return std::size_t(it - header.begin());
}

std::string synth_config(const fs::path& out, std::size_t stations, std::size_t runs,
                         const std::string& strategies = R"(["INDIVIDUAL"])",
                         const std::string& models = R"(["LSTM"])", const std::string& extra = "") {
    std::ostringstream s;
    s << R"({"data": {"synth": {"seed": 3, "length": 700, "stations": )" << stations << R"(}},
        "strategies": )" << strategies << R"(, "models": )" << models << R"(,
        "hidden_units": 4, "runs": )" << runs << R"(, "seed": 10,
        "train": {"max_epochs": 2, "batch_size": 32},)" << extra << R"(
        "output_dir": ")" << out.generic_string() << R"("})";
    return s.str();
}

exp::ExperimentConfig parse(const std::string& text, const fs::path& base = {}) {
    return exp::config_from_json(exp::json::parse(text), base);
}

} // namespace

TEST(Config, DefaultsAndOverrides) {
    const auto c = parse(R"({"data": {"synth": {}}})");
    EXPECT_EQ(c.window, 5u);
    EXPECT_EQ(c.horizon, 5u);
    EXPECT_EQ(c.runs, 5u);
    EXPECT_EQ(c.strategies, std::vector<StrategyKind>{StrategyKind::Individual});
    EXPECT_EQ(c.switch_config.hi_threshold, 0.95);
    EXPECT_EQ(c.train.max_epochs, 150u);
    EXPECT_TRUE(exp::validate(c).empty());

    const auto d = parse(R"({"data": {"timeseries_dir": "ts", "static_csv": "/abs/s.csv"},
                             "window": 7, "metric_space": "original",
                             "train": {"early_stop_patience": 4}})",
                         "/base");
    EXPECT_EQ(d.data.timeseries_dir, fs::path("/base/ts"));
    EXPECT_EQ(d.data.static_csv, fs::path("/abs/s.csv"));
    EXPECT_EQ(d.window, 7u);
    EXPECT_EQ(d.space, MetricSpace::Original);
    EXPECT_EQ(d.train.early_stop_patience, std::optional<std::size_t>(4));
}

TEST(Config, RejectsUnknownKeysAndBadTypes) {
    EXPECT_THROW(parse(R"({"data": {"synth": {}}, "windw": 5})"), Error);
    EXPECT_THROW(parse(R"({"data": {"synth": {"seeed": 1}}})"), Error);
    EXPECT_THROW(parse(R"({"data": {"synth": {}}, "runs": "five"})"), Error);
    EXPECT_THROW(parse(R"({"data": {"synth": {}}, "strategies": ["SOLO"]})"), Error);
    EXPECT_THROW(parse(R"({"window": 5})"), Error);
}

TEST(Validate, Diagnostics) {
    auto c = parse(R"({"data": {"synth": {}}, "switch": {"mid_threshold": 0.97}})");
    EXPECT_FALSE(exp::validate(c).empty());

    testutil::TempDir dir;
    fs::create_directories(dir / "ts");
    c = parse(R"({"data": {"timeseries_dir": "ts"}, "strategies": ["BATCH_STATIC"]})", dir.path());
    const auto problems = exp::validate(c);
    ASSERT_EQ(problems.size(), 1u);
    EXPECT_NE(problems[0].find("static_csv"), std::string::npos);

    c = parse(R"({"data": {"timeseries_dir": "missing"}})", dir.path());
    EXPECT_FALSE(exp::validate(c).empty());
    c = parse(R"({"data": {"synth": {}}, "models": ["QUANTILE_LSTM"], "strategies": ["BATCH_INDICATOR"]})");
    EXPECT_FALSE(exp::validate(c).empty());
    c = parse(R"({"data": {"synth": {}}, "models": ["GRU"]})");
    EXPECT_FALSE(exp::validate(c).empty());
    c = parse(R"({"data": {"synth": {}}, "runs": 0})");
    EXPECT_FALSE(exp::validate(c).empty());
    c = parse(R"({"data": {"synth": {}}, "window": 3, "models": ["CNN1D"]})");
    EXPECT_FALSE(exp::validate(c).empty());

    testutil::write_file(dir / "bad.json", "{ not json");
    EXPECT_FALSE(exp::validate_file(dir / "bad.json").empty());
    testutil::write_file(dir / "good.json", R"({"data": {"synth": {"length": 200}}})");
    EXPECT_TRUE(exp::validate_file(dir / "good.json").empty());
}

TEST(Cli, ValidateExitCodes) {
    testutil::TempDir dir;
    testutil::write_file(dir / "good.json", R"({"data": {"synth": {}}})");
    testutil::write_file(dir / "bad.json", R"({"data": {"synth": {}}, "switch": {"hi_threshold": 0.5}})");
    EXPECT_EQ(cli("validate --config " + (dir / "good.json").string()), 0);
    EXPECT_EQ(cli("validate --config " + (dir / "bad.json").string()), 2);
    EXPECT_NE(cli("frobnicate"), 0);
}

TEST(Cli, RunTwiceIsByteIdentical) {
    testutil::TempDir dir;
    testutil::write_file(dir / "cfg.json", synth_config(dir / "unused", 1, 2, R"(["INDIVIDUAL"])",
                                                        R"(["LSTM", "QUANTILE_LSTM"])"));
    ASSERT_EQ(cli("run --config " + (dir / "cfg.json").string() + " --out " + (dir / "a").string()), 0);
    ASSERT_EQ(cli("run --config " + (dir / "cfg.json").string() + " --out " + (dir / "b").string() +
                  " --threads 3"),
              0);
    for (const char* f : {"summary.csv", "metrics.csv", "traces/INDIVIDUAL_QUANTILE_LSTM_SYN000_seed11.csv"})
        EXPECT_EQ(testutil::read_file(dir / "a" / f), testutil::read_file(dir / "b" / f)) << f;
    const auto ma = exp::json::parse(testutil::read_file(dir / "a/manifest.json"));
    const auto mb = exp::json::parse(testutil::read_file(dir / "b/manifest.json"));
    EXPECT_EQ(ma["config_hash"], mb["config_hash"]);
    EXPECT_EQ(ma["status"], "complete");
}

TEST(Cli, SeedOverrideChangesResults) {
    testutil::TempDir dir;
    testutil::write_file(dir / "cfg.json", synth_config(dir / "unused", 1, 1));
    ASSERT_EQ(cli("run --config " + (dir / "cfg.json").string() + " --out " + (dir / "a").string()), 0);
    ASSERT_EQ(cli("run --config " + (dir / "cfg.json").string() + " --out " + (dir / "b").string() +
                  " --seed 99"),
              0);
    EXPECT_NE(testutil::read_file(dir / "a/summary.csv"), testutil::read_file(dir / "b/summary.csv"));
    EXPECT_TRUE(fs::exists(dir / "b/traces/INDIVIDUAL_LSTM_SYN000_seed99.csv"));
}

TEST(Run, SummaryIsMeanAndStdOverSeeds) {
    testutil::TempDir dir;
    auto c = parse(synth_config(dir / "out", 1, 3));
    exp::run(c);
    const auto metrics = read_csv(dir / "out/metrics.csv");
    const auto summary = read_csv(dir / "out/summary.csv");
    ASSERT_EQ(summary.size(), 2u);
    const auto& hdr = summary[0];
    for (const std::string name : {"SER1", "SER10", "RMSE"}) {
        std::vector<long double> v;
        for (std::size_t i = 1; i < metrics.size(); ++i)
            if (metrics[i][4] == name && metrics[i][5] == "all") v.push_back(std::stold(metrics[i][6]));
        ASSERT_EQ(v.size(), 3u);
        const long double mean = (v[0] + v[1] + v[2]) / 3;
        long double ss = 0;
        for (auto x : v) ss += (x - mean) * (x - mean);
        EXPECT_NEAR(std::stod(summary[1][column(hdr, name)]), double(mean), 1e-12);
        EXPECT_NEAR(std::stod(summary[1][column(hdr, name + "_std")]), double(std::sqrt(ss / 2)), 1e-12);
    }
    EXPECT_EQ(summary[1][column(hdr, "seeds")], "10;11;12");
    EXPECT_EQ(summary[1][column(hdr, "runs")], "3");
}

TEST(Run, StrategyComparisonLayout) {
    testutil::TempDir dir;
    auto c = parse(synth_config(dir / "out", 3, 1,
                                R"(["INDIVIDUAL", "BATCH_INDICATOR", "BATCH_STATIC", "STACKED_ENSEMBLE"])"));
    const auto res = exp::run(c);
    const auto summary = read_csv(dir / "out/summary.csv");
    const std::vector<std::string> table = {"SER1", "SER2", "SER5", "SER10", "SER25", "SER50", "SER75", "RMSE"};
    EXPECT_EQ(std::vector<std::string>(summary[0].begin() + 5, summary[0].begin() + 13), table);
    std::map<std::string, int> all_rows, station_rows;
    for (std::size_t i = 1; i < summary.size(); ++i) {
        (summary[i][2] == "ALL" ? all_rows : station_rows)[summary[i][0]]++;
        for (std::size_t k = 5; k < 13; ++k) EXPECT_TRUE(std::isfinite(std::stod(summary[i][k])));
    }
    for (const char* s : {"INDIVIDUAL", "BATCH_INDICATOR", "BATCH_STATIC", "STACKED_ENSEMBLE"}) {
        EXPECT_EQ(all_rows[s], 1) << s;
        EXPECT_EQ(station_rows[s], 3) << s;
    }
    EXPECT_EQ(res.outcomes.size(), 12u);
}

TEST(Run, EveryRowIsAttributableAndNoTestDataInTraining) {
    testutil::TempDir dir;
    auto c = parse(synth_config(dir / "out", 2, 1, R"(["INDIVIDUAL", "BATCH_STATIC"])"));
    exp::run(c);
    const auto manifest = exp::json::parse(testutil::read_file(dir / "out/manifest.json"));
    const Date boundary = *parse_date(manifest["train_boundary_date"].get<std::string>());
    for (const auto& e : fs::directory_iterator(dir / "out/traces")) {
        const auto rows = read_csv(e.path());
        ASSERT_GT(rows.size(), 1u);
        const std::size_t dc = column(rows[0], "date");
        for (std::size_t i = 1; i < rows.size(); ++i) {
            for (std::size_t k = 0; k < 4; ++k) ASSERT_FALSE(rows[i][k].empty());
            // The trace date is the first forecast day; its inputs start window days earlier.
            const Date first_input = *parse_date(rows[i][dc]) - std::chrono::days{c.window};
            ASSERT_GE(first_input, boundary) << e.path();
        }
    }
    for (const auto& row : read_csv(dir / "out/metrics.csv"))
        for (std::size_t k = 0; k < 4; ++k) ASSERT_FALSE(row[k].empty());
}

TEST(Run, QuantileTraceCarriesBranches) {
    testutil::TempDir dir;
    auto c = parse(synth_config(dir / "out", 1, 1, R"(["INDIVIDUAL"])", R"(["QUANTILE_LSTM"])"));
    exp::run(c);
    const auto rows = read_csv(dir / "out/traces/INDIVIDUAL_QUANTILE_LSTM_SYN000_seed10.csv");
    const std::size_t ac = column(rows[0], "alpha_hat"), bc = column(rows[0], "branch");
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const double a = std::stod(rows[i][ac]);
        EXPECT_EQ(rows[i][bc], to_string(select_branch(a, SwitchConfig{})));
    }
}

TEST(Run, OriginalSpaceTraceMatchesRawFlows) {
    testutil::TempDir dir;
    auto c = parse(synth_config(dir / "out", 1, 1, R"(["INDIVIDUAL"])", R"(["LSTM"])",
                                R"("metric_space": "original",)"));
    exp::run(c);
    synth::SynthSpec s;
    s.seed = 3;
    s.length = 700;
    const auto raw = synth::generate(s);
    const auto rows = read_csv(dir / "out/traces/INDIVIDUAL_LSTM_SYN000_seed10.csv");
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto t = std::size_t((*parse_date(rows[i][4]) - s.start).count());
        EXPECT_NEAR(std::stod(rows[i][5]), raw.streamflow[t], 1e-9 * (1 + raw.streamflow[t]));
    }
}

TEST(Run, FileRegionWithFilterAndRejections) {
    testutil::TempDir dir;
    synth::SynthSpec s;
    s.length = 600;
    exp::write_synthetic_region(s, 3, dir.path());
    // Knock a long hole into one station so the missing-data policy drops it.
    auto bad = load_timeseries_csv(dir / "timeseries/SYN001.csv");
    for (std::size_t t = 100; t < 115; ++t) bad.streamflow[t] = std::nan("");
    write_timeseries_csv(dir / "timeseries/SYN001.csv", bad);
    testutil::write_file(dir / "regions.csv", "station_id,state\nSYN000,SA\nSYN001,SA\nSYN002,VIC\n");
    auto c = parse(R"({"data": {"timeseries_dir": "timeseries", "static_csv": "statics.csv",
                                "region_map": "regions.csv"},
                       "region": "SA", "hidden_units": 3, "runs": 1,
                       "train": {"max_epochs": 1}, "output_dir": "out"})",
                   dir.path());
    ASSERT_TRUE(exp::validate(c).empty());
    const auto res = exp::run(c);
    ASSERT_EQ(res.outcomes.size(), 1u);
    EXPECT_EQ(res.outcomes[0].report.station, "SYN000");
    const auto rej = read_csv(dir / "out/rejections.csv");
    ASSERT_EQ(rej.size(), 2u);
    EXPECT_EQ(rej[1][0], "SYN001");
    EXPECT_EQ(rej[1][1], "flow_gap_too_long");
}

TEST(Run, FailureMarksManifestIncomplete) {
    testutil::TempDir dir;
    fs::create_directories(dir / "ts");
    testutil::write_file(dir / "ts/X.csv", "date,precip_mm,tmin_c,tmax_c,streamflow\n2000-01-01,1,2,3,-4\n");
    testutil::write_file(dir / "cfg.json", R"({"data": {"timeseries_dir": "ts"}, "output_dir": "out"})");
    EXPECT_EQ(cli("run --config " + (dir / "cfg.json").string()), 1);
    const auto m = exp::json::parse(testutil::read_file(dir / "out/manifest.json"));
    EXPECT_EQ(m["status"], "incomplete");
    EXPECT_NE(m["error"].get<std::string>().find("negative"), std::string::npos);
    EXPECT_FALSE(fs::exists(dir / "out/summary.csv"));
}

TEST(Run, EarlyStoppingAndSavedModels) {
    testutil::TempDir dir;
    auto c = parse(synth_config(dir / "out", 1, 1, R"(["INDIVIDUAL"])", R"(["LSTM", "QUANTILE_LSTM"])",
                                R"("save_models": true,)"));
    c.train.early_stop_patience = 1;
    c.train.max_epochs = 4;
    exp::run(c);
    const auto ck = nn::read_checkpoint(dir / "out/models/INDIVIDUAL_LSTM_SYN000_seed10.ckpt");
    EXPECT_EQ(ck.spec.hidden_units, 4u);
    const auto e = load_ensemble(dir / "out/models/INDIVIDUAL_QUANTILE_LSTM_SYN000_seed10");
    EXPECT_EQ(e.branch_spec, ck.spec);
}

TEST(Cli, SynthWritesIngestFiles) {
    testutil::TempDir dir;
    testutil::write_file(dir / "spec.json", R"({"seed": 5, "length": 400, "stations": 2})");
    ASSERT_EQ(cli("synth --spec " + (dir / "spec.json").string() + " --out " + (dir / "out").string()), 0);
    synth::SynthSpec s;
    s.seed = 5;
    s.length = 400;
    const auto expected = synth::generate_region(s, 2);
    for (const auto& e : expected) {
        const auto back = load_timeseries_csv(dir / "out/timeseries" / (e.station_id + ".csv"));
        EXPECT_EQ(back.streamflow, e.streamflow);
        EXPECT_EQ(back.precip, e.precip);
        EXPECT_EQ(back.dates, e.dates);
    }
    const auto statics = load_static_csv(dir / "out/statics.csv");
    EXPECT_EQ(statics.records.size(), 2u);
}
