#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "hydroq/csv.hpp"
#include "hydroq/error.hpp"
#include "hydroq/neural/checkpoint.hpp"
#include "hydroq/neural/network.hpp"
#include "hydroq/neural/train.hpp"
#include "hydroq/series.hpp"

namespace hydroq {

/// Empirical flow-duration curve of the training period.
struct FlowDurationCurve {
    std::vector<double> sorted; // ascending

    std::size_t n() const noexcept { return sorted.size(); }
};

inline FlowDurationCurve build_fdc(std::span<const double> train_flows) {
    if (train_flows.empty()) throw Error("build_fdc: no training flows");
    FlowDurationCurve fdc{{train_flows.begin(), train_flows.end()}};
    std::sort(fdc.sorted.begin(), fdc.sorted.end());
    return fdc;
}

/// Non-exceedance rank: fraction of training flows <= flow. Near 1 means a
/// flood by the standards of the training record.
inline double alpha_of(double flow, const FlowDurationCurve& fdc) {
    const auto it = std::upper_bound(fdc.sorted.begin(), fdc.sorted.end(), flow);
    return double(it - fdc.sorted.begin()) / double(fdc.n());
}

/// Rank of each sample's largest target value. Targets and the curve must be
/// in the same units.
inline std::vector<double> label_alpha(const WindowedDataset& ds, const FlowDurationCurve& fdc) {
    std::vector<double> alpha(ds.size());
    for (std::size_t m = 0; m < ds.size(); ++m) {
        auto r = ds.targets.row(m);
        alpha[m] = alpha_of(*std::max_element(r.begin(), r.end()), fdc);
    }
    return alpha;
}

struct SwitchConfig {
    double hi_threshold = 0.95;
    double mid_threshold = 0.70;
    double hi_tau = 0.95;
    double mid_tau = 0.70;

    void validate() const {
        if (!(0.0 < mid_threshold && mid_threshold < hi_threshold && hi_threshold < 1.0))
            throw Error("SwitchConfig: need 0 < mid_threshold < hi_threshold < 1");
        if (!(hi_tau > 0.0 && hi_tau < 1.0 && mid_tau > 0.0 && mid_tau < 1.0))
            throw Error("SwitchConfig: quantile levels must lie in (0,1)");
    }
};

enum class Branch { Hi, Mid, Lo };

inline const char* to_string(Branch b) {
    switch (b) {
    case Branch::Hi: return "hi";
    case Branch::Mid: return "mid";
    case Branch::Lo: return "lo";
    }
    return "?";
}

/// hi above hi_threshold, lo below mid_threshold, mid on the closed band
/// between them (both boundaries included).
inline Branch select_branch(double alpha_hat, const SwitchConfig& cfg) {
    if (alpha_hat > cfg.hi_threshold) return Branch::Hi;
    if (alpha_hat < cfg.mid_threshold) return Branch::Lo;
    return Branch::Mid;
}

struct SwitchEnsemble {
    nn::NetSpec alpha_spec;  // horizon 1
    nn::NetSpec branch_spec;
    nn::NetParams alpha_model;
    nn::NetParams branch_hi;
    nn::NetParams branch_mid;
    nn::NetParams branch_lo;
    FlowDurationCurve fdc;
    SwitchConfig config;
    std::uint64_t seed = 0;

    const nn::NetParams& branch(Branch b) const {
        return b == Branch::Hi ? branch_hi : b == Branch::Mid ? branch_mid : branch_lo;
    }
};

/// Trains the alpha regressor (MSE on rank labels) and the three branches on
/// the full training set, all with the same seed.
inline SwitchEnsemble train_switch(const WindowedDataset& train, const FlowDurationCurve& fdc,
                                   const nn::NetSpec& base, const SwitchConfig& cfg,
                                   const nn::TrainConfig& tc) {
    cfg.validate();
    SwitchEnsemble e;
    e.branch_spec = base;
    e.alpha_spec = base;
    e.alpha_spec.horizon = 1;
    e.fdc = fdc;
    e.config = cfg;
    e.seed = tc.seed;

    WindowedDataset alpha_ds = train;
    alpha_ds.horizon = 1;
    alpha_ds.targets = Matrix(train.size(), 1);
    const auto labels = label_alpha(train, fdc);
    std::ranges::copy(labels, alpha_ds.targets.data().begin());

    e.alpha_model = nn::train(e.alpha_spec, alpha_ds, nn::LossSpec::mse(), tc).params;
    e.branch_hi = nn::train(base, train, nn::LossSpec::pinball(cfg.hi_tau), tc).params;
    e.branch_mid = nn::train(base, train, nn::LossSpec::pinball(cfg.mid_tau), tc).params;
    e.branch_lo = nn::train(base, train, nn::LossSpec::mse(), tc).params;
    return e;
}

struct SwitchPrediction {
    std::vector<double> forecast;
    Branch branch = Branch::Lo;
    double alpha_hat = 0.0;
};

struct SwitchBatchPrediction {
    Matrix forecast;
    std::vector<Branch> branch;
    std::vector<double> alpha_hat;
};

inline SwitchBatchPrediction switch_predict(const SwitchEnsemble& e, const Tensor3& batch) {
    SwitchBatchPrediction out;
    const Matrix a = nn::forward(e.alpha_spec, e.alpha_model, batch);
    const Matrix hi = nn::forward(e.branch_spec, e.branch_hi, batch);
    const Matrix mid = nn::forward(e.branch_spec, e.branch_mid, batch);
    const Matrix lo = nn::forward(e.branch_spec, e.branch_lo, batch);
    out.forecast = Matrix(batch.dim0(), e.branch_spec.horizon);
    for (std::size_t m = 0; m < batch.dim0(); ++m) {
        const double alpha = std::clamp(a(m, 0), 0.0, 1.0);
        const Branch b = select_branch(alpha, e.config);
        const Matrix& src = b == Branch::Hi ? hi : b == Branch::Mid ? mid : lo;
        std::ranges::copy(src.row(m), out.forecast.row(m).begin());
        out.branch.push_back(b);
        out.alpha_hat.push_back(alpha);
    }
    return out;
}

inline SwitchPrediction switch_predict(const SwitchEnsemble& e, std::span<const double> window) {
    Tensor3 one(1, e.branch_spec.window, e.branch_spec.input_features);
    if (window.size() != one.data().size()) throw ShapeError("switch_predict: window size mismatch");
    std::ranges::copy(window, one.data().begin());
    auto b = switch_predict(e, one);
    return {b.forecast.data(), b.branch[0], b.alpha_hat[0]};
}

/// Directory bundle: manifest.json, four checkpoints and the curve values.
inline void save_ensemble(const std::filesystem::path& dir, const SwitchEnsemble& e) {
    std::filesystem::create_directories(dir);
    nn::write_checkpoint(dir / "alpha.ckpt", e.alpha_spec, e.alpha_model, e.seed);
    nn::write_checkpoint(dir / "branch_hi.ckpt", e.branch_spec, e.branch_hi, e.seed);
    nn::write_checkpoint(dir / "branch_mid.ckpt", e.branch_spec, e.branch_mid, e.seed);
    nn::write_checkpoint(dir / "branch_lo.ckpt", e.branch_spec, e.branch_lo, e.seed);
    {
        std::ofstream f(dir / "fdc.txt");
        for (double v : e.fdc.sorted) f << csv::format_number(v) << '\n';
        if (!f) throw Error("cannot write " + (dir / "fdc.txt").string());
    }
    nlohmann::ordered_json m;
    m["format"] = "hydroq-switch-ensemble";
    m["version"] = 1;
    m["alpha_model"] = "alpha.ckpt";
    m["branch_hi"] = "branch_hi.ckpt";
    m["branch_mid"] = "branch_mid.ckpt";
    m["branch_lo"] = "branch_lo.ckpt";
    m["fdc"] = "fdc.txt";
    m["fdc_count"] = e.fdc.n();
    m["seed"] = e.seed;
    m["switch"] = {{"hi_threshold", e.config.hi_threshold},
                   {"mid_threshold", e.config.mid_threshold},
                   {"hi_tau", e.config.hi_tau},
                   {"mid_tau", e.config.mid_tau}};
    std::ofstream(dir / "manifest.json") << m.dump(2) << '\n';
}

inline SwitchEnsemble load_ensemble(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw Error("missing manifest in " + dir.string());
    const auto m = nlohmann::json::parse(mf);
    if (m.value("format", "") != "hydroq-switch-ensemble")
        throw Error(dir.string() + ": not a switch-ensemble bundle");
    SwitchEnsemble e;
    auto a = nn::read_checkpoint(dir / m.at("alpha_model").get<std::string>());
    auto hi = nn::read_checkpoint(dir / m.at("branch_hi").get<std::string>());
    auto mid = nn::read_checkpoint(dir / m.at("branch_mid").get<std::string>());
    auto lo = nn::read_checkpoint(dir / m.at("branch_lo").get<std::string>());
    if (!(hi.spec == mid.spec) || !(hi.spec == lo.spec) || a.spec.window != hi.spec.window ||
        a.spec.input_features != hi.spec.input_features)
        throw Error(dir.string() + ": sub-models disagree on input shape");
    e.alpha_spec = a.spec;
    e.alpha_model = std::move(a.params);
    e.branch_spec = hi.spec;
    e.branch_hi = std::move(hi.params);
    e.branch_mid = std::move(mid.params);
    e.branch_lo = std::move(lo.params);
    e.seed = m.at("seed").get<std::uint64_t>();
    const auto& s = m.at("switch");
    e.config = {s.at("hi_threshold").get<double>(), s.at("mid_threshold").get<double>(),
                s.at("hi_tau").get<double>(), s.at("mid_tau").get<double>()};
    std::ifstream ff(dir / m.at("fdc").get<std::string>());
    for (std::string tok; ff >> tok;) {
        auto v = csv::parse_cell(tok);
        if (!v) throw Error(dir.string() + ": bad curve value '" + tok + "'");
        e.fdc.sorted.push_back(*v);
    }
    if (e.fdc.n() != m.at("fdc_count").get<std::size_t>())
        throw Error(dir.string() + ": curve length does not match manifest");
    return e;
}

} // namespace hydroq
