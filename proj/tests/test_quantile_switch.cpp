#include <gtest/gtest.h>

#include <random>

#include "hydroq/quantile_switch.hpp"
#include "hydroq/synthetic.hpp"
#include "test_util.hpp"

using namespace hydroq;

namespace {

WindowedDataset small_dataset(std::size_t length, std::uint64_t seed = 1) {
    synth::SynthSpec s;
    s.length = length;
    s.seed = seed;
    const Matrix raw = feature_matrix(synth::generate(s));
    return embed(apply_scale(raw, fit_minmax(raw, length)), 5, 5);
}

nn::TrainConfig quick(std::uint64_t seed) {
    nn::TrainConfig tc;
    tc.max_epochs = 3;
    tc.batch_size = 16;
    tc.seed = seed;
    return tc;
}

} // namespace

TEST(Fdc, AlphaExamples) {
    const std::vector<double> flows = {5, 1, 3, 2, 4};
    const auto fdc = build_fdc(flows);
    EXPECT_EQ(fdc.sorted, (std::vector<double>{1, 2, 3, 4, 5}));
    EXPECT_DOUBLE_EQ(alpha_of(5, fdc), 1.0);
    EXPECT_DOUBLE_EQ(alpha_of(100, fdc), 1.0);
    EXPECT_DOUBLE_EQ(alpha_of(0.5, fdc), 0.0);
    EXPECT_DOUBLE_EQ(alpha_of(3, fdc), 0.6);
    EXPECT_THROW(build_fdc(std::vector<double>{}), Error);
}

TEST(Fdc, AlphaMonotoneAndBounded) {
    std::mt19937_64 rng(3);
    std::exponential_distribution<double> e(1.0);
    std::vector<double> flows(500);
    for (auto& v : flows) v = e(rng);
    const auto fdc = build_fdc(flows);
    double prev = 0.0;
    for (double q = -1.0; q < 10.0; q += 0.01) {
        const double a = alpha_of(q, fdc);
        EXPECT_GE(a, prev);
        EXPECT_GE(a, 0.0);
        EXPECT_LE(a, 1.0);
        prev = a;
    }
}

TEST(Fdc, LabelUsesHorizonMaximum) {
    const auto fdc = build_fdc(std::vector<double>{1, 2, 3, 4, 5});
    WindowedDataset ds;
    ds.window = 1;
    ds.horizon = 3;
    ds.inputs = Tensor3(2, 1, 1);
    ds.targets = Matrix(2, 3);
    ds.targets(0, 0) = 1;
    ds.targets(0, 1) = 4;
    ds.targets(0, 2) = 2;
    ds.targets(1, 2) = 0.1;
    ds.origin_index = {0, 1};
    ds.station = {0, 0};
    EXPECT_EQ(label_alpha(ds, fdc), (std::vector<double>{0.8, 0.0}));
}

TEST(Switch, BranchExamples) {
    const SwitchConfig cfg;
    EXPECT_EQ(select_branch(0.97, cfg), Branch::Hi);
    EXPECT_EQ(select_branch(0.80, cfg), Branch::Mid);
    EXPECT_EQ(select_branch(0.50, cfg), Branch::Lo);
    EXPECT_EQ(select_branch(0.70, cfg), Branch::Mid);
    EXPECT_EQ(select_branch(0.95, cfg), Branch::Mid);
    EXPECT_EQ(select_branch(std::nextafter(0.95, 1.0), cfg), Branch::Hi);
    EXPECT_EQ(select_branch(std::nextafter(0.70, 0.0), cfg), Branch::Lo);
}

TEST(Switch, PartitionIsTotal) {
    const SwitchConfig cfg;
    for (int i = 0; i <= 10000; ++i) {
        const double a = i / 10000.0;
        const Branch b = select_branch(a, cfg);
        const bool hi = a > cfg.hi_threshold, lo = a < cfg.mid_threshold, mid = !hi && !lo;
        EXPECT_EQ(int(hi) + int(lo) + int(mid), 1);
        EXPECT_EQ(b, hi ? Branch::Hi : lo ? Branch::Lo : Branch::Mid) << a;
    }
}

TEST(Switch, DegenerateThresholds) {
    // Coinciding thresholds leave only the shared point in mid.
    const SwitchConfig zero{0.0, 0.0, 0.95, 0.7}, one{1.0, 1.0, 0.95, 0.7};
    EXPECT_EQ(select_branch(0.0, zero), Branch::Mid);
    EXPECT_EQ(select_branch(0.5, zero), Branch::Hi);
    EXPECT_EQ(select_branch(1.0, one), Branch::Mid);
    EXPECT_EQ(select_branch(0.5, one), Branch::Lo);
    EXPECT_THROW(zero.validate(), Error);
    EXPECT_THROW(one.validate(), Error);
    EXPECT_THROW((SwitchConfig{0.6, 0.7, 0.95, 0.7}.validate()), Error);
    EXPECT_THROW((SwitchConfig{0.95, 0.7, 1.0, 0.7}.validate()), Error);
}

TEST(Switch, OutputIsChosenBranchBitForBit) {
    const auto ds = small_dataset(400);
    const auto fdc = build_fdc(std::vector<double>(ds.targets.data().begin(), ds.targets.data().end()));
    const nn::NetSpec base{nn::NetKind::LSTM, 6, 5, 5, 4, 1};
    const auto e = train_switch(ds, fdc, base, {}, quick(9));
    const auto out = switch_predict(e, ds.inputs);
    for (auto b : {Branch::Hi, Branch::Mid, Branch::Lo}) {
        const Matrix ref = nn::forward(base, e.branch(b), ds.inputs);
        for (std::size_t m = 0; m < ds.size(); ++m) {
            if (out.branch[m] != b) continue;
            for (std::size_t h = 0; h < 5; ++h) ASSERT_EQ(out.forecast(m, h), ref(m, h));
        }
    }
    for (std::size_t m = 0; m < ds.size(); ++m) {
        EXPECT_EQ(out.branch[m], select_branch(out.alpha_hat[m], e.config));
        EXPECT_GE(out.alpha_hat[m], 0.0);
        EXPECT_LE(out.alpha_hat[m], 1.0);
    }
    const auto single = switch_predict(e, ds.inputs.slab(3));
    EXPECT_EQ(single.branch, out.branch[3]);
    for (std::size_t h = 0; h < 5; ++h) EXPECT_EQ(single.forecast[h], out.forecast(3, h));
}

TEST(Switch, LoBranchIsTheMseBaseline) {
    const auto ds = small_dataset(300);
    const auto fdc = build_fdc(std::vector<double>(ds.targets.data().begin(), ds.targets.data().end()));
    const nn::NetSpec base{nn::NetKind::LSTM, 6, 5, 5, 3, 1};
    const auto tc = quick(4);
    const auto e = train_switch(ds, fdc, base, {}, tc);
    const auto mse = nn::train(base, ds, nn::LossSpec::mse(), tc);
    EXPECT_EQ(e.branch_lo.values, mse.params.values);
}

TEST(Switch, EnsembleRoundTrip) {
    testutil::TempDir dir;
    const auto ds = small_dataset(300);
    const auto fdc = build_fdc(std::vector<double>(ds.targets.data().begin(), ds.targets.data().end()));
    const nn::NetSpec base{nn::NetKind::CNN1D, 6, 5, 5, 3, 1};
    const auto e = train_switch(ds, fdc, base, {0.9, 0.6, 0.9, 0.6}, quick(2));
    save_ensemble(dir.path() / "bundle", e);
    const auto back = load_ensemble(dir.path() / "bundle");
    EXPECT_EQ(back.alpha_model.values, e.alpha_model.values);
    EXPECT_EQ(back.branch_hi.values, e.branch_hi.values);
    EXPECT_EQ(back.branch_mid.values, e.branch_mid.values);
    EXPECT_EQ(back.branch_lo.values, e.branch_lo.values);
    EXPECT_EQ(back.fdc.sorted, e.fdc.sorted);
    EXPECT_EQ(back.config.hi_threshold, 0.9);
    EXPECT_EQ(back.seed, 2u);
    EXPECT_EQ(switch_predict(back, ds.inputs).forecast, switch_predict(e, ds.inputs).forecast);
}

TEST(Switch, LoadRejectsForeignDirectory) {
    testutil::TempDir dir;
    EXPECT_THROW(load_ensemble(dir.path()), Error);
    testutil::write_file(dir.path() / "manifest.json", R"({"format":"other"})");
    EXPECT_THROW(load_ensemble(dir.path()), Error);
}

TEST(Switch, LabelsSeparateStormWindows) {
    const auto ds = small_dataset(3000, 5);
    const auto fdc = build_fdc(std::vector<double>(ds.targets.data().begin(), ds.targets.data().end()));
    const auto labels = label_alpha(ds, fdc);
    std::size_t hi = 0, lo = 0;
    for (double a : labels) {
        hi += a > 0.95;
        lo += a < 0.70;
    }
    EXPECT_GT(hi, 0u);
    EXPECT_GT(lo, 0u);
    EXPECT_LT(hi, lo);
}

TEST(Switch, TrainedAlphaSeparatesExtremeFromCalmWindows) {
    const auto ds = small_dataset(2000, 8);
    const auto flows = std::vector<double>(ds.targets.data().begin(), ds.targets.data().end());
    const auto fdc = build_fdc(flows);
    const nn::NetSpec base{nn::NetKind::LSTM, 6, 5, 5, 6, 1};
    nn::TrainConfig tc = quick(1);
    tc.max_epochs = 10;
    tc.adam.lr = 5e-3;
    const auto e = train_switch(ds, fdc, base, {}, tc);
    const auto pred = switch_predict(e, ds.inputs);
    const auto labels = label_alpha(ds, fdc);
    double hi = 0, lo = 0;
    std::size_t nh = 0, nl = 0;
    for (std::size_t m = 0; m < ds.size(); ++m) {
        if (labels[m] > 0.95) hi += pred.alpha_hat[m], ++nh;
        if (labels[m] < 0.70) lo += pred.alpha_hat[m], ++nl;
    }
    ASSERT_GT(nh, 0u);
    ASSERT_GT(nl, 0u);
    EXPECT_GT(hi / double(nh), lo / double(nl));
}
