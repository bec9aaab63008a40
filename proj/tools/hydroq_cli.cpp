// hydroq: train, evaluate and compare streamflow forecasters from a JSON config.
#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"

#include "hydroq/experiment.hpp"

namespace {

namespace exp = hydroq::exp;

int cmd_run(const std::string& config, const std::string& out, const std::optional<std::uint64_t>& seed,
            const std::string& strategy, const std::string& model, const std::optional<std::size_t>& runs,
            const std::optional<std::size_t>& threads) {
    auto c = exp::load_config(config);
    if (!out.empty()) c.output_dir = out;
    if (seed) c.seed = *seed;
    if (!strategy.empty()) c.strategies = {hydroq::parse_strategy(strategy)};
    if (!model.empty()) c.models = {model};
    if (runs) c.runs = *runs;
    if (threads) c.threads = *threads;
    if (const auto problems = exp::validate(c); !problems.empty()) {
        for (const auto& p : problems) std::cerr << "config: " << p << '\n';
        return 2;
    }
    const auto result = exp::run(c);
    std::cout << "wrote " << (c.output_dir / "summary.csv").string() << " (" << result.outcomes.size()
              << " evaluations, " << result.rejections.size() << " stations rejected)\n";
    return 0;
}

int cmd_validate(const std::string& config) {
    const auto problems = exp::validate_file(config);
    for (const auto& p : problems) std::cout << p << '\n';
    if (problems.empty()) std::cout << "ok\n";
    return problems.empty() ? 0 : 2;
}

int cmd_synth(const std::string& spec_path, const std::string& out) {
    std::ifstream in(spec_path);
    if (!in) throw hydroq::Error("cannot open " + spec_path);
    std::size_t stations = 1;
    const auto spec = exp::synth_from_json(exp::json::parse(in), &stations);
    for (const auto& p : exp::write_synthetic_region(spec, stations, out)) std::cout << p.string() << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"hydroq: multi-step streamflow forecasting experiments"};
    app.require_subcommand(1);

    std::string config, out, strategy, model, spec;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> runs, threads;

    auto* run = app.add_subcommand("run", "train and evaluate every configured strategy and model");
    run->add_option("--config", config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    run->add_option("--out", out, "output directory (overrides output_dir)");
    run->add_option("--seed", seed, "base seed (overrides seed)");
    run->add_option("--strategy", strategy, "run only this strategy");
    run->add_option("--model", model, "run only this model");
    run->add_option("--runs", runs, "number of seeds (overrides runs)");
    run->add_option("--threads", threads, "worker threads, 0 = all cores");

    auto* val = app.add_subcommand("validate", "check a config without running it");
    val->add_option("--config", config, "experiment config (JSON)")->required();

    auto* syn = app.add_subcommand("synth", "write a synthetic region in the ingest CSV layout");
    syn->add_option("--spec", spec, "generator spec (JSON)")->required()->check(CLI::ExistingFile);
    syn->add_option("--out", out, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) return cmd_run(config, out, seed, strategy, model, runs, threads);
        if (*val) return cmd_validate(config);
        if (*syn) return cmd_synth(spec, out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
