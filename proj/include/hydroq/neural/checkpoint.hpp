#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "hydroq/csv.hpp"
#include "hydroq/error.hpp"
#include "hydroq/neural/spec.hpp"

namespace hydroq::nn {

inline constexpr const char* kCheckpointMagic = "hydroq-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    NetSpec spec;
    NetParams params;
    std::uint64_t seed = 0;
};

/// Text format: a key/value header followed by one shortest-round-trip
/// decimal per parameter, so read(write(x)) is bit-exact.
inline void write_checkpoint(const std::filesystem::path& path, const NetSpec& spec,
                             const NetParams& params, std::uint64_t seed) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n'
        << "kind " << to_string(spec.kind) << '\n'
        << "input_features " << spec.input_features << '\n'
        << "window " << spec.window << '\n'
        << "horizon " << spec.horizon << '\n'
        << "hidden_units " << spec.hidden_units << '\n'
        << "layers " << spec.layers << '\n'
        << "seed " << seed << '\n'
        << "count " << params.values.size() << '\n';
    for (double v : params.values) out << csv::format_number(v) << '\n';
    if (!out) throw Error("failed writing checkpoint " + path.string());
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open checkpoint " + path.string());
    const std::string p = path.string();
    std::string magic;
    int version = 0;
    in >> magic >> version;
    if (magic != kCheckpointMagic) throw Error(p + ": not a checkpoint file");
    if (version != kCheckpointVersion)
        throw Error(p + ": unsupported checkpoint version " + std::to_string(version));

    auto expect = [&](const char* key) {
        std::string k;
        in >> k;
        if (k != key) throw Error(p + ": expected key '" + key + "', found '" + k + "'");
    };
    Checkpoint ck;
    std::string kind;
    std::size_t count = 0;
    expect("kind");
    in >> kind;
    ck.spec.kind = parse_net_kind(kind);
    expect("input_features");
    in >> ck.spec.input_features;
    expect("window");
    in >> ck.spec.window;
    expect("horizon");
    in >> ck.spec.horizon;
    expect("hidden_units");
    in >> ck.spec.hidden_units;
    expect("layers");
    in >> ck.spec.layers;
    expect("seed");
    in >> ck.seed;
    expect("count");
    in >> count;
    if (!in) throw Error(p + ": truncated header");

    ck.params.layout = make_layout(ck.spec);
    if (count != ck.params.layout.total)
        throw Error(p + ": parameter count does not match architecture");
    ck.params.values.resize(count);
    std::string tok;
    for (std::size_t i = 0; i < count; ++i) {
        if (!(in >> tok)) throw Error(p + ": truncated parameter block");
        auto v = csv::parse_cell(tok);
        if (!v) throw Error(p + ": bad parameter value '" + tok + "'");
        ck.params.values[i] = *v;
    }
    return ck;
}

} // namespace hydroq::nn
