#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hydroq/neural/adam.hpp"
#include "hydroq/neural/loss.hpp"
#include "hydroq/neural/network.hpp"
#include "hydroq/series.hpp"

namespace hydroq::nn {

struct TrainConfig {
    std::size_t max_epochs = 150;
    std::size_t batch_size = 32;
    AdamConfig adam;
    std::uint64_t seed = 0;
    std::optional<std::size_t> early_stop_patience; // epochs without validation improvement

    void validate() const {
        if (max_epochs < 1) throw Error("TrainConfig: max_epochs must be >= 1");
        if (batch_size < 1) throw Error("TrainConfig: batch_size must be >= 1");
        if (!(adam.lr > 0.0)) throw Error("TrainConfig: learning rate must be > 0");
    }
};

struct TrainResult {
    NetParams params;
    std::vector<double> loss_history;       // mean mini-batch loss per epoch
    std::vector<double> validation_history; // empty without a validation set
    std::size_t best_epoch = 0;
};

/// Copies rows `idx` of the dataset into a batch.
inline void gather_batch(const WindowedDataset& ds, std::span<const std::size_t> idx, Tensor3& x,
                         Matrix& y) {
    const std::size_t N = ds.window, F = ds.features(), H = ds.horizon;
    if (x.dim0() != idx.size()) {
        x = Tensor3(idx.size(), N, F);
        y = Matrix(idx.size(), H);
    }
    for (std::size_t i = 0; i < idx.size(); ++i) {
        auto src = ds.inputs.slab(idx[i]);
        std::copy(src.begin(), src.end(), x.slab(i).begin());
        auto t = ds.targets.row(idx[i]);
        std::copy(t.begin(), t.end(), y.row(i).begin());
    }
}

/// Loss of `params` over a whole dataset, evaluated in batches.
inline double dataset_loss(const NetSpec& spec, const NetParams& params, const WindowedDataset& ds,
                           const LossSpec& loss, std::size_t batch_size = 256) {
    double total = 0.0;
    std::vector<std::size_t> idx;
    Tensor3 x;
    Matrix y;
    for (std::size_t start = 0; start < ds.size(); start += batch_size) {
        const std::size_t end = std::min(ds.size(), start + batch_size);
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        gather_batch(ds, idx, x, y);
        total += evaluate_loss(loss, forward(spec, params, x), y).loss * double(end - start);
    }
    return total / double(ds.size());
}

/// Shuffled mini-batch Adam. Deterministic for a fixed config.seed.
inline TrainResult train(const NetSpec& spec, const WindowedDataset& data, const LossSpec& loss,
                         const TrainConfig& cfg, const WindowedDataset* validation = nullptr,
                         std::optional<NetParams> initial = std::nullopt) {
    cfg.validate();
    loss.validate();
    if (data.size() == 0) throw Error("train: empty dataset");
    if (data.window != spec.window || data.features() != spec.input_features ||
        data.horizon != spec.horizon)
        throw ShapeError("train: dataset shape does not match NetSpec");
    if (cfg.early_stop_patience && !validation)
        throw Error("train: early stopping needs a validation set");

    TrainResult res;
    res.params = initial ? std::move(*initial) : init_params(spec, cfg.seed);
    NetParams best = res.params;
    double best_val = INFINITY;
    std::size_t since_best = 0;

    AdamState adam;
    std::mt19937_64 rng(cfg.seed ^ 0x5DEECE66DULL);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    ForwardCache cache;
    Tensor3 x;
    Matrix y;

    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            gather_batch(data, std::span<const std::size_t>(order).subspan(start, end - start), x, y);
            const Matrix pred = forward(spec, res.params, x, &cache);
            const LossValue lv = evaluate_loss(loss, pred, y);
            if (!std::isfinite(lv.loss))
                throw DivergenceError("train: non-finite loss at epoch " + std::to_string(epoch + 1) +
                                      ", batch starting at sample " + std::to_string(start));
            epoch_loss += lv.loss * double(end - start);
            const auto grad = backward(spec, res.params, cache, lv.grad);
            adam_step(res.params.values, grad, adam, cfg.adam);
        }
        res.loss_history.push_back(epoch_loss / double(order.size()));

        if (validation) {
            const double v = dataset_loss(spec, res.params, *validation, loss);
            res.validation_history.push_back(v);
            if (v < best_val) {
                best_val = v;
                best = res.params;
                res.best_epoch = epoch;
                since_best = 0;
            } else if (cfg.early_stop_patience && ++since_best >= *cfg.early_stop_patience) {
                break;
            }
        } else {
            res.best_epoch = epoch;
        }
    }
    if (cfg.early_stop_patience) res.params = std::move(best);
    return res;
}

} // namespace hydroq::nn
