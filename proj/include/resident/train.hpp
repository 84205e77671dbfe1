#pragma once

#include <chrono>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "resident/data.hpp"
#include "resident/model.hpp"
#include "resident/optimizer.hpp"

namespace resident {

struct TrainConfig {
    int batch_size = 100;
    int max_epochs = 50;
    int patience = 2;  // consecutive epochs without dev-loss improvement
    std::uint64_t seed = 1;
    bool shuffle = true;
};

struct EpochRecord {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double dev_loss = 0.0;
    double dev_accuracy = 0.0;
    double seconds = 0.0;
};

struct History {
    std::vector<EpochRecord> records;
    int best_epoch = 0;
};

// Early stopping on validation loss: improvement must be strict, ties keep
// the earlier epoch, and training stops once `patience` consecutive epochs
// fail to improve.
struct EarlyStopper {
    int patience;
    double best = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    int bad_epochs = 0;

    explicit EarlyStopper(int patience_) : patience(patience_) {}

    // observe one epoch's dev loss; returns true when training should stop
    bool observe(int epoch, double dev_loss) {
        if (dev_loss < best) {
            best = dev_loss;
            best_epoch = epoch;
            bad_epochs = 0;
        } else {
            ++bad_epochs;
        }
        return bad_epochs >= patience;
    }

    bool improved() const { return bad_epochs == 0; }
};

struct Batch {
    ByteBatch input;
    std::vector<std::int32_t> golds;
};

// Truncate to max_len bytes, right-pad with the PAD id, shuffle (seeded) when
// asked. Every example appears exactly once.
inline std::vector<Batch> make_batches(const Dataset& data, const LabelVocab& vocab,
                                       std::size_t batch_size, std::size_t max_len, Rng& rng,
                                       bool shuffle) {
    if (data.empty()) throw ContractError("make_batches: empty dataset");
    if (batch_size < 1) throw ContractError("make_batches: batch size must be >= 1");
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    if (shuffle) rng.shuffle(order);

    std::vector<Batch> out;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t n = std::min(batch_size, order.size() - start);
        Batch b;
        b.input.batch = n;
        b.input.len = max_len;
        b.input.ids.assign(n * max_len, kPadId);
        b.golds.resize(n);
        for (std::size_t row = 0; row < n; ++row) {
            const Example& ex = data[order[start + row]];
            const std::size_t len = std::min(ex.bytes.size(), max_len);
            for (std::size_t i = 0; i < len; ++i)
                b.input.ids[row * max_len + i] = ex.bytes[i];
            b.golds[row] = vocab.index_of(ex.label);
        }
        out.push_back(std::move(b));
    }
    return out;
}

namespace detail {

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
};

inline EvalResult evaluate_dataset(Model& model, const std::vector<Batch>& batches) {
    double loss_sum = 0.0;
    std::size_t correct = 0, total = 0;
    for (const Batch& b : batches) {
        const Tensor probs = predict_probs(model, b.input);
        const std::size_t k = probs.shape.back();
        for (std::size_t r = 0; r < b.golds.size(); ++r) {
            const double* row = &probs.data[r * k];
            loss_sum += -std::log(std::max(row[b.golds[r]], kProbFloor));
            std::size_t arg = 0;
            for (std::size_t c = 1; c < k; ++c)
                if (row[c] > row[arg]) arg = c;
            correct += arg == static_cast<std::size_t>(b.golds[r]) ? 1 : 0;
            ++total;
        }
    }
    return {loss_sum / static_cast<double>(total),
            static_cast<double>(correct) / static_cast<double>(total)};
}

inline std::vector<Tensor> snapshot_weights(Model& m) {
    std::vector<Tensor> snap;
    for (const ParamRef& r : trainable_params(m)) snap.push_back(*r.tensor);
    for (const ParamRef& r : buffer_params(m)) snap.push_back(*r.tensor);
    return snap;
}

inline void restore_weights(Model& m, const std::vector<Tensor>& snap) {
    std::size_t i = 0;
    for (const ParamRef& r : trainable_params(m)) *r.tensor = snap[i++];
    for (const ParamRef& r : buffer_params(m)) *r.tensor = snap[i++];
}

}  // namespace detail

// Mini-batch training with early stopping on dev loss. When `dev` is null, the
// last 10% of the seed-shuffled training data is held out. The returned model
// carries the best epoch's weights. `log` gets one human-readable line per
// epoch (with wall time); `metrics_out` gets one JSON object per epoch
// (without wall time, so fixed seeds give byte-identical files).
inline History train(Model& model, const Dataset& train_set, const Dataset* dev,
                     const TrainConfig& cfg, AdamState adam = {}, std::ostream* log = nullptr,
                     std::ostream* metrics_out = nullptr) {
    if (cfg.batch_size < 1 || cfg.max_epochs < 1 || cfg.patience < 0)
        throw ConfigError("train: bad batch_size/max_epochs/patience");
    if (train_set.empty()) throw ConfigError("train: empty training set");
    if (dev && dev->empty()) throw ConfigError("train: empty dev set");

    Rng rng(cfg.seed);

    Dataset held_train;
    Dataset held_dev;
    const Dataset* train_ptr = &train_set;
    const Dataset* dev_ptr = dev;
    if (!dev) {
        std::vector<std::size_t> order(train_set.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);
        std::size_t n_dev = std::max<std::size_t>(1, train_set.size() / 10);
        if (n_dev >= train_set.size())
            throw ConfigError("train: dataset too small to hold out a dev split");
        for (std::size_t i = 0; i < order.size(); ++i) {
            (i < order.size() - n_dev ? held_train : held_dev).push_back(train_set[order[i]]);
        }
        train_ptr = &held_train;
        dev_ptr = &held_dev;
    }
    for (const Example& ex : *train_ptr)
        if (!model.labels.contains(ex.label))
            throw ConfigError("train: label '" + ex.label + "' not in model vocabulary");
    for (const Example& ex : *dev_ptr)
        if (!model.labels.contains(ex.label))
            throw ConfigError("train: label '" + ex.label + "' not in model vocabulary");

    const std::size_t max_len = static_cast<std::size_t>(model.config.max_len);
    Rng dev_rng(0);
    const std::vector<Batch> dev_batches = make_batches(
        *dev_ptr, model.labels, static_cast<std::size_t>(cfg.batch_size), max_len, dev_rng, false);

    History hist;
    EarlyStopper stopper(cfg.patience);
    std::vector<Tensor> best_weights = detail::snapshot_weights(model);
    std::vector<ParamRef> params = trainable_params(model);

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<Batch> batches =
            make_batches(*train_ptr, model.labels, static_cast<std::size_t>(cfg.batch_size),
                         max_len, rng, cfg.shuffle);
        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (const Batch& b : batches) {
            Graph g;
            ModelNodes nodes = bind_model(g, model);
            NodeId probs = forward(g, model, nodes, b.input, LayerMode::Train, rng);
            NodeId loss = cross_entropy_mean(g, probs, b.golds);
            loss_sum += g.value(loss).item() * static_cast<double>(b.golds.size());
            seen += b.golds.size();
            auto grads = g.backward(loss);
            adam_step(params, grads, adam);
        }
        const double train_loss = loss_sum / static_cast<double>(seen);
        const detail::EvalResult dev_res = detail::evaluate_dataset(model, dev_batches);
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        hist.records.push_back({epoch, train_loss, dev_res.loss, dev_res.accuracy, seconds});
        const bool stop = stopper.observe(epoch, dev_res.loss);
        if (stopper.improved()) best_weights = detail::snapshot_weights(model);

        if (log) {
            *log << "epoch " << epoch << "  train_loss " << std::fixed << std::setprecision(4)
                 << train_loss << "  dev_loss " << dev_res.loss << "  dev_acc "
                 << dev_res.accuracy << "  (" << std::setprecision(1) << seconds << "s)"
                 << (stopper.improved() ? "  *" : "") << '\n';
            log->unsetf(std::ios::floatfield);
            *log << std::setprecision(6) << std::flush;
        }
        if (metrics_out) {
            nlohmann::json line{{"epoch", epoch},
                                {"train_loss", train_loss},
                                {"dev_loss", dev_res.loss},
                                {"dev_accuracy", dev_res.accuracy}};
            *metrics_out << line.dump() << '\n';
        }
        if (stop) break;
    }

    hist.best_epoch = stopper.best_epoch;
    detail::restore_weights(model, best_weights);
    return hist;
}

}  // namespace resident
