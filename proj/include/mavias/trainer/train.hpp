#pragma once

#include "mavias/autodiff/optimizer.hpp"
#include "mavias/trainer/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

namespace mavias::trainer {

/// One training record. `embedding` is the bias embedding e (all zeros when the
/// sample has no irrelevant tags).
struct Example {
    std::vector<double> features;
    std::vector<double> embedding;
    std::size_t label = 0;
};

using Dataset = std::vector<Example>;

enum class LrSchedule {
    none,
    /// Learning rate divided by 10 after each third of the epochs.
    step_thirds,
};

struct TrainerConfig {
    TrainMode mode = TrainMode::mavias;
    /// Weight of the alignment term. Must lie in (0, 1) for mavias runs; 0 only
    /// for ablations that drop the term.
    double alpha = 0.01;
    /// Target ratio ‖z_main‖ / ‖z_tag‖. The stronger the bias in the data, the
    /// smaller λ should be; values near 0.5 are a good start, above 0.5 for
    /// mildly biased data and below 0.5 for extreme bias rates.
    double lambda = 0.5;
    ad::OptimizerConfig optimizer = ad::SgdConfig{0.001, 0.9, 1e-4};
    std::size_t epochs = 10;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;
    LrSchedule schedule = LrSchedule::none;
};

/// Rejects configurations outside the documented ranges. `allow_zero_alpha`
/// admits the alignment-term ablation.
inline void validate(const TrainerConfig& c, bool allow_zero_alpha = false) {
    if (c.mode == TrainMode::mavias) {
        const bool alpha_ok = (c.alpha > 0.0 && c.alpha < 1.0) || (allow_zero_alpha && c.alpha == 0.0);
        if (!alpha_ok) throw ConfigError("alpha must lie in (0, 1), got " + std::to_string(c.alpha));
        if (!(c.lambda > 0.0 && c.lambda < 1.0))
            throw ConfigError("lambda must lie in (0, 1), got " + std::to_string(c.lambda));
    }
    if (c.epochs == 0) throw ConfigError("epochs must be positive");
    if (c.batch_size == 0) throw ConfigError("batch_size must be positive");
    ad::validate(c.optimizer);
}

inline double lr_scale(LrSchedule s, std::size_t epoch, std::size_t epochs) {
    if (s == LrSchedule::none) return 1.0;
    const auto third = std::min<std::size_t>(2, (3 * epoch) / epochs);
    return std::pow(0.1, static_cast<double>(third));
}

struct EpochMetrics {
    std::size_t epoch = 0;
    double cls_loss = 0.0;
    double align_loss = 0.0;
    double mean_norm_main = 0.0;
    double mean_norm_tag = 0.0;
    /// Mean over samples of |‖z_main‖ − λ‖z_tag‖|.
    double mean_norm_gap = 0.0;
    /// Accuracy of argmax z_main on the training batches as they were seen.
    double train_accuracy = 0.0;
};

struct TrainResult {
    std::vector<EpochMetrics> epochs;
};

inline Batch make_batch(const Dataset& data, std::span<const std::size_t> idx, const ModelShape& shape) {
    Batch b{DenseMatrix(idx.size(), shape.input_dim), DenseMatrix(idx.size(), shape.embed_dim), {}};
    b.labels.reserve(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        const auto& ex = data.at(idx[r]);
        if (ex.features.size() != shape.input_dim)
            throw ContractViolation("example " + std::to_string(idx[r]) + ": feature length " +
                                    std::to_string(ex.features.size()) + " != " + std::to_string(shape.input_dim));
        std::copy(ex.features.begin(), ex.features.end(), b.features.row_span(r).begin());
        if (!ex.embedding.empty()) {
            if (ex.embedding.size() != shape.embed_dim)
                throw ContractViolation("example " + std::to_string(idx[r]) + ": embedding length " +
                                        std::to_string(ex.embedding.size()) + " != " +
                                        std::to_string(shape.embed_dim));
            std::copy(ex.embedding.begin(), ex.embedding.end(), b.embeddings.row_span(r).begin());
        }
        b.labels.push_back(ex.label);
    }
    return b;
}

inline Batch make_batch(const Dataset& data, const ModelShape& shape) {
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), 0);
    return make_batch(data, idx, shape);
}

/// Called after every epoch; returning false stops training early.
using EpochCallback = std::function<bool(const EpochMetrics&, const BiasAwareModel&)>;

/// Mini-batch training with seeded shuffling. Deterministic given the model's
/// initial parameters and config.seed.
inline TrainResult train(BiasAwareModel& model, const Dataset& data, const TrainerConfig& config,
                         const EpochCallback& on_epoch = {}) {
    validate(config, true);
    if (data.empty()) throw ContractViolation("train: empty dataset");
    for (const auto& ex : data)
        if (ex.label >= model.shape().num_classes)
            throw ContractViolation("train: label " + std::to_string(ex.label) + " outside model classes");

    ad::Optimizer opt(config.optimizer);
    std::mt19937_64 rng(config.seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    TrainResult result;
    auto& params = model.params();

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        const double scale = lr_scale(config.schedule, epoch, config.epochs);
        EpochMetrics em;
        em.epoch = epoch;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t stop = std::min(order.size(), start + config.batch_size);
            std::span<const std::size_t> idx(order.data() + start, stop - start);
            Batch batch = make_batch(data, idx, model.shape());

            params.zero_grads();
            Tape tape(&params);
            auto parts = total_loss(tape, model, batch, config.mode, config.alpha, config.lambda);
            tape.backward(parts.total);
            opt.step(params, scale);

            const double w = static_cast<double>(batch.size());
            em.cls_loss += parts.cls * w;
            em.align_loss += parts.align * w;
            const auto& zm = tape.value(parts.z_main);
            for (std::size_t r = 0; r < batch.size(); ++r) {
                const double nm = ad::l2_norm(zm.row_span(r));
                double nt = 0.0;
                if (config.mode == TrainMode::mavias) nt = ad::l2_norm(tape.value(parts.z_tag).row_span(r));
                em.mean_norm_main += nm;
                em.mean_norm_tag += nt;
                em.mean_norm_gap += std::abs(nm - config.lambda * nt);
                if (argmax(zm.row_span(r)) == batch.labels[r]) ++correct;
            }
        }
        const double n = static_cast<double>(data.size());
        em.cls_loss /= n;
        em.align_loss /= n;
        em.mean_norm_main /= n;
        em.mean_norm_tag /= n;
        em.mean_norm_gap /= n;
        em.train_accuracy = static_cast<double>(correct) / n;
        result.epochs.push_back(em);
        if (on_epoch && !on_epoch(em, model)) break;
    }
    return result;
}

inline void write_metrics_csv_header(std::ostream& os) {
    os << "epoch,cls_loss,align_loss,mean_norm_main,mean_norm_tag,train_accuracy\n";
}

inline void write_metrics_csv_row(std::ostream& os, const EpochMetrics& m) {
    os << std::setprecision(17) << m.epoch << ',' << m.cls_loss << ',' << m.align_loss << ',' << m.mean_norm_main
       << ',' << m.mean_norm_tag << ',' << m.train_accuracy << '\n';
}

inline void write_metrics_csv(const std::string& path, const TrainResult& r) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write metrics file '" + path + "'");
    write_metrics_csv_header(out);
    for (const auto& m : r.epochs) write_metrics_csv_row(out, m);
}

} // namespace mavias::trainer
