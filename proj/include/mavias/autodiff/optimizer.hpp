#pragma once

#include "mavias/autodiff/parameters.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

namespace mavias::ad {

struct SgdConfig {
    double lr = 0.01;
    double momentum = 0.0;
    double weight_decay = 0.0;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

using OptimizerConfig = std::variant<SgdConfig, AdamConfig>;

inline double learning_rate(const OptimizerConfig& c) {
    return std::visit([](const auto& cfg) { return cfg.lr; }, c);
}

inline void validate(const OptimizerConfig& c) {
    std::visit(
        [](const auto& cfg) {
            if (!(cfg.lr > 0.0) || !std::isfinite(cfg.lr))
                throw ConfigError("optimizer: learning rate must be > 0, got " + std::to_string(cfg.lr));
            if (cfg.weight_decay < 0.0) throw ConfigError("optimizer: weight_decay must be >= 0");
            if constexpr (std::is_same_v<std::decay_t<decltype(cfg)>, SgdConfig>) {
                if (cfg.momentum < 0.0 || cfg.momentum >= 1.0)
                    throw ConfigError("sgd: momentum must lie in [0, 1)");
            } else {
                if (cfg.beta1 < 0.0 || cfg.beta1 >= 1.0 || cfg.beta2 < 0.0 || cfg.beta2 >= 1.0)
                    throw ConfigError("adam: betas must lie in [0, 1)");
                if (!(cfg.eps > 0.0)) throw ConfigError("adam: eps must be > 0");
            }
        },
        c);
}

/// Stateful optimizer over a ParameterStore. Weight decay is L2-style: wd * w is
/// added to the gradient before the update rule runs.
class Optimizer {
public:
    explicit Optimizer(OptimizerConfig config) : config_(config) { validate(config_); }

    const OptimizerConfig& config() const noexcept { return config_; }
    std::uint64_t steps() const noexcept { return steps_; }

    /// Applies one update with the base learning rate multiplied by lr_scale.
    void step(ParameterStore& store, double lr_scale = 1.0) {
        if (slot1_.empty()) init_state(store);
        if (slot1_.size() != store.size()) throw ContractViolation("optimizer bound to a different store");
        ++steps_;
        std::size_t i = 0;
        for (auto& p : store) {
            auto w = p.value.values();
            auto g = p.grad.values();
            auto m = slot1_[i].values();
            auto v = slot2_[i].values();
            std::visit(
                [&](const auto& cfg) {
                    const double lr = cfg.lr * lr_scale;
                    for (std::size_t k = 0; k < w.size(); ++k) {
                        const double grad = g[k] + cfg.weight_decay * w[k];
                        if constexpr (std::is_same_v<std::decay_t<decltype(cfg)>, SgdConfig>) {
                            if (cfg.momentum > 0.0) {
                                m[k] = steps_ == 1 ? grad : cfg.momentum * m[k] + grad;
                                w[k] -= lr * m[k];
                            } else {
                                w[k] -= lr * grad;
                            }
                        } else {
                            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * grad;
                            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * grad * grad;
                            const double t = static_cast<double>(steps_);
                            const double mhat = m[k] / (1.0 - std::pow(cfg.beta1, t));
                            const double vhat = v[k] / (1.0 - std::pow(cfg.beta2, t));
                            w[k] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
                        }
                    }
                },
                config_);
            ++i;
        }
    }

private:
    void init_state(const ParameterStore& store) {
        for (const auto& p : store) {
            slot1_.emplace_back(p.value.rows(), p.value.cols());
            slot2_.emplace_back(p.value.rows(), p.value.cols());
        }
    }

    OptimizerConfig config_;
    std::uint64_t steps_ = 0;
    std::vector<DenseMatrix> slot1_; // momentum buffer / Adam first moment
    std::vector<DenseMatrix> slot2_; // Adam second moment
};

} // namespace mavias::ad
