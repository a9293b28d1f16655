#pragma once

#include "mavias/autodiff/matrix.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace mavias::ad {

/// Which sub-network a parameter belongs to.
enum class Partition { backbone, head, projection };

inline std::string_view to_string(Partition p) {
    switch (p) {
    case Partition::backbone: return "backbone";
    case Partition::head: return "head";
    case Partition::projection: return "projection";
    }
    return "?";
}

inline Partition partition_from_string(std::string_view s) {
    if (s == "backbone") return Partition::backbone;
    if (s == "head") return Partition::head;
    if (s == "projection") return Partition::projection;
    throw ConfigError("unknown parameter partition '" + std::string(s) + "'");
}

struct Parameter {
    std::string name;
    Partition partition = Partition::backbone;
    DenseMatrix value;
    DenseMatrix grad;
};

/// Index of a parameter inside its store. Stays valid across copies of the store.
struct ParamRef {
    std::size_t index = 0;
};

/// Flat, copyable collection of named parameters with same-shape gradient buffers.
class ParameterStore {
public:
    ParamRef add(std::string name, Partition partition, DenseMatrix value) {
        if (find(name)) throw ContractViolation("duplicate parameter name '" + name + "'");
        DenseMatrix grad(value.rows(), value.cols());
        params_.push_back({std::move(name), partition, std::move(value), std::move(grad)});
        return {params_.size() - 1};
    }

    Parameter& operator[](ParamRef ref) { return params_.at(ref.index); }
    const Parameter& operator[](ParamRef ref) const { return params_.at(ref.index); }

    std::optional<ParamRef> find(std::string_view name) const {
        for (std::size_t i = 0; i < params_.size(); ++i)
            if (params_[i].name == name) return ParamRef{i};
        return std::nullopt;
    }

    std::size_t size() const noexcept { return params_.size(); }
    auto begin() noexcept { return params_.begin(); }
    auto end() noexcept { return params_.end(); }
    auto begin() const noexcept { return params_.begin(); }
    auto end() const noexcept { return params_.end(); }

    void zero_grads() noexcept {
        for (auto& p : params_) p.grad.fill(0.0);
    }

    std::size_t scalar_count() const noexcept {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.value.size();
        return n;
    }

    std::size_t scalar_count(Partition part) const noexcept {
        std::size_t n = 0;
        for (const auto& p : params_)
            if (p.partition == part) n += p.value.size();
        return n;
    }

    /// Euclidean norm of the gradient restricted to the given partitions.
    template <class Pred>
    double grad_norm(Pred&& include) const {
        double s = 0.0;
        for (const auto& p : params_) {
            if (!include(p.partition)) continue;
            for (double g : p.grad.values()) s += g * g;
        }
        return std::sqrt(s);
    }

    /// Parameters compare equal when names, partitions and values match bit for bit.
    bool same_values(const ParameterStore& other) const {
        if (params_.size() != other.params_.size()) return false;
        for (std::size_t i = 0; i < params_.size(); ++i) {
            const auto& a = params_[i];
            const auto& b = other.params_[i];
            if (a.name != b.name || a.partition != b.partition || !(a.value == b.value)) return false;
        }
        return true;
    }

private:
    std::vector<Parameter> params_;
};

/// He-style fan-in initialisation: weights ~ N(0, 2 / fan_in), biases zero.
/// Weight matrices are stored out x in.
inline void he_init(DenseMatrix& weight, std::mt19937_64& rng) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(weight.cols()));
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& w : weight.values()) w = dist(rng);
}

} // namespace mavias::ad
