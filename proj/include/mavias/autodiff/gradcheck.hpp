#pragma once

#include "mavias/autodiff/parameters.hpp"
#include "mavias/autodiff/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

namespace mavias::ad {

/// Records a scalar loss on the given tape (which is attached to the store).
using LossBuilder = std::function<Var(Tape&)>;

struct GradCheckOptions {
    double eps = 1e-5;
    /// Denominator floor for the relative error, so coordinates whose true
    /// gradient is ~0 are judged on absolute error instead.
    double abs_floor = 1e-6;
    /// Above this many scalar parameters a seeded random subset is checked.
    std::size_t max_coordinates = 10000;
    std::uint64_t seed = 0;
};

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t coordinates_checked = 0;
    /// Smallest |pre-activation| at any ReLU for the unperturbed parameters.
    double min_relu_margin = 0.0;
};

/// Analytic gradient of `build` at the store's current parameters. Leaves the
/// gradient in the store (after zeroing it first) and returns the loss.
inline double analytic_gradient(ParameterStore& store, const LossBuilder& build, double* relu_margin = nullptr) {
    store.zero_grads();
    Tape t(&store);
    Var loss = build(t);
    t.backward(loss);
    if (relu_margin) *relu_margin = t.min_relu_margin();
    return t.scalar(loss);
}

inline double evaluate_loss(ParameterStore& store, const LossBuilder& build) {
    Tape t(&store);
    return t.scalar(build(t));
}

/// Compares reverse-mode gradients against central differences, coordinate by
/// coordinate. Parameter values are restored exactly afterwards.
inline GradCheckResult finite_difference_check(ParameterStore& store, const LossBuilder& build,
                                               const GradCheckOptions& opt = {}) {
    GradCheckResult res;
    analytic_gradient(store, build, &res.min_relu_margin);

    struct Coord {
        std::size_t param;
        std::size_t offset;
    };
    std::vector<Coord> coords;
    for (std::size_t p = 0; p < store.size(); ++p)
        for (std::size_t k = 0; k < store[ParamRef{p}].value.size(); ++k) coords.push_back({p, k});
    if (coords.size() > opt.max_coordinates) {
        std::mt19937_64 rng(opt.seed);
        std::shuffle(coords.begin(), coords.end(), rng);
        coords.resize(opt.max_coordinates);
    }

    for (const auto& c : coords) {
        auto& prm = store[ParamRef{c.param}];
        double& w = prm.value.data()[c.offset];
        const double analytic = prm.grad.data()[c.offset];
        const double saved = w;
        w = saved + opt.eps;
        const double up = evaluate_loss(store, build);
        w = saved - opt.eps;
        const double down = evaluate_loss(store, build);
        w = saved;
        const double numeric = (up - down) / (2.0 * opt.eps);
        const double denom = std::max({std::abs(analytic), std::abs(numeric), opt.abs_floor});
        res.max_relative_error = std::max(res.max_relative_error, std::abs(analytic - numeric) / denom);
        ++res.coordinates_checked;
    }
    return res;
}

} // namespace mavias::ad
