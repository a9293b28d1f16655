#pragma once

#include "mavias/autodiff/gradcheck.hpp"
#include "mavias/trainer/train.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <random>
#include <string>
#include <vector>

namespace mavias::trainer {

/// Norm of the CE gradient w.r.t. backbone + head parameters for each sample.
/// In mavias mode the CE is taken on the combined logits, in vanilla mode on z_main.
inline std::vector<double> per_sample_ce_grad_norms(const BiasAwareModel& model, const Dataset& samples,
                                                    TrainMode mode) {
    auto params = model.params();
    BiasAwareModel scratch(model.shape(), params);
    std::vector<double> norms;
    norms.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        std::size_t idx[1] = {i};
        Batch b = make_batch(samples, idx, model.shape());
        auto& store = scratch.params();
        store.zero_grads();
        Tape t(&store);
        Var z = mode == TrainMode::mavias ? forward_combined(t, scratch, b).z : forward_main(t, scratch, b);
        t.backward(ad::softmax_cross_entropy(t, z, b.labels));
        norms.push_back(store.grad_norm([](Partition p) { return p != Partition::projection; }));
    }
    return norms;
}

struct GradientDiagnostic {
    double mean_grad_norm_aligned = 0.0;
    double mean_grad_norm_conflicting = 0.0;
    /// aligned / conflicting.
    double ratio = 0.0;
};

inline GradientDiagnostic gradient_diagnostic(const BiasAwareModel& model, const Dataset& aligned,
                                              const Dataset& conflicting, TrainMode mode) {
    if (aligned.empty() || conflicting.empty())
        throw ContractViolation("gradient_diagnostic: both groups need at least one sample");
    auto mean_of = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    GradientDiagnostic d;
    d.mean_grad_norm_aligned = mean_of(per_sample_ce_grad_norms(model, aligned, mode));
    d.mean_grad_norm_conflicting = mean_of(per_sample_ce_grad_norms(model, conflicting, mode));
    d.ratio = d.mean_grad_norm_aligned / d.mean_grad_norm_conflicting;
    return d;
}

struct BranchGroupAccuracy {
    std::string group;
    std::size_t count = 0;
    std::optional<double> accuracy;
};

/// Accuracy of argmax z_tag alone per group; group_of[i] indexes group_names.
inline std::vector<BranchGroupAccuracy> bias_branch_group_accuracy(const BiasAwareModel& model,
                                                                   const Dataset& samples,
                                                                   const std::vector<std::size_t>& group_of,
                                                                   const std::vector<std::string>& group_names) {
    if (group_of.size() != samples.size())
        throw ContractViolation("bias_branch_group_accuracy: one group id per sample expected");
    std::vector<BranchGroupAccuracy> out(group_names.size());
    std::vector<std::size_t> correct(group_names.size(), 0);
    for (std::size_t g = 0; g < out.size(); ++g) out[g].group = group_names[g];
    if (samples.empty()) return out;
    Batch b = make_batch(samples, model.shape());
    DenseMatrix zt = tag_logits(model, b.embeddings);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        auto& g = out.at(group_of[i]);
        ++g.count;
        if (argmax(zt.row_span(i)) == samples[i].label) ++correct[group_of[i]];
    }
    for (std::size_t g = 0; g < out.size(); ++g)
        if (out[g].count > 0) out[g].accuracy = static_cast<double>(correct[g]) / static_cast<double>(out[g].count);
    return out;
}

/// Gradient check of the full training loss (CE on combined logits plus the
/// alignment term). If a parameter perturbation could flip a ReLU, the batch
/// features are jittered with a seeded perturbation and the check reruns.
inline ad::GradCheckResult finite_difference_check(BiasAwareModel& model, Batch batch, TrainMode mode, double alpha,
                                                   double lambda, const ad::GradCheckOptions& opt = {},
                                                   double kink_margin = 1e-3, int max_attempts = 20) {
    std::mt19937_64 rng(opt.seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> jitter(0.0, 0.05);
    for (int attempt = 0;; ++attempt) {
        auto build = [&](Tape& t) { return total_loss(t, model, batch, mode, alpha, lambda).total; };
        double margin = 0.0;
        ad::analytic_gradient(model.params(), build, &margin);
        if (margin >= kink_margin || attempt + 1 >= max_attempts)
            return ad::finite_difference_check(model.params(), build, opt);
        for (double& v : batch.features.values()) v += jitter(rng);
    }
}

inline nlohmann::json to_json(const GradientDiagnostic& d) {
    return {{"mean_grad_norm_aligned", d.mean_grad_norm_aligned},
            {"mean_grad_norm_conflicting", d.mean_grad_norm_conflicting},
            {"ratio", d.ratio}};
}

} // namespace mavias::trainer
