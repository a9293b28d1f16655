#pragma once

#include "mavias/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace mavias::eval {

/// Sample-to-group mapping. group_of[i] indexes into names.
struct GroupAssignment {
    std::vector<std::string> names;
    std::vector<std::size_t> group_of;

    std::size_t num_groups() const noexcept { return names.size(); }

    std::vector<std::size_t> sizes() const {
        std::vector<std::size_t> s(names.size(), 0);
        for (auto g : group_of) ++s.at(g);
        return s;
    }
};

struct GroupAccuracy {
    std::string group;
    std::size_t count = 0;
    /// Absent for empty groups.
    std::optional<double> accuracy;
};

/// Worst-group, unweighted-average and size-weighted accuracy over the non-empty groups.
struct GroupMetrics {
    std::vector<GroupAccuracy> groups;
    double worst_group_accuracy = 0.0;
    double average_accuracy = 0.0;
    double weighted_accuracy = 0.0;
    std::vector<std::string> warnings;
};

inline void check_lengths(std::size_t a, std::size_t b, const char* what) {
    if (a != b)
        throw ContractViolation(std::string(what) + ": length mismatch (" + std::to_string(a) + " vs " +
                                std::to_string(b) + ")");
}

inline GroupMetrics group_metrics(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                                  const GroupAssignment& groups) {
    check_lengths(predictions.size(), labels.size(), "group_metrics");
    check_lengths(predictions.size(), groups.group_of.size(), "group_metrics");
    const std::size_t G = groups.num_groups();
    std::vector<std::size_t> total(G, 0), correct(G, 0);
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const auto g = groups.group_of[i];
        if (g >= G) throw ContractViolation("group_metrics: group id out of range");
        ++total[g];
        if (predictions[i] == labels[i]) ++correct[g];
    }
    GroupMetrics m;
    double worst = std::numeric_limits<double>::infinity();
    double sum = 0.0, weighted = 0.0;
    std::size_t nonempty = 0, n = 0;
    for (std::size_t g = 0; g < G; ++g) {
        GroupAccuracy ga{groups.names[g], total[g], std::nullopt};
        if (total[g] == 0) {
            m.warnings.push_back("group '" + groups.names[g] + "' is empty and was excluded");
        } else {
            const double acc = static_cast<double>(correct[g]) / static_cast<double>(total[g]);
            ga.accuracy = acc;
            worst = std::min(worst, acc);
            sum += acc;
            weighted += static_cast<double>(correct[g]);
            n += total[g];
            ++nonempty;
        }
        m.groups.push_back(std::move(ga));
    }
    if (nonempty == 0) throw ContractViolation("group_metrics: every group is empty");
    m.worst_group_accuracy = worst;
    m.average_accuracy = sum / static_cast<double>(nonempty);
    m.weighted_accuracy = weighted / static_cast<double>(n);
    return m;
}

/// Bias-conflicting accuracy and unbiased (mean over class x bias groups) accuracy.
struct ClosedSetMetrics {
    std::optional<double> bias_conflict_accuracy;
    std::optional<double> unbiased_accuracy;
};

inline ClosedSetMetrics closed_set_metrics(std::span<const std::size_t> predictions,
                                           std::span<const std::size_t> labels,
                                           std::span<const std::size_t> bias_labels,
                                           std::span<const bool> aligned) {
    check_lengths(predictions.size(), labels.size(), "closed_set_metrics");
    check_lengths(predictions.size(), bias_labels.size(), "closed_set_metrics");
    check_lengths(predictions.size(), aligned.size(), "closed_set_metrics");
    ClosedSetMetrics out;
    std::size_t conflicting = 0, conflicting_correct = 0;
    std::size_t max_label = 0, max_bias = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        max_label = std::max(max_label, labels[i]);
        max_bias = std::max(max_bias, bias_labels[i]);
        if (!aligned[i]) {
            ++conflicting;
            if (predictions[i] == labels[i]) ++conflicting_correct;
        }
    }
    if (conflicting > 0)
        out.bias_conflict_accuracy = static_cast<double>(conflicting_correct) / static_cast<double>(conflicting);
    if (labels.empty()) return out;
    const std::size_t B = max_bias + 1;
    std::vector<std::size_t> total((max_label + 1) * B, 0), correct(total.size(), 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto g = labels[i] * B + bias_labels[i];
        ++total[g];
        if (predictions[i] == labels[i]) ++correct[g];
    }
    double sum = 0.0;
    std::size_t nonempty = 0;
    for (std::size_t g = 0; g < total.size(); ++g) {
        if (total[g] == 0) continue;
        sum += static_cast<double>(correct[g]) / static_cast<double>(total[g]);
        ++nonempty;
    }
    out.unbiased_accuracy = sum / static_cast<double>(nonempty);
    return out;
}

/// Summary statistics of a sample of values.
struct Summary {
    std::size_t count = 0;
    double mean = 0.0;
    double min = 0.0;
    double p10 = 0.0;
    double median = 0.0;
    double p90 = 0.0;
    double max = 0.0;
};

/// Linear-interpolation quantile of sorted values.
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.size() == 1) return sorted.front();
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline std::optional<Summary> summarize(std::vector<double> values) {
    if (values.empty()) return std::nullopt;
    std::sort(values.begin(), values.end());
    Summary s;
    s.count = values.size();
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(values.size());
    s.min = values.front();
    s.max = values.back();
    s.p10 = quantile_sorted(values, 0.10);
    s.median = quantile_sorted(values, 0.50);
    s.p90 = quantile_sorted(values, 0.90);
    return s;
}

struct GroupLogitSummary {
    std::string group;
    std::optional<Summary> max_logit;
    std::vector<double> values;
};

/// Distribution of the largest main-branch logit per group. `max_logits[i]` is
/// max_k z_main(k) for sample i.
inline std::vector<GroupLogitSummary> logit_distribution_by_group(std::span<const double> max_logits,
                                                                  const GroupAssignment& groups) {
    check_lengths(max_logits.size(), groups.group_of.size(), "logit_distribution_by_group");
    std::vector<GroupLogitSummary> out(groups.num_groups());
    for (std::size_t g = 0; g < out.size(); ++g) out[g].group = groups.names[g];
    for (std::size_t i = 0; i < max_logits.size(); ++i) out.at(groups.group_of[i]).values.push_back(max_logits[i]);
    for (auto& o : out) o.max_logit = summarize(o.values);
    return out;
}

// ---------------------------------------------------------------------------
// Report serialisation.

inline nlohmann::json optional_json(const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline std::string format_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

inline std::string format_optional(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

inline nlohmann::json to_json(const GroupMetrics& m) {
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& g : m.groups)
        groups.push_back({{"group", g.group}, {"count", g.count}, {"accuracy", optional_json(g.accuracy)}});
    return {{"groups", groups},
            {"worst_group_accuracy", m.worst_group_accuracy},
            {"average_accuracy", m.average_accuracy},
            {"weighted_accuracy", m.weighted_accuracy},
            {"warnings", m.warnings}};
}

/// One row per group followed by summary rows; empty groups have an empty accuracy cell.
inline void write_csv(std::ostream& os, const GroupMetrics& m) {
    os << "group,count,accuracy\n";
    for (const auto& g : m.groups) os << g.group << ',' << g.count << ',' << format_optional(g.accuracy) << '\n';
    os << "worst_group_accuracy,," << format_double(m.worst_group_accuracy) << '\n';
    os << "average_accuracy,," << format_double(m.average_accuracy) << '\n';
    os << "weighted_accuracy,," << format_double(m.weighted_accuracy) << '\n';
}

inline nlohmann::json to_json(const ClosedSetMetrics& m) {
    return {{"bias_conflict_accuracy", optional_json(m.bias_conflict_accuracy)},
            {"unbiased_accuracy", optional_json(m.unbiased_accuracy)}};
}

inline nlohmann::json to_json(const std::vector<GroupLogitSummary>& v) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& g : v) {
        nlohmann::json s = nullptr;
        if (g.max_logit)
            s = {{"count", g.max_logit->count}, {"mean", g.max_logit->mean}, {"min", g.max_logit->min},
                 {"p10", g.max_logit->p10},     {"median", g.max_logit->median}, {"p90", g.max_logit->p90},
                 {"max", g.max_logit->max}};
        arr.push_back({{"group", g.group}, {"max_logit", s}});
    }
    return arr;
}

} // namespace mavias::eval
