#pragma once

#include "mavias/eval/metrics.hpp"

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace mavias::eval {

struct TagAccuracy {
    std::string tag;
    double accuracy = 0.0;
    std::size_t support = 0;
    bool biased = false;
};

struct ClassTagReport {
    std::size_t label = 0;
    /// Tags that occur on at least one sample of the class, sorted by name.
    std::vector<TagAccuracy> tags;
    /// Candidate tags that never occur on a sample of the class.
    std::vector<std::string> zero_support;
    /// B': the tags flagged biased.
    std::vector<std::string> biased_tags;
};

/// Per class, which irrelevant tags come with above-average accuracy.
struct BiasedTagReport {
    /// Accuracy over the whole evaluated set; the reference for every tag.
    double overall_accuracy = 0.0;
    std::size_t min_support = 5;
    std::vector<ClassTagReport> classes;
};

/// A tag t of class c is flagged when the accuracy over class-c samples carrying
/// t is strictly above the dataset-wide accuracy and at least `min_support`
/// such samples exist. `candidates`, when given, lists the tags to report per
/// class (tags absent from the class's samples land in zero_support).
inline BiasedTagReport identify_biased_tags(std::span<const std::size_t> predictions,
                                            std::span<const std::size_t> labels,
                                            std::span<const std::vector<std::string>> irrelevant_tags,
                                            std::size_t num_classes, std::size_t min_support = 5,
                                            const std::vector<std::vector<std::string>>* candidates = nullptr) {
    check_lengths(predictions.size(), labels.size(), "identify_biased_tags");
    check_lengths(predictions.size(), irrelevant_tags.size(), "identify_biased_tags");
    if (predictions.empty()) throw ContractViolation("identify_biased_tags: no samples");
    if (candidates && candidates->size() != num_classes)
        throw ContractViolation("identify_biased_tags: candidate list per class expected");

    BiasedTagReport rep;
    rep.min_support = min_support;
    std::size_t correct = 0;
    std::vector<std::map<std::string, std::pair<std::size_t, std::size_t>>> counts(num_classes);
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (labels[i] >= num_classes) throw ContractViolation("identify_biased_tags: label out of range");
        const bool ok = predictions[i] == labels[i];
        correct += ok;
        // A tag listed twice on one sample still counts once.
        std::set<std::string> seen(irrelevant_tags[i].begin(), irrelevant_tags[i].end());
        for (const auto& t : seen) {
            auto& [support, hits] = counts[labels[i]][t];
            ++support;
            hits += ok;
        }
    }
    rep.overall_accuracy = static_cast<double>(correct) / static_cast<double>(predictions.size());

    for (std::size_t c = 0; c < num_classes; ++c) {
        ClassTagReport cr;
        cr.label = c;
        for (const auto& [tag, sh] : counts[c]) {
            TagAccuracy ta{tag, static_cast<double>(sh.second) / static_cast<double>(sh.first), sh.first, false};
            ta.biased = ta.accuracy > rep.overall_accuracy && ta.support >= min_support;
            if (ta.biased) cr.biased_tags.push_back(tag);
            cr.tags.push_back(std::move(ta));
        }
        if (candidates) {
            std::set<std::string> cand((*candidates)[c].begin(), (*candidates)[c].end());
            for (const auto& t : cand)
                if (!counts[c].contains(t)) cr.zero_support.push_back(t);
        }
        rep.classes.push_back(std::move(cr));
    }
    return rep;
}

/// 2p groups: (class, has a biased tag of its class) and (class, has none).
/// Group id = 2 * class + has_bias.
inline GroupAssignment form_open_set_groups(std::span<const std::size_t> labels,
                                            std::span<const std::vector<std::string>> irrelevant_tags,
                                            const BiasedTagReport& report,
                                            const std::vector<std::string>& class_names = {}) {
    check_lengths(labels.size(), irrelevant_tags.size(), "form_open_set_groups");
    const std::size_t p = report.classes.size();
    GroupAssignment ga;
    for (std::size_t c = 0; c < p; ++c) {
        const std::string name = c < class_names.size() ? class_names[c] : std::to_string(c);
        ga.names.push_back(name + "/no-bias");
        ga.names.push_back(name + "/bias");
    }
    std::vector<std::set<std::string>> biased(p);
    for (std::size_t c = 0; c < p; ++c)
        biased[c].insert(report.classes[c].biased_tags.begin(), report.classes[c].biased_tags.end());
    ga.group_of.reserve(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= p) throw ContractViolation("form_open_set_groups: label out of range");
        const bool has = std::any_of(irrelevant_tags[i].begin(), irrelevant_tags[i].end(),
                                     [&](const std::string& t) { return biased[labels[i]].contains(t); });
        ga.group_of.push_back(2 * labels[i] + (has ? 1 : 0));
    }
    return ga;
}

/// Biased tags per class ordered by support (desc), then accuracy gain over the
/// overall accuracy (desc), then name. At most k per class.
inline std::vector<std::vector<std::string>> rank_top_biased_tags(const BiasedTagReport& report, std::size_t k = 10) {
    std::vector<std::vector<std::string>> out;
    for (const auto& c : report.classes) {
        std::vector<const TagAccuracy*> flagged;
        for (const auto& t : c.tags)
            if (t.biased) flagged.push_back(&t);
        std::sort(flagged.begin(), flagged.end(), [](const TagAccuracy* a, const TagAccuracy* b) {
            if (a->support != b->support) return a->support > b->support;
            if (a->accuracy != b->accuracy) return a->accuracy > b->accuracy;
            return a->tag < b->tag;
        });
        std::vector<std::string> names;
        for (std::size_t i = 0; i < flagged.size() && i < k; ++i) names.push_back(flagged[i]->tag);
        out.push_back(std::move(names));
    }
    return out;
}

inline nlohmann::json to_json(const BiasedTagReport& r, const std::vector<std::string>& class_names = {}) {
    nlohmann::json classes = nlohmann::json::array();
    for (const auto& c : r.classes) {
        nlohmann::json tags = nlohmann::json::array();
        for (const auto& t : c.tags)
            tags.push_back({{"tag", t.tag},
                            {"accuracy", t.accuracy},
                            {"overall_accuracy", r.overall_accuracy},
                            {"support", t.support},
                            {"biased", t.biased}});
        classes.push_back({{"label", c.label},
                           {"class", c.label < class_names.size() ? class_names[c.label] : std::to_string(c.label)},
                           {"tags", tags},
                           {"zero_support", c.zero_support},
                           {"biased_tags", c.biased_tags}});
    }
    return {{"overall_accuracy", r.overall_accuracy}, {"min_support", r.min_support}, {"classes", classes}};
}

/// "class,tag1;tag2;..." rows, the layout of a top-k biased tag table.
inline void write_top_tags_csv(std::ostream& os, const std::vector<std::vector<std::string>>& top,
                               const std::vector<std::string>& class_names = {}) {
    os << "class,top_biased_tags\n";
    for (std::size_t c = 0; c < top.size(); ++c) {
        os << (c < class_names.size() ? class_names[c] : std::to_string(c)) << ',';
        for (std::size_t i = 0; i < top[c].size(); ++i) os << (i ? ";" : "") << top[c][i];
        os << '\n';
    }
}

} // namespace mavias::eval
