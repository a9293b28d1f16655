#pragma once

#include "mavias/errors.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

namespace mavias::discovery {

inline std::string trim_lower(const std::string& s) {
    auto first = std::find_if_not(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
    auto last = std::find_if_not(s.rbegin(), s.rend(), [](unsigned char c) { return std::isspace(c); }).base();
    std::string out = first < last ? std::string(first, last) : std::string();
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

/// Lowercase, trim, drop empties and duplicates; first occurrence wins.
inline std::vector<std::string> normalize_tags(const std::vector<std::string>& raw) {
    std::vector<std::string> out;
    std::unordered_set<std::string> seen;
    for (const auto& r : raw) {
        std::string t = trim_lower(r);
        if (t.empty() || !seen.insert(t).second) continue;
        out.push_back(std::move(t));
    }
    return out;
}

/// One record moving through discovery. `irrelevant_tags` and `bias_embedding`
/// are filled by the later stages.
struct TaggedSample {
    std::string id;
    std::size_t label = 0;
    std::vector<std::string> tags;
    std::optional<std::vector<std::string>> irrelevant_tags;
    std::optional<std::vector<double>> bias_embedding;
};

/// B = tags minus relevant, in tag order.
inline std::vector<std::string> derive_irrelevant_tags(const std::vector<std::string>& tags,
                                                       const std::set<std::string>& relevant) {
    std::vector<std::string> out;
    for (const auto& t : tags)
        if (!relevant.contains(t)) out.push_back(t);
    return out;
}

struct TagVocabulary {
    std::vector<std::string> tags;
    std::size_t source_size = 0;
};

inline TagVocabulary make_vocabulary(const std::vector<std::string>& raw) {
    auto tags = normalize_tags(raw);
    const auto n = tags.size();
    return {std::move(tags), n};
}

/// Seeded uniform sample of ceil(fraction * |vocab|) tags without replacement,
/// kept in vocabulary order.
inline TagVocabulary subset_vocabulary(const TagVocabulary& vocab, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw ContractViolation("subset_vocabulary: fraction must lie in (0, 1], got " + std::to_string(fraction));
    const auto n = vocab.tags.size();
    auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-12));
    k = std::min(k, n);
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::mt19937_64 rng(seed);
    // Partial Fisher-Yates: the first k slots end up a uniform k-subset.
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    std::sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
    TagVocabulary out;
    out.source_size = vocab.source_size;
    for (std::size_t i = 0; i < k; ++i) out.tags.push_back(vocab.tags[idx[i]]);
    return out;
}

/// Per class, the tags a human marked relevant.
struct RelevanceGroundTruth {
    std::map<std::size_t, std::set<std::string>> relevant;
};

struct FilterScore {
    /// Absent when nothing was predicted relevant.
    std::optional<double> precision;
    /// Absent when the ground truth is empty.
    std::optional<double> recall;
    std::size_t true_positives = 0;
    std::size_t predicted = 0;
    std::size_t actual = 0;
};

/// Micro-averaged precision and recall of predicted relevant sets over all classes.
inline FilterScore evaluate_filter(const std::map<std::size_t, std::set<std::string>>& predicted,
                                   const RelevanceGroundTruth& truth) {
    FilterScore s;
    std::set<std::size_t> classes;
    for (const auto& [c, _] : predicted) classes.insert(c);
    for (const auto& [c, _] : truth.relevant) classes.insert(c);
    static const std::set<std::string> empty;
    for (auto c : classes) {
        auto pit = predicted.find(c);
        auto tit = truth.relevant.find(c);
        const auto& p = pit == predicted.end() ? empty : pit->second;
        const auto& t = tit == truth.relevant.end() ? empty : tit->second;
        s.predicted += p.size();
        s.actual += t.size();
        for (const auto& tag : p) s.true_positives += t.contains(tag);
    }
    if (s.predicted > 0)
        s.precision = static_cast<double>(s.true_positives) / static_cast<double>(s.predicted);
    if (s.actual > 0) s.recall = static_cast<double>(s.true_positives) / static_cast<double>(s.actual);
    return s;
}

/// 64-bit FNV-1a, used to derive per-key seeds that do not depend on call order.
inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace mavias::discovery
