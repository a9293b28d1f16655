#pragma once

#include "mavias/discovery/clients.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

namespace mavias::discovery {

struct RetryPolicy {
    /// Total attempts per request, including the first.
    int max_attempts = 3;
    /// Sleep before retry k is backoff_ms * 2^(k-1).
    int backoff_ms = 0;
};

/// Runs fn(attempt) until it returns without throwing one of the retryable
/// error types, or the attempts run out (the last error propagates).
template <typename Fn>
auto with_retries(const RetryPolicy& policy, Fn&& fn) -> decltype(fn()) {
    const int attempts = std::max(1, policy.max_attempts);
    for (int a = 1;; ++a) {
        try {
            return fn();
        } catch (const TransportError&) {
            if (a >= attempts) throw;
        } catch (const ParseError&) {
            if (a >= attempts) throw;
        }
        if (policy.backoff_ms > 0)
            std::this_thread::sleep_for(std::chrono::milliseconds(policy.backoff_ms << (a - 1)));
    }
}

/// Calls fn(i) for i in [0, n) on at most `max_in_flight` threads. The first
/// exception thrown by any call is rethrown after all workers stop.
inline void bounded_for(std::size_t n, std::size_t max_in_flight, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::max<std::size_t>(1, std::min(max_in_flight, n));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mu;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n && !failed; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mu);
                    if (!error) error = std::current_exception();
                    failed = true;
                }
            }
        });
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

/// Tags for one record, normalized. Transport failures are retried and finally
/// rethrown with the id attached.
inline std::vector<std::string> extract_tags(const std::string& id, TaggerClient& client,
                                             const RetryPolicy& policy = {}) {
    try {
        return normalize_tags(with_retries(policy, [&] { return client.tag(id); }));
    } catch (const TransportError& e) {
        throw TransportError(id, std::string("tagging failed: ") + e.what());
    }
}

struct BatchFailure {
    std::size_t batch_index = 0;
    std::string message;
    std::string raw;
};

struct FilterOutcome {
    std::set<std::string> relevant;
    std::size_t calls = 0;
    std::size_t batches = 0;
    /// Batches whose tags defaulted to relevant after the retries ran out.
    std::vector<BatchFailure> failures;
};

/// Sends the tags in batches of at most 100, unions the relevant answers and
/// keeps only tags that were actually sent. A batch that keeps failing is
/// treated as all-relevant so no bias is asserted on its tags.
inline FilterOutcome filter_relevant_tags(const std::string& class_name, const std::vector<std::string>& tags,
                                          RelevanceClient& client, const RetryPolicy& policy = {}) {
    FilterOutcome out;
    const std::size_t n = tags.size();
    out.batches = (n + kMaxTagsPerRequest - 1) / kMaxTagsPerRequest;
    for (std::size_t b = 0; b < out.batches; ++b) {
        std::vector<std::string> batch(tags.begin() + static_cast<std::ptrdiff_t>(b * kMaxTagsPerRequest),
                                       tags.begin() + static_cast<std::ptrdiff_t>(std::min(n, (b + 1) * kMaxTagsPerRequest)));
        const auto request = build_relevance_prompt(class_name, batch);
        const std::set<std::string> sent(batch.begin(), batch.end());
        std::string last_raw;
        try {
            auto answer = with_retries(policy, [&] {
                ++out.calls;
                last_raw = client.complete(request);
                return parse_relevance_response(last_raw, static_cast<int>(b));
            });
            for (auto& t : normalize_tags(answer))
                if (sent.contains(t)) out.relevant.insert(t);
        } catch (const ParseError& e) {
            out.failures.push_back({b, e.what(), e.raw()});
            out.relevant.insert(sent.begin(), sent.end());
        } catch (const TransportError& e) {
            out.failures.push_back({b, e.what(), last_raw});
            out.relevant.insert(sent.begin(), sent.end());
        }
    }
    return out;
}

enum class EmbeddingMode { collectively, separately };

inline std::string to_string(EmbeddingMode m) { return m == EmbeddingMode::collectively ? "collectively" : "separately"; }

inline EmbeddingMode embedding_mode_from_string(const std::string& s) {
    if (s == "collectively") return EmbeddingMode::collectively;
    if (s == "separately") return EmbeddingMode::separately;
    throw ConfigError("embedding mode must be 'collectively' or 'separately', got '" + s + "'");
}

inline std::string photo_prompt(const std::vector<std::string>& tags) {
    std::string p = "a photo of ";
    for (std::size_t i = 0; i < tags.size(); ++i) p += (i ? ", " : "") + tags[i];
    return p;
}

inline void normalize_in_place(std::vector<double>& v, const std::string& what) {
    double n2 = 0.0;
    for (double x : v) n2 += x * x;
    const double n = std::sqrt(n2);
    if (!(n > 0.0) || !std::isfinite(n)) throw NumericError(what + ": embedding has zero or non-finite norm");
    for (double& x : v) x /= n;
}

/// Unit-norm bias embedding of the irrelevant tags B.
inline std::vector<double> embed_irrelevant_tags(const std::vector<std::string>& irrelevant, EmbeddingMode mode,
                                                 EmbeddingClient& client, const RetryPolicy& policy = {}) {
    if (irrelevant.empty())
        throw ContractViolation("embed_irrelevant_tags: no irrelevant tags; use a zero embedding (zero-bias path) "
                                "for this sample instead");
    std::vector<std::string> prompts;
    if (mode == EmbeddingMode::collectively)
        prompts.push_back(photo_prompt(irrelevant));
    else
        for (const auto& t : irrelevant) prompts.push_back(photo_prompt({t}));
    std::vector<std::vector<double>> vecs;
    try {
        vecs = with_retries(policy, [&] { return client.embed(prompts); });
    } catch (const TransportError& e) {
        throw TransportError(prompts.front(), std::string("embedding failed: ") + e.what());
    }
    if (vecs.size() != prompts.size())
        throw ParseError("embedding service returned " + std::to_string(vecs.size()) + " vectors for " +
                             std::to_string(prompts.size()) + " prompts",
                         "");
    std::vector<double> e(client.dim(), 0.0);
    for (const auto& v : vecs) {
        if (v.size() != e.size())
            throw ParseError("embedding of length " + std::to_string(v.size()) + ", expected " +
                                 std::to_string(e.size()),
                             "");
        for (std::size_t k = 0; k < e.size(); ++k) e[k] += v[k];
    }
    // Averaging does not change the direction, so normalizing the sum suffices.
    normalize_in_place(e, photo_prompt(irrelevant));
    return e;
}

struct DiscoveryConfig {
    EmbeddingMode mode = EmbeddingMode::collectively;
    RetryPolicy retry;
    std::size_t max_in_flight = 4;
    /// Call the tagger for records that arrive without tags.
    bool tag_missing = true;
};

struct ClassSummary {
    std::size_t label = 0;
    std::string name;
    std::size_t samples = 0;
    std::size_t unique_tags = 0;
    std::size_t relevant_tags = 0;
    std::size_t irrelevant_tags = 0;
    std::size_t llm_calls = 0;
    std::vector<BatchFailure> failures;
};

struct DiscoveryReport {
    std::vector<ClassSummary> classes;
    std::size_t samples_with_bias = 0;
    std::size_t samples_without_bias = 0;
    std::size_t embedding_dim = 0;
};

/// Tags every record (if needed), filters relevance per class over the union of
/// the class's tags, derives B and embeds it. Records with empty B keep no
/// embedding and later take the zero-bias path. Output order matches input.
inline DiscoveryReport run_discovery(std::vector<TaggedSample>& samples, const std::vector<std::string>& class_names,
                                     TaggerClient* tagger, RelevanceClient& relevance, EmbeddingClient& embedder,
                                     const DiscoveryConfig& cfg = {}) {
    for (const auto& s : samples)
        if (s.label >= class_names.size())
            throw ContractViolation("sample '" + s.id + "': label " + std::to_string(s.label) + " has no class name");

    bounded_for(samples.size(), cfg.max_in_flight, [&](std::size_t i) {
        auto& s = samples[i];
        if (s.tags.empty() && cfg.tag_missing && tagger)
            s.tags = extract_tags(s.id, *tagger, cfg.retry);
        else
            s.tags = normalize_tags(s.tags);
    });

    const std::size_t p = class_names.size();
    std::vector<std::vector<std::string>> class_tags(p);
    std::vector<std::set<std::string>> seen(p);
    DiscoveryReport rep;
    rep.embedding_dim = embedder.dim();
    rep.classes.resize(p);
    for (const auto& s : samples) {
        ++rep.classes[s.label].samples;
        for (const auto& t : s.tags)
            if (seen[s.label].insert(t).second) class_tags[s.label].push_back(t);
    }

    std::vector<FilterOutcome> outcomes(p);
    bounded_for(p, cfg.max_in_flight, [&](std::size_t c) {
        outcomes[c] = filter_relevant_tags(class_names[c], class_tags[c], relevance, cfg.retry);
    });
    for (std::size_t c = 0; c < p; ++c) {
        auto& cs = rep.classes[c];
        cs.label = c;
        cs.name = class_names[c];
        cs.unique_tags = class_tags[c].size();
        cs.relevant_tags = outcomes[c].relevant.size();
        cs.irrelevant_tags = cs.unique_tags - cs.relevant_tags;
        cs.llm_calls = outcomes[c].calls;
        cs.failures = outcomes[c].failures;
    }

    for (auto& s : samples) s.irrelevant_tags = derive_irrelevant_tags(s.tags, outcomes[s.label].relevant);

    // Identical B sets share one embedding request.
    std::map<std::vector<std::string>, std::size_t> unique;
    std::vector<const std::vector<std::string>*> keys;
    for (const auto& s : samples)
        if (!s.irrelevant_tags->empty() && unique.emplace(*s.irrelevant_tags, keys.size()).second)
            keys.push_back(&*s.irrelevant_tags);
    std::vector<std::vector<double>> vectors(keys.size());
    bounded_for(keys.size(), cfg.max_in_flight, [&](std::size_t k) {
        vectors[k] = embed_irrelevant_tags(*keys[k], cfg.mode, embedder, cfg.retry);
    });
    for (auto& s : samples) {
        if (s.irrelevant_tags->empty()) {
            s.bias_embedding.reset();
            ++rep.samples_without_bias;
        } else {
            s.bias_embedding = vectors[unique.at(*s.irrelevant_tags)];
            ++rep.samples_with_bias;
        }
    }
    return rep;
}

} // namespace mavias::discovery
