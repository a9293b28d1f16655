#pragma once

#include "mavias/discovery/prompt.hpp"
#include "mavias/discovery/tags.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace mavias::discovery {

/// Produces raw tags for one image or record. Implementations must be safe to
/// call from several threads.
class TaggerClient {
public:
    virtual ~TaggerClient() = default;
    virtual std::vector<std::string> tag(const std::string& id) = 0;
};

/// Answers one relevance request with the model's raw text reply.
class RelevanceClient {
public:
    virtual ~RelevanceClient() = default;
    virtual std::string complete(const ChatRequest& request) = 0;
};

/// Embeds text prompts into a fixed-length space.
class EmbeddingClient {
public:
    virtual ~EmbeddingClient() = default;
    virtual std::size_t dim() const = 0;
    virtual std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) = 0;
};

/// Draws between min_tags and max_tags tags from a vocabulary, as a pure
/// function of (id, seed).
class MockTagger final : public TaggerClient {
public:
    MockTagger(std::vector<std::string> vocabulary, std::uint64_t seed, std::size_t min_tags = 3,
               std::size_t max_tags = 8)
        : vocab_(normalize_tags(vocabulary)), seed_(seed), min_(min_tags), max_(max_tags) {
        if (min_ > max_) throw ContractViolation("MockTagger: min_tags > max_tags");
    }

    std::vector<std::string> tag(const std::string& id) override {
        if (vocab_.empty()) return {};
        std::mt19937_64 rng(fnv1a(id) ^ (seed_ * 0x9e3779b97f4a7c15ULL));
        std::uniform_int_distribution<std::size_t> count(min_, max_);
        std::uniform_int_distribution<std::size_t> pick(0, vocab_.size() - 1);
        const std::size_t k = std::min(count(rng), vocab_.size());
        std::vector<std::string> out;
        while (out.size() < k) {
            const auto& t = vocab_[pick(rng)];
            if (std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
        }
        return out;
    }

private:
    std::vector<std::string> vocab_;
    std::uint64_t seed_;
    std::size_t min_, max_;
};

/// Relevance by keyword table: a tag is relevant to a class when the class's
/// keyword list contains it. Classes without an entry fall back to "the tag
/// contains the class name".
class MockRelevance final : public RelevanceClient {
public:
    explicit MockRelevance(std::map<std::string, std::set<std::string>> keywords = {})
        : keywords_(std::move(keywords)) {}

    std::string complete(const ChatRequest& request) override {
        const std::string cls = trim_lower(request.class_name);
        auto it = keywords_.find(cls);
        nlohmann::json rel = nlohmann::json::array();
        for (const auto& t : request.tags) {
            const bool relevant = it != keywords_.end() ? it->second.contains(t)
                                                        : (!cls.empty() && t.find(cls) != std::string::npos);
            if (relevant) rel.push_back(t);
        }
        return nlohmann::json{{"relevant_tags", rel}}.dump();
    }

private:
    std::map<std::string, std::set<std::string>> keywords_;
};

/// Unit vector of length `dim` seeded by a hash of the prompt text.
class MockEmbedding final : public EmbeddingClient {
public:
    explicit MockEmbedding(std::size_t dim = 16, std::uint64_t seed = 0) : dim_(dim), seed_(seed) {
        if (dim == 0) throw ContractViolation("MockEmbedding: dim must be positive");
    }

    std::size_t dim() const override { return dim_; }

    std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) override {
        std::vector<std::vector<double>> out;
        out.reserve(texts.size());
        for (const auto& text : texts) {
            std::mt19937_64 rng(fnv1a(text) ^ (seed_ * 0x9e3779b97f4a7c15ULL));
            std::normal_distribution<double> g(0.0, 1.0);
            std::vector<double> v(dim_);
            double n2 = 0.0;
            for (double& x : v) {
                x = g(rng);
                n2 += x * x;
            }
            const double n = std::sqrt(n2);
            for (double& x : v) x /= n;
            out.push_back(std::move(v));
        }
        return out;
    }

private:
    std::size_t dim_;
    std::uint64_t seed_;
};

} // namespace mavias::discovery
