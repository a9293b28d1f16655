#pragma once

#include "mavias/errors.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace mavias::cli {

inline constexpr int kConfigFormatVersion = 1;

/// Reads keys out of one JSON object and rejects any key it was not asked for.
class StrictReader {
public:
    StrictReader(const nlohmann::json& j, std::string section) : j_(j), section_(std::move(section)) {
        if (!j_.is_object()) throw ConfigError("config section '" + section_ + "' must be an object");
    }

    template <typename T>
    void read(const std::string& key, T& dst) {
        used_.insert(key);
        if (!j_.contains(key) || j_[key].is_null()) return;
        try {
            dst = j_[key].get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config key '" + path(key) + "': " + e.what());
        }
    }

    template <typename T>
    void read(const std::string& key, std::optional<T>& dst) {
        used_.insert(key);
        if (!j_.contains(key) || j_[key].is_null()) return;
        T v{};
        read(key, v);
        dst = std::move(v);
    }

    const nlohmann::json* section(const std::string& key) {
        used_.insert(key);
        return j_.contains(key) && !j_[key].is_null() ? &j_[key] : nullptr;
    }

    void finish() const {
        for (const auto& [k, _] : j_.items())
            if (!used_.contains(k)) throw ConfigError("unknown config key '" + path(k) + "'");
    }

private:
    std::string path(const std::string& key) const { return section_.empty() ? key : section_ + "." + key; }

    const nlohmann::json& j_;
    std::string section_;
    std::set<std::string> used_;
};

struct SynthSection {
    std::string generator = "two_moons_3d";
    std::size_t n = 4000;
    double noise = 0.1;
    double bias_gap = 2.0;
    double align_rate = 0.95;
    /// Alignment rate of the exported test split.
    double test_align_rate = 0.5;
    std::size_t test_n = 4000;
    double distractor_rate = 0.0;
    // biased_blobs only
    std::size_t num_classes = 3;
    std::size_t samples_per_class = 200;
    std::size_t embed_dim = 8;
};

struct DiscoverySection {
    std::optional<std::string> input;
    std::vector<std::string> class_names;
    bool mock = true;
    std::string mode = "collectively";
    std::size_t embedding_dim = 16;
    std::size_t max_in_flight = 4;
    int max_attempts = 3;
    int backoff_ms = 0;
    /// Vocabulary the mock tagger draws from for records without tags.
    std::vector<std::string> tagger_vocabulary;
    /// Mock relevance keyword table: class name -> relevant tags.
    std::map<std::string, std::vector<std::string>> keywords;
    std::string chat_url = "https://api.openai.com/v1/chat/completions";
    std::string chat_model = "gpt-4o";
    std::string embedding_url = "https://api.openai.com/v1/embeddings";
    std::string embedding_model = "text-embedding-3-small";
    std::optional<std::string> tagger_url;
    double temperature = 0.0;
};

struct TrainSection {
    /// Data records; when absent the synth section's generator is sampled.
    std::optional<std::string> dataset;
    /// Bias embeddings by id; records without one get e = 0.
    std::optional<std::string> embeddings;
    /// Use features[bias_feature_index] as a one-dimensional embedding instead
    /// of an embeddings file. With a generated dataset this defaults to x3.
    std::optional<std::size_t> bias_feature_index;
    std::string mode = "mavias";
    double alpha = 0.6;
    double lambda = 0.2;
    std::string optimizer = "sgd";
    double lr = 0.001;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t epochs = 10;
    std::size_t batch_size = 64;
    std::string schedule = "none";
    std::vector<std::size_t> hidden{32};
    std::size_t feature_dim = 16;
    double projection_init_scale = 0.1;
    /// Permit alpha = 0 (the alignment-term ablation).
    bool allow_zero_alpha = false;
};

struct EvalSection {
    std::optional<std::string> checkpoint;
    std::optional<std::string> dataset;
    /// Tag records with irrelevant_tags, for the open-set protocol.
    std::optional<std::string> tags;
    /// Vanilla model used to flag biased tags; defaults to `checkpoint`.
    std::optional<std::string> reference_checkpoint;
    std::string protocol = "both";
    std::size_t min_support = 5;
    std::size_t top_k = 10;
    bool export_logits = true;
};

struct DiagnoseSection {
    std::optional<std::string> checkpoint;
    std::optional<std::string> dataset;
    std::optional<std::string> embeddings;
};

struct RunConfig {
    int format_version = kConfigFormatVersion;
    std::string output_dir = "out";
    std::uint64_t seed = 0;
    SynthSection synth;
    DiscoverySection discovery;
    TrainSection train;
    EvalSection eval;
    DiagnoseSection diagnose;
};

inline RunConfig parse_run_config(const nlohmann::json& j) {
    RunConfig c;
    StrictReader top(j, "");
    top.read("format_version", c.format_version);
    if (c.format_version != kConfigFormatVersion)
        throw ConfigError("unsupported config format_version " + std::to_string(c.format_version));
    top.read("output_dir", c.output_dir);
    top.read("seed", c.seed);
    if (auto* s = top.section("synth")) {
        StrictReader r(*s, "synth");
        auto& d = c.synth;
        r.read("generator", d.generator);
        r.read("n", d.n);
        r.read("noise", d.noise);
        r.read("bias_gap", d.bias_gap);
        r.read("align_rate", d.align_rate);
        r.read("test_align_rate", d.test_align_rate);
        r.read("test_n", d.test_n);
        r.read("distractor_rate", d.distractor_rate);
        r.read("num_classes", d.num_classes);
        r.read("samples_per_class", d.samples_per_class);
        r.read("embed_dim", d.embed_dim);
        r.finish();
    }
    if (auto* s = top.section("discovery")) {
        StrictReader r(*s, "discovery");
        auto& d = c.discovery;
        r.read("input", d.input);
        r.read("class_names", d.class_names);
        r.read("mock", d.mock);
        r.read("mode", d.mode);
        r.read("embedding_dim", d.embedding_dim);
        r.read("max_in_flight", d.max_in_flight);
        r.read("max_attempts", d.max_attempts);
        r.read("backoff_ms", d.backoff_ms);
        r.read("tagger_vocabulary", d.tagger_vocabulary);
        r.read("keywords", d.keywords);
        r.read("chat_url", d.chat_url);
        r.read("chat_model", d.chat_model);
        r.read("embedding_url", d.embedding_url);
        r.read("embedding_model", d.embedding_model);
        r.read("tagger_url", d.tagger_url);
        r.read("temperature", d.temperature);
        r.finish();
    }
    if (auto* s = top.section("train")) {
        StrictReader r(*s, "train");
        auto& d = c.train;
        r.read("dataset", d.dataset);
        r.read("embeddings", d.embeddings);
        r.read("bias_feature_index", d.bias_feature_index);
        r.read("mode", d.mode);
        r.read("alpha", d.alpha);
        r.read("lambda", d.lambda);
        r.read("optimizer", d.optimizer);
        r.read("lr", d.lr);
        r.read("momentum", d.momentum);
        r.read("weight_decay", d.weight_decay);
        r.read("beta1", d.beta1);
        r.read("beta2", d.beta2);
        r.read("epsilon", d.epsilon);
        r.read("epochs", d.epochs);
        r.read("batch_size", d.batch_size);
        r.read("schedule", d.schedule);
        r.read("hidden", d.hidden);
        r.read("feature_dim", d.feature_dim);
        r.read("projection_init_scale", d.projection_init_scale);
        r.read("allow_zero_alpha", d.allow_zero_alpha);
        r.finish();
    }
    if (auto* s = top.section("eval")) {
        StrictReader r(*s, "eval");
        auto& d = c.eval;
        r.read("checkpoint", d.checkpoint);
        r.read("dataset", d.dataset);
        r.read("tags", d.tags);
        r.read("reference_checkpoint", d.reference_checkpoint);
        r.read("protocol", d.protocol);
        r.read("min_support", d.min_support);
        r.read("top_k", d.top_k);
        r.read("export_logits", d.export_logits);
        r.finish();
    }
    if (auto* s = top.section("diagnose")) {
        StrictReader r(*s, "diagnose");
        auto& d = c.diagnose;
        r.read("checkpoint", d.checkpoint);
        r.read("dataset", d.dataset);
        r.read("embeddings", d.embeddings);
        r.finish();
    }
    top.finish();
    return c;
}

template <typename T>
nlohmann::json opt_json(const std::optional<T>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

/// Fully resolved configuration, every field spelled out.
inline nlohmann::json to_json(const RunConfig& c) {
    const auto& s = c.synth;
    const auto& d = c.discovery;
    const auto& t = c.train;
    const auto& e = c.eval;
    const auto& g = c.diagnose;
    return {
        {"format_version", c.format_version},
        {"output_dir", c.output_dir},
        {"seed", c.seed},
        {"synth",
         {{"generator", s.generator}, {"n", s.n}, {"noise", s.noise}, {"bias_gap", s.bias_gap},
          {"align_rate", s.align_rate}, {"test_align_rate", s.test_align_rate}, {"test_n", s.test_n},
          {"distractor_rate", s.distractor_rate}, {"num_classes", s.num_classes},
          {"samples_per_class", s.samples_per_class}, {"embed_dim", s.embed_dim}}},
        {"discovery",
         {{"input", opt_json(d.input)}, {"class_names", d.class_names}, {"mock", d.mock}, {"mode", d.mode},
          {"embedding_dim", d.embedding_dim}, {"max_in_flight", d.max_in_flight},
          {"max_attempts", d.max_attempts}, {"backoff_ms", d.backoff_ms},
          {"tagger_vocabulary", d.tagger_vocabulary}, {"keywords", d.keywords}, {"chat_url", d.chat_url},
          {"chat_model", d.chat_model}, {"embedding_url", d.embedding_url},
          {"embedding_model", d.embedding_model}, {"tagger_url", opt_json(d.tagger_url)},
          {"temperature", d.temperature}}},
        {"train",
         {{"dataset", opt_json(t.dataset)}, {"embeddings", opt_json(t.embeddings)},
          {"bias_feature_index", opt_json(t.bias_feature_index)}, {"mode", t.mode}, {"alpha", t.alpha},
          {"lambda", t.lambda}, {"optimizer", t.optimizer}, {"lr", t.lr}, {"momentum", t.momentum},
          {"weight_decay", t.weight_decay}, {"beta1", t.beta1}, {"beta2", t.beta2}, {"epsilon", t.epsilon},
          {"epochs", t.epochs}, {"batch_size", t.batch_size}, {"schedule", t.schedule}, {"hidden", t.hidden},
          {"feature_dim", t.feature_dim}, {"projection_init_scale", t.projection_init_scale},
          {"allow_zero_alpha", t.allow_zero_alpha}}},
        {"eval",
         {{"checkpoint", opt_json(e.checkpoint)}, {"dataset", opt_json(e.dataset)}, {"tags", opt_json(e.tags)},
          {"reference_checkpoint", opt_json(e.reference_checkpoint)}, {"protocol", e.protocol},
          {"min_support", e.min_support}, {"top_k", e.top_k}, {"export_logits", e.export_logits}}},
        {"diagnose",
         {{"checkpoint", opt_json(g.checkpoint)}, {"dataset", opt_json(g.dataset)},
          {"embeddings", opt_json(g.embeddings)}}},
    };
}

inline nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config '" + path + "': " + e.what());
    }
}

} // namespace mavias::cli
