#pragma once

#include "mavias/discovery/io.hpp"
#include "mavias/synth/datasets.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <random>
#include <string>
#include <vector>

namespace mavias::synth {

/// One dataset row as stored on disk: features plus the metadata the
/// discovery and evaluation stages read.
struct DataRecord {
    std::string id;
    std::size_t label = 0;
    std::vector<double> features;
    std::vector<std::string> tags;
    std::optional<bool> aligned;
    std::optional<std::size_t> bias_mode;
    std::optional<std::string> class_name;
};

struct TagScheme {
    /// Relevant tag per class.
    std::vector<std::string> class_tags;
    /// Irrelevant tag per bias mode.
    std::vector<std::string> bias_tags;
    /// Extra irrelevant tags attached independently at `distractor_rate`.
    std::vector<std::string> distractors;
    double distractor_rate = 0.0;
};

/// Class names and tags for two-moons-3D. Each class tag contains its class
/// name, so keyword-free mock relevance marks exactly those as relevant.
inline std::vector<std::string> two_moons_class_names() { return {"upper", "lower"}; }

inline TagScheme two_moons_tag_scheme() {
    return {{"upper moon", "lower moon"}, {"negative depth", "positive depth"}, {"grid", "noise", "shadow"}, 0.0};
}

inline std::vector<DataRecord> to_records(const std::vector<BiasedSample>& samples, const TagScheme& scheme,
                                          const std::vector<std::string>& class_names, std::uint64_t seed,
                                          const std::string& id_prefix = "s") {
    std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
    std::bernoulli_distribution extra(scheme.distractor_rate);
    std::vector<DataRecord> out;
    out.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        DataRecord r;
        r.id = id_prefix + std::to_string(i);
        r.label = s.label;
        r.features = s.features;
        r.aligned = s.aligned;
        r.bias_mode = s.bias_mode;
        if (s.label < class_names.size()) r.class_name = class_names[s.label];
        r.tags.push_back(scheme.class_tags.at(s.label));
        r.tags.push_back(scheme.bias_tags.at(s.bias_mode));
        for (const auto& d : scheme.distractors)
            if (scheme.distractor_rate > 0.0 && extra(rng)) r.tags.push_back(d);
        out.push_back(std::move(r));
    }
    return out;
}

inline nlohmann::json to_json(const DataRecord& r) {
    nlohmann::json j{{"id", r.id}, {"label", r.label}, {"features", r.features}, {"tags", r.tags}};
    if (r.aligned) j["aligned"] = *r.aligned;
    if (r.bias_mode) j["bias_mode"] = *r.bias_mode;
    if (r.class_name) j["class_name"] = *r.class_name;
    return j;
}

inline DataRecord record_from_json(const nlohmann::json& j) {
    DataRecord r;
    try {
        const auto& id = j.at("id");
        r.id = id.is_string() ? id.get<std::string>() : id.dump();
        r.label = j.at("label").get<std::size_t>();
        r.features = j.at("features").get<std::vector<double>>();
        if (j.contains("tags") && !j["tags"].is_null()) r.tags = j["tags"].get<std::vector<std::string>>();
        if (j.contains("aligned") && !j["aligned"].is_null()) r.aligned = j["aligned"].get<bool>();
        if (j.contains("bias_mode") && !j["bias_mode"].is_null()) r.bias_mode = j["bias_mode"].get<std::size_t>();
        if (j.contains("class_name") && !j["class_name"].is_null()) r.class_name = j["class_name"].get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed data record: ") + e.what());
    }
    return r;
}

inline std::vector<DataRecord> read_records(const std::string& path) {
    std::vector<DataRecord> out;
    for (const auto& j : discovery::read_jsonl(path)) out.push_back(record_from_json(j));
    return out;
}

inline void write_records(const std::string& path, const std::vector<DataRecord>& rows) {
    std::vector<nlohmann::json> js;
    js.reserve(rows.size());
    for (const auto& r : rows) js.push_back(to_json(r));
    discovery::write_jsonl(path, js);
}

} // namespace mavias::synth
