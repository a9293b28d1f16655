#pragma once

#include "mavias/discovery/tags.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace mavias::discovery {

/// Parses a JSON-lines file; blank lines are skipped. Errors name the line.
inline std::vector<nlohmann::json> read_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    std::vector<nlohmann::json> out;
    std::string line;
    for (std::size_t no = 1; std::getline(in, line); ++no) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(nlohmann::json::parse(line));
        } catch (const nlohmann::json::parse_error& e) {
            throw ConfigError(path + ":" + std::to_string(no) + ": " + e.what());
        }
    }
    return out;
}

inline void write_jsonl(std::ostream& os, const std::vector<nlohmann::json>& rows) {
    for (const auto& r : rows) os << r.dump() << '\n';
}

inline void write_jsonl(const std::string& path, const std::vector<nlohmann::json>& rows) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    write_jsonl(out, rows);
}

/// {"id", "label", "tags", "irrelevant_tags"}; irrelevant_tags is null before filtering.
inline nlohmann::json tag_record(const TaggedSample& s) {
    return {{"id", s.id},
            {"label", s.label},
            {"tags", s.tags},
            {"irrelevant_tags", s.irrelevant_tags ? nlohmann::json(*s.irrelevant_tags) : nlohmann::json(nullptr)}};
}

inline TaggedSample tagged_sample_from_json(const nlohmann::json& j) {
    TaggedSample s;
    try {
        const auto& id = j.at("id");
        s.id = id.is_string() ? id.get<std::string>() : id.dump();
        s.label = j.at("label").get<std::size_t>();
        if (j.contains("tags") && !j["tags"].is_null()) s.tags = j["tags"].get<std::vector<std::string>>();
        if (j.contains("irrelevant_tags") && !j["irrelevant_tags"].is_null())
            s.irrelevant_tags = j["irrelevant_tags"].get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed tag record: ") + e.what());
    }
    return s;
}

inline std::vector<TaggedSample> read_tag_records(const std::string& path) {
    std::vector<TaggedSample> out;
    for (const auto& j : read_jsonl(path)) out.push_back(tagged_sample_from_json(j));
    return out;
}

/// {"id", "dim", "values"}.
inline nlohmann::json embedding_record(const std::string& id, const std::vector<double>& values) {
    return {{"id", id}, {"dim", values.size()}, {"values", values}};
}

/// id -> embedding. The declared dim must match the values.
inline std::map<std::string, std::vector<double>> read_embeddings(const std::string& path) {
    std::map<std::string, std::vector<double>> out;
    for (const auto& j : read_jsonl(path)) {
        try {
            const auto& idj = j.at("id");
            std::string id = idj.is_string() ? idj.get<std::string>() : idj.dump();
            auto values = j.at("values").get<std::vector<double>>();
            if (j.at("dim").get<std::size_t>() != values.size())
                throw ConfigError("embedding '" + id + "': dim does not match the number of values");
            if (!out.emplace(id, std::move(values)).second) throw ConfigError("duplicate embedding id '" + id + "'");
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(path + ": malformed embedding record: " + e.what());
        }
    }
    return out;
}

} // namespace mavias::discovery
