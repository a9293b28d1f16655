#pragma once

#include "mavias/autodiff/parameters.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <string>

namespace mavias::ad {

inline constexpr int kCheckpointFormatVersion = 1;

/// Checkpoint layout:
///
///   { "format_version": 1,
///     "meta": { ...caller-defined... },
///     "parameters": [ { "name": "backbone.0.weight", "partition": "backbone",
///                       "rows": 32, "cols": 3, "values": [row-major doubles] }, ... ] }
///
/// Doubles are written with round-trip precision, so save/load is exact.
inline nlohmann::json checkpoint_to_json(const ParameterStore& store, const nlohmann::json& meta = {}) {
    nlohmann::json params = nlohmann::json::array();
    for (const auto& p : store) {
        params.push_back({{"name", p.name},
                          {"partition", std::string(to_string(p.partition))},
                          {"rows", p.value.rows()},
                          {"cols", p.value.cols()},
                          {"values", std::vector<double>(p.value.values().begin(), p.value.values().end())}});
    }
    return {{"format_version", kCheckpointFormatVersion},
            {"meta", meta.is_null() ? nlohmann::json::object() : meta},
            {"parameters", std::move(params)}};
}

inline ParameterStore checkpoint_from_json(const nlohmann::json& j) {
    if (!j.contains("format_version") || j.at("format_version").get<int>() != kCheckpointFormatVersion)
        throw ConfigError("checkpoint: unsupported or missing format_version");
    ParameterStore store;
    for (const auto& p : j.at("parameters")) {
        const auto rows = p.at("rows").get<std::size_t>();
        const auto cols = p.at("cols").get<std::size_t>();
        auto values = p.at("values").get<std::vector<double>>();
        if (values.size() != rows * cols)
            throw ConfigError("checkpoint: parameter '" + p.at("name").get<std::string>() +
                              "' has wrong value count");
        store.add(p.at("name").get<std::string>(), partition_from_string(p.at("partition").get<std::string>()),
                  DenseMatrix(rows, cols, std::move(values)));
    }
    return store;
}

inline void save_checkpoint(const std::string& path, const ParameterStore& store, const nlohmann::json& meta = {}) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write checkpoint '" + path + "'");
    out << checkpoint_to_json(store, meta).dump(1) << '\n';
}

inline nlohmann::json read_checkpoint_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open checkpoint '" + path + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("checkpoint '" + path + "' is not valid JSON: " + e.what());
    }
}

} // namespace mavias::ad
