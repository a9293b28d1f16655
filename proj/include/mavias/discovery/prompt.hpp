#pragma once

#include "mavias/discovery/system_prompt.hpp"
#include "mavias/errors.hpp"

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace mavias::discovery {

inline constexpr std::size_t kMaxTagsPerRequest = 100;

struct ChatMessage {
    std::string role;
    std::string content;
};

/// A relevance query. The class name and tag batch travel alongside the
/// rendered messages so offline clients can answer without parsing text.
struct ChatRequest {
    std::vector<ChatMessage> messages;
    std::string class_name;
    std::vector<std::string> tags;
};

inline ChatRequest build_relevance_prompt(const std::string& class_name, const std::vector<std::string>& tag_batch) {
    if (tag_batch.empty()) throw ContractViolation("build_relevance_prompt: empty tag batch");
    if (tag_batch.size() > kMaxTagsPerRequest)
        throw ContractViolation("build_relevance_prompt: " + std::to_string(tag_batch.size()) +
                                " tags exceed the batch limit of " + std::to_string(kMaxTagsPerRequest));
    std::string user = "Target class: " + class_name + "\nTags: " + nlohmann::json(tag_batch).dump() +
                       "\nAnswer with a JSON object of the form {\"relevant_tags\": [...]}.";
    return {{{"system", std::string(kRelevanceSystemPrompt)}, {"user", std::move(user)}}, class_name, tag_batch};
}

/// Extracts {"relevant_tags": [...]} from a model reply, tolerating code fences
/// or prose around the object.
inline std::vector<std::string> parse_relevance_response(const std::string& raw, int batch_index = -1) {
    const auto open = raw.find('{');
    const auto close = raw.rfind('}');
    if (open == std::string::npos || close == std::string::npos || close < open)
        throw ParseError("no JSON object in relevance reply", raw, batch_index);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(raw.substr(open, close - open + 1));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("relevance reply is not valid JSON: ") + e.what(), raw, batch_index);
    }
    if (!j.is_object() || !j.contains("relevant_tags") || !j["relevant_tags"].is_array())
        throw ParseError("relevance reply lacks a 'relevant_tags' array", raw, batch_index);
    std::vector<std::string> out;
    for (const auto& t : j["relevant_tags"]) {
        if (!t.is_string()) throw ParseError("non-string entry in 'relevant_tags'", raw, batch_index);
        out.push_back(t.get<std::string>());
    }
    return out;
}

} // namespace mavias::discovery
