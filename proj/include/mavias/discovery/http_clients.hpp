#pragma once

#include "mavias/discovery/clients.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <string>
#include <utility>
#include <vector>

namespace mavias::discovery {

struct Endpoint {
    /// Full URL of the endpoint, e.g. https://api.openai.com/v1/chat/completions.
    std::string url;
    /// Sent as "Authorization: Bearer <token>" when non-empty.
    std::string api_key;
    int timeout_seconds = 60;
};

/// Splits a URL into "scheme://host:port" and the path.
inline std::pair<std::string, std::string> split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("endpoint URL lacks a scheme: '" + url + "'");
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

/// POSTs a JSON body and returns the parsed JSON reply. Network failures and
/// non-2xx statuses raise TransportError, unparsable bodies ParseError.
inline nlohmann::json post_json(const Endpoint& ep, const nlohmann::json& body, const std::string& subject) {
    auto [origin, path] = split_url(ep.url);
    httplib::Client cli(origin);
    if (!cli.is_valid()) throw ConfigError("unsupported endpoint '" + ep.url + "' (https needs OpenSSL support)");
    cli.set_connection_timeout(ep.timeout_seconds);
    cli.set_read_timeout(ep.timeout_seconds);
    cli.set_write_timeout(ep.timeout_seconds);
    httplib::Headers headers;
    if (!ep.api_key.empty()) headers.emplace("Authorization", "Bearer " + ep.api_key);
    auto res = cli.Post(path, headers, body.dump(), "application/json");
    if (!res) throw TransportError(subject, "request to " + ep.url + " failed: " + httplib::to_string(res.error()));
    if (res->status < 200 || res->status >= 300)
        throw TransportError(subject, "HTTP " + std::to_string(res->status) + " from " + ep.url + ": " + res->body);
    try {
        return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("invalid JSON from ") + ep.url + ": " + e.what(), res->body);
    }
}

/// OpenAI-compatible chat completions. Temperature defaults to 0.
class OpenAiChatClient final : public RelevanceClient {
public:
    OpenAiChatClient(Endpoint ep, std::string model, double temperature = 0.0)
        : ep_(std::move(ep)), model_(std::move(model)), temperature_(temperature) {}

    std::string complete(const ChatRequest& request) override {
        nlohmann::json messages = nlohmann::json::array();
        for (const auto& m : request.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
        nlohmann::json body{{"model", model_}, {"messages", messages}, {"temperature", temperature_}};
        auto reply = post_json(ep_, body, "relevance:" + request.class_name);
        try {
            return reply.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("chat reply without choices[0].message.content: ") + e.what(), reply.dump());
        }
    }

private:
    Endpoint ep_;
    std::string model_;
    double temperature_;
};

/// OpenAI-compatible embeddings endpoint ({"model", "input": [...]} ->
/// {"data": [{"index", "embedding"}]}).
class OpenAiEmbeddingClient final : public EmbeddingClient {
public:
    OpenAiEmbeddingClient(Endpoint ep, std::string model, std::size_t dim)
        : ep_(std::move(ep)), model_(std::move(model)), dim_(dim) {}

    std::size_t dim() const override { return dim_; }

    std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) override {
        auto reply = post_json(ep_, {{"model", model_}, {"input", texts}}, texts.empty() ? "" : texts.front());
        std::vector<std::vector<double>> out(texts.size());
        try {
            const auto& data = reply.at("data");
            if (data.size() != texts.size())
                throw ParseError("embedding reply has " + std::to_string(data.size()) + " items for " +
                                     std::to_string(texts.size()) + " inputs",
                                 reply.dump());
            for (std::size_t i = 0; i < data.size(); ++i) {
                const auto idx = data[i].contains("index") ? data[i]["index"].get<std::size_t>() : i;
                if (idx >= out.size()) throw ParseError("embedding index out of range", reply.dump());
                out[idx] = data[i].at("embedding").get<std::vector<double>>();
                if (out[idx].size() != dim_)
                    throw ParseError("embedding of length " + std::to_string(out[idx].size()) + ", expected " +
                                         std::to_string(dim_),
                                     reply.dump());
            }
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("malformed embedding reply: ") + e.what(), reply.dump());
        }
        return out;
    }

private:
    Endpoint ep_;
    std::string model_;
    std::size_t dim_;
};

/// Generic tagging service: POST {"id": ...} -> {"tags": [...]}.
class HttpTagger final : public TaggerClient {
public:
    explicit HttpTagger(Endpoint ep) : ep_(std::move(ep)) {}

    std::vector<std::string> tag(const std::string& id) override {
        auto reply = post_json(ep_, {{"id", id}}, id);
        try {
            if (!reply.contains("tags") || reply["tags"].is_null()) return {};
            return reply["tags"].get<std::vector<std::string>>();
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("tagger reply without a string list 'tags': ") + e.what(), reply.dump());
        }
    }

private:
    Endpoint ep_;
};

} // namespace mavias::discovery
