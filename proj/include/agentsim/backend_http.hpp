#pragma once

// Live backend speaking the common chat-completions/embeddings JSON protocol.
// Endpoint, model names and the credential environment variable come from
// config. Transport failures and 5xx responses are retried with exponential
// backoff; anything else surfaces immediately.

#include <cstdlib>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "agentsim/backend.hpp"
#include "agentsim/templates.hpp"

namespace agentsim {

struct HttpBackendConfig {
    std::string endpoint;  // e.g. "https://api.example.com"
    std::string completion_path = "/v1/chat/completions";
    std::string embedding_path = "/v1/embeddings";
    std::string model;
    std::string embedding_model;
    std::string api_key_env;  // name of the env var holding the credential
    int timeout_ms = 30000;
    RetryPolicy retry;
    int dimension_hint = 0;
};

class HttpBackend : public TextBackend {
public:
    HttpBackend(HttpBackendConfig cfg, TemplateSet templates)
        : cfg_(std::move(cfg)), templates_(std::move(templates)) {
        if (cfg_.endpoint.empty())
            throw AgentError(ErrorCode::ConfigError, "live backend requires an endpoint");
    }

    CompletionResponse complete(const PromptRequest& req) override {
        validate_request(req);
        const std::string prompt = templates_.render(req.template_id, req.slots);
        nlohmann::json body;
        body["model"] = cfg_.model;
        body["messages"] = nlohmann::json::array({{{"role", "user"}, {"content", prompt}}});
        body["seed"] = req.seed;
        nlohmann::json resp = with_retries(cfg_.retry, [&] { return post(cfg_.completion_path, body); });
        try {
            const auto& choice = resp.at("choices").at(0);
            CompletionResponse out;
            out.text = choice.at("message").at("content").get<std::string>();
            if (resp.contains("usage")) {
                out.prompt_tokens = resp["usage"].value("prompt_tokens", 0);
                out.completion_tokens = resp["usage"].value("completion_tokens", 0);
            }
            if (trim(out.text).empty())
                throw AgentError(ErrorCode::MalformedResponse, "empty generation");
            return out;
        } catch (const nlohmann::json::exception& e) {
            throw AgentError(ErrorCode::MalformedResponse,
                             std::string("unexpected completion payload: ") + e.what());
        }
    }

    Embedding embed(const std::string& text) override {
        if (trim(text).empty())
            throw AgentError(ErrorCode::InvalidArgument, "embed: empty text");
        nlohmann::json body;
        body["model"] = cfg_.embedding_model.empty() ? cfg_.model : cfg_.embedding_model;
        body["input"] = nlohmann::json::array({text});
        nlohmann::json resp = with_retries(cfg_.retry, [&] { return post(cfg_.embedding_path, body); });
        try {
            Embedding v = resp.at("data").at(0).at("embedding").get<Embedding>();
            if (v.empty() || l2_norm(v) <= 0)
                throw AgentError(ErrorCode::MalformedResponse, "degenerate embedding");
            if (dimension_ == 0) dimension_ = static_cast<int>(v.size());
            return v;
        } catch (const nlohmann::json::exception& e) {
            throw AgentError(ErrorCode::MalformedResponse,
                             std::string("unexpected embedding payload: ") + e.what());
        }
    }

    int dimension() const override { return dimension_ ? dimension_ : cfg_.dimension_hint; }
    std::string identity() const override { return "live:" + cfg_.model; }

private:
    nlohmann::json post(const std::string& path, const nlohmann::json& body) {
        httplib::Client client(cfg_.endpoint);
        client.set_connection_timeout(0, cfg_.timeout_ms * 1000);
        client.set_read_timeout(cfg_.timeout_ms / 1000, (cfg_.timeout_ms % 1000) * 1000);
        httplib::Headers headers;
        if (!cfg_.api_key_env.empty()) {
            const char* key = std::getenv(cfg_.api_key_env.c_str());
            if (key && *key) headers.emplace("Authorization", std::string("Bearer ") + key);
        }
        auto res = client.Post(path, headers, body.dump(), "application/json");
        if (!res)
            throw AgentError(ErrorCode::BackendUnavailable,
                             "transport failure: " + httplib::to_string(res.error()));
        if (res->status >= 500)
            throw AgentError(ErrorCode::BackendUnavailable,
                             "server error " + std::to_string(res->status));
        if (res->status < 200 || res->status >= 300)
            throw AgentError(ErrorCode::MalformedResponse,
                             "unexpected status " + std::to_string(res->status) + ": " + res->body);
        nlohmann::json j = nlohmann::json::parse(res->body, nullptr, false);
        if (j.is_discarded())
            throw AgentError(ErrorCode::MalformedResponse, "response body is not JSON");
        return j;
    }

    HttpBackendConfig cfg_;
    TemplateSet templates_;
    int dimension_ = 0;
};

}  // namespace agentsim
