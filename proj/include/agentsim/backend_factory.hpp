#pragma once

// Builds the configured backend: scripted rules, strict or recording replay
// cache, or the live HTTP client (optionally wrapped in a recording cache).

#include <memory>

#include "agentsim/backend.hpp"
#include "agentsim/backend_http.hpp"
#include "agentsim/config.hpp"
#include "agentsim/templates.hpp"

namespace agentsim {

inline BackendPtr make_backend(const AppConfig& cfg, const TemplateSet& templates) {
    const BackendSection& b = cfg.backend;
    auto make_live = [&]() -> BackendPtr {
        HttpBackendConfig http;
        http.endpoint = b.endpoint;
        http.completion_path = b.completion_path;
        http.embedding_path = b.embedding_path;
        http.model = b.model;
        http.embedding_model = b.embedding_model;
        http.api_key_env = b.api_key_env;
        http.timeout_ms = b.timeout_ms;
        http.retry.attempts = b.retries;
        http.retry.base_delay_ms = b.retry_base_ms;
        return std::make_shared<HttpBackend>(http, templates);
    };
    if (b.mode == "scripted") return ScriptedBackend::from_file(b.rules_path);
    if (b.mode == "replay") {
        BackendPtr inner;
        if (!b.endpoint.empty()) inner = make_live();
        return std::make_shared<ReplayBackend>(b.cache_path, inner);
    }
    BackendPtr live = make_live();
    if (!b.cache_path.empty()) return std::make_shared<ReplayBackend>(b.cache_path, live);
    return live;
}

}  // namespace agentsim
