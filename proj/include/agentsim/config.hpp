#pragma once

// Run configuration: one JSON file with nested sections (backend, memory,
// groups, simulation, evaluation, paths). Every knob has the shipped default;
// the example config under data/configs spells all of them out. Also home of
// the run manifest written at the end of every training run.

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>

#include <json.hpp>

#include "agentsim/backend.hpp"
#include "agentsim/dataset.hpp"
#include "agentsim/evaluation.hpp"
#include "agentsim/simulation.hpp"
#include "agentsim/templates.hpp"

namespace agentsim {

struct BackendSection {
    std::string mode = "scripted";  // scripted | replay | live
    std::string rules_path;         // scripted rule file
    std::string cache_path;         // replay cache file
    std::string endpoint;
    std::string completion_path = "/v1/chat/completions";
    std::string embedding_path = "/v1/embeddings";
    std::string model;
    std::string embedding_model;
    std::string api_key_env;
    int timeout_ms = 30000;
    int retries = 3;
    int retry_base_ms = 1000;
};

struct AppConfig {
    nlohmann::json raw;
    std::string source_path;

    BackendSection backend;
    std::string templates_path;
    std::string bundle_dir;
    SimulationConfig sim;
    EvalConfig eval;

    std::string digest() const { return sha256_hex(raw.dump()); }
};

inline AppConfig parse_app_config(const nlohmann::json& j, const std::string& source_path = "") {
    AppConfig cfg;
    cfg.raw = j;
    cfg.source_path = source_path;
    try {
        if (j.contains("backend")) {
            const auto& b = j["backend"];
            cfg.backend.mode = b.value("mode", cfg.backend.mode);
            cfg.backend.rules_path = b.value("rules", cfg.backend.rules_path);
            cfg.backend.cache_path = b.value("cache", cfg.backend.cache_path);
            cfg.backend.endpoint = b.value("endpoint", cfg.backend.endpoint);
            cfg.backend.completion_path = b.value("completion_path", cfg.backend.completion_path);
            cfg.backend.embedding_path = b.value("embedding_path", cfg.backend.embedding_path);
            cfg.backend.model = b.value("model", cfg.backend.model);
            cfg.backend.embedding_model = b.value("embedding_model", cfg.backend.embedding_model);
            cfg.backend.api_key_env = b.value("api_key_env", cfg.backend.api_key_env);
            cfg.backend.timeout_ms = b.value("timeout_ms", cfg.backend.timeout_ms);
            cfg.backend.retries = b.value("retries", cfg.backend.retries);
            cfg.backend.retry_base_ms = b.value("retry_base_ms", cfg.backend.retry_base_ms);
        }
        cfg.templates_path = j.value("templates", "");
        if (j.contains("paths")) cfg.bundle_dir = j["paths"].value("bundle", "");

        if (j.contains("memory")) {
            const auto& m = j["memory"];
            cfg.sim.memory.group_capacity = m.value("group_capacity", cfg.sim.memory.group_capacity);
            cfg.sim.memory.shared_view_size =
                m.value("shared_view_size", cfg.sim.memory.shared_view_size);
            cfg.sim.memory.include_own_entries =
                m.value("include_own_entries", cfg.sim.memory.include_own_entries);
            cfg.sim.memory.summary_category_chars =
                m.value("summary_category_chars", cfg.sim.memory.summary_category_chars);
        }
        if (j.contains("groups")) {
            const auto& g = j["groups"];
            cfg.sim.grouping.max_tags = g.value("max_tags", cfg.sim.grouping.max_tags);
            cfg.sim.grouping.max_groups_per_user =
                g.value("max_groups_per_user", cfg.sim.grouping.max_groups_per_user);
            cfg.sim.grouping.k = g.value("k", cfg.sim.grouping.k);
            cfg.sim.grouping.kmeans.max_iters =
                g.value("kmeans_max_iters", cfg.sim.grouping.kmeans.max_iters);
            cfg.sim.grouping.kmeans.restarts =
                g.value("kmeans_restarts", cfg.sim.grouping.kmeans.restarts);
            cfg.sim.grouping.resegment_every =
                g.value("resegment_every", cfg.sim.grouping.resegment_every);
        }
        if (j.contains("simulation")) {
            const auto& s = j["simulation"];
            cfg.sim.dual_layer = s.value("dual_layer", cfg.sim.dual_layer);
            cfg.sim.shared_groups = s.value("shared_groups", cfg.sim.shared_groups);
            const std::string group_by = s.value("group_by", "interest");
            if (group_by == "interest") {
                cfg.sim.group_by = SimulationConfig::GroupBy::Interest;
            } else if (group_by == "history") {
                cfg.sim.group_by = SimulationConfig::GroupBy::History;
            } else {
                throw AgentError(ErrorCode::ConfigError, "group_by must be interest or history");
            }
            cfg.sim.epochs = s.value("epochs", cfg.sim.epochs);
            cfg.sim.seed = s.value("seed", cfg.sim.seed);
            cfg.sim.fuse_every_interaction =
                s.value("fuse_every_interaction", cfg.sim.fuse_every_interaction);
            cfg.sim.slot_char_budget = s.value("slot_char_budget", cfg.sim.slot_char_budget);
        }
        if (j.contains("evaluation")) {
            const auto& e = j["evaluation"];
            cfg.eval.runs = e.value("runs", cfg.eval.runs);
            cfg.eval.seed = e.value("seed", cfg.eval.seed);
            if (e.contains("methods"))
                cfg.eval.methods = e["methods"].get<std::vector<std::string>>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw AgentError(ErrorCode::ConfigError, std::string("config: ") + e.what());
    }
    cfg.sim.validate();
    const std::string& mode = cfg.backend.mode;
    if (mode != "scripted" && mode != "replay" && mode != "live")
        throw AgentError(ErrorCode::ConfigError, "backend.mode must be scripted, replay, or live");
    if (mode == "scripted" && cfg.backend.rules_path.empty())
        throw AgentError(ErrorCode::ConfigError, "scripted backend needs backend.rules");
    if (mode == "replay" && cfg.backend.cache_path.empty())
        throw AgentError(ErrorCode::ConfigError, "replay backend needs backend.cache");
    if (mode == "live" && cfg.backend.endpoint.empty())
        throw AgentError(ErrorCode::ConfigError, "live backend needs backend.endpoint");
    return cfg;
}

inline AppConfig load_app_config(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw AgentError(ErrorCode::IoError, "cannot open config: " + path);
    nlohmann::json j = nlohmann::json::parse(f, nullptr, false);
    if (j.is_discarded()) throw AgentError(ErrorCode::ConfigError, "config is not valid JSON: " + path);
    // paths in the file resolve relative to the file's directory
    AppConfig cfg = parse_app_config(j, path);
    namespace fs = std::filesystem;
    fs::path base = fs::path(path).parent_path();
    auto resolve = [&](std::string& p) {
        if (p.empty()) return;
        fs::path candidate(p);
        if (candidate.is_relative()) p = (base / candidate).lexically_normal().string();
    };
    resolve(cfg.backend.rules_path);
    resolve(cfg.backend.cache_path);
    resolve(cfg.templates_path);
    resolve(cfg.bundle_dir);
    return cfg;
}

}  // namespace agentsim
