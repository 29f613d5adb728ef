#pragma once

// Text-generation and embedding calls go through one interface with three
// implementations: a deterministic scripted backend (rule file), a replay
// cache that records and replays responses keyed by request digest, and a
// live HTTP client (backend_http.hpp). Framework code never talks to a
// service directly.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "agentsim/common.hpp"
#include "agentsim/digest.hpp"

namespace agentsim {

enum class PromptKind {
    ChoosePositive,
    RankCandidates,
    UpdateUserMemory,
    ExtractRelevantPreferences,
    FusePreferences,
    UpdateItemMemory,
    ExtractTags,
    NameGroup,
};

inline const char* kind_name(PromptKind k) {
    switch (k) {
        case PromptKind::ChoosePositive: return "choose-positive";
        case PromptKind::RankCandidates: return "rank-candidates";
        case PromptKind::UpdateUserMemory: return "update-user-memory";
        case PromptKind::ExtractRelevantPreferences: return "extract-relevant-preferences";
        case PromptKind::FusePreferences: return "fuse-preferences";
        case PromptKind::UpdateItemMemory: return "update-item-memory";
        case PromptKind::ExtractTags: return "extract-tags";
        case PromptKind::NameGroup: return "name-group";
    }
    return "unknown";
}

inline PromptKind kind_from_name(const std::string& name) {
    static const std::map<std::string, PromptKind> table = {
        {"choose-positive", PromptKind::ChoosePositive},
        {"rank-candidates", PromptKind::RankCandidates},
        {"update-user-memory", PromptKind::UpdateUserMemory},
        {"extract-relevant-preferences", PromptKind::ExtractRelevantPreferences},
        {"fuse-preferences", PromptKind::FusePreferences},
        {"update-item-memory", PromptKind::UpdateItemMemory},
        {"extract-tags", PromptKind::ExtractTags},
        {"name-group", PromptKind::NameGroup},
    };
    auto it = table.find(name);
    if (it == table.end())
        throw AgentError(ErrorCode::InvalidArgument, "unknown prompt kind '" + name + "'");
    return it->second;
}

using SlotMap = std::map<std::string, std::string>;

struct PromptRequest {
    PromptKind kind = PromptKind::ChoosePositive;
    std::string template_id;
    SlotMap slots;
    std::uint64_t seed = 0;
};

struct CompletionResponse {
    std::string text;
    std::uint64_t prompt_tokens = 0;
    std::uint64_t completion_tokens = 0;
};

using Embedding = std::vector<double>;

inline double l2_norm(const Embedding& v) {
    double s = 0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

// Slots required for each kind, beyond what the template itself demands.
inline void validate_request(const PromptRequest& req) {
    static const std::map<PromptKind, std::vector<std::string>> required = {
        {PromptKind::ChoosePositive, {"candidate_a", "candidate_b"}},
        {PromptKind::RankCandidates, {"candidates"}},
        {PromptKind::UpdateUserMemory, {"positive", "negative"}},
        {PromptKind::ExtractRelevantPreferences, {"source_memory", "target_domain"}},
        {PromptKind::FusePreferences, {"separated"}},
        {PromptKind::UpdateItemMemory, {"item_memory", "stance"}},
        {PromptKind::ExtractTags, {"memories"}},
        {PromptKind::NameGroup, {"tags"}},
    };
    if (req.template_id.empty())
        throw AgentError(ErrorCode::InvalidArgument, "prompt request without template id");
    for (const auto& slot : required.at(req.kind)) {
        if (!req.slots.count(slot))
            throw AgentError(ErrorCode::InvalidArgument,
                             std::string("request kind ") + kind_name(req.kind) +
                                 " missing required slot '" + slot + "'");
    }
}

// Stable cache key: template id, canonicalized slots, seed. Map ordering of
// SlotMap already canonicalizes key order.
inline std::string request_digest(const PromptRequest& req) {
    std::string buf = "v1|";
    buf += req.template_id;
    for (const auto& [k, v] : req.slots) {
        buf += '\x1f';
        buf += k;
        buf += '\x1e';
        buf += v;
    }
    buf += '\x1f';
    buf += std::to_string(req.seed);
    return sha256_hex(buf);
}

inline std::string embed_digest(const std::string& text) {
    return sha256_hex("embed\x1f" + text);
}

class TextBackend {
public:
    virtual ~TextBackend() = default;
    virtual CompletionResponse complete(const PromptRequest& req) = 0;
    virtual Embedding embed(const std::string& text) = 0;
    // Declared embedding dimension; 0 when unknown until the first call.
    virtual int dimension() const = 0;
    virtual std::string identity() const = 0;
};

using BackendPtr = std::shared_ptr<TextBackend>;

struct RetryPolicy {
    int attempts = 3;
    int base_delay_ms = 1000;
};

// Runs fn with bounded retries and exponential backoff. Only transient
// failures (BackendUnavailable) are retried.
template <typename Fn>
auto with_retries(const RetryPolicy& policy, Fn&& fn) -> decltype(fn()) {
    int attempt = 0;
    for (;;) {
        try {
            return fn();
        } catch (const AgentError& e) {
            if (e.code() != ErrorCode::BackendUnavailable) throw;
            ++attempt;
            if (attempt >= policy.attempts) throw;
            auto delay = std::chrono::milliseconds(policy.base_delay_ms << (attempt - 1));
            std::this_thread::sleep_for(delay);
        }
    }
}

// ---------------------------------------------------------------------------
// Scripted backend
// ---------------------------------------------------------------------------

// One rule: a predicate over (kind, template, slot substrings) plus a canned
// response. First matching rule wins. Rule files must carry a textual
// catch-all; embeddings without a matching rule fall back to a deterministic
// hash embedding so offline runs never stall on a missing rule.
struct ScriptedRule {
    std::string kind = "*";  // prompt kind name, "embed", or "*"
    std::string template_id;  // empty = any
    std::map<std::string, std::string> contains;  // slot -> required substring
    std::optional<std::string> text;
    std::optional<std::string> echo_slot;
    std::optional<Embedding> embedding;

    bool textual() const { return text.has_value() || echo_slot.has_value(); }
    bool is_catch_all() const { return kind == "*" && template_id.empty() && contains.empty(); }
};

class ScriptedBackend : public TextBackend {
public:
    explicit ScriptedBackend(const nlohmann::json& config) { configure(config); }

    static std::shared_ptr<ScriptedBackend> from_file(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw AgentError(ErrorCode::IoError, "cannot open scripted rules: " + path);
        nlohmann::json j;
        try {
            f >> j;
        } catch (const nlohmann::json::exception& e) {
            throw AgentError(ErrorCode::ConfigError,
                             "scripted rules parse failure in " + path + ": " + e.what());
        }
        return std::make_shared<ScriptedBackend>(j);
    }

    CompletionResponse complete(const PromptRequest& req) override {
        validate_request(req);
        std::lock_guard lock(mu_);
        ++calls_by_kind_[kind_name(req.kind)];
        for (const auto& rule : rules_) {
            if (!rule.textual()) continue;
            if (!matches(rule, kind_name(req.kind), req.template_id, req.slots)) continue;
            std::string out;
            if (rule.text) {
                out = *rule.text;
            } else {
                auto it = req.slots.find(*rule.echo_slot);
                if (it == req.slots.end())
                    throw AgentError(ErrorCode::MalformedResponse,
                                     "echo rule references absent slot '" + *rule.echo_slot + "'");
                out = it->second;
            }
            if (out.empty())
                throw AgentError(ErrorCode::MalformedResponse, "scripted rule produced empty text");
            return CompletionResponse{out, 0, 0};
        }
        // unreachable when the validated catch-all exists
        throw AgentError(ErrorCode::MalformedResponse, "no scripted rule matched completion");
    }

    Embedding embed(const std::string& text) override {
        if (trim(text).empty())
            throw AgentError(ErrorCode::InvalidArgument, "embed: empty text");
        std::lock_guard lock(mu_);
        ++calls_by_kind_["embed"];
        SlotMap pseudo{{"text", text}};
        for (const auto& rule : rules_) {
            if (!rule.embedding) continue;
            if (!matches(rule, "embed", "", pseudo)) continue;
            return *rule.embedding;
        }
        return hash_embedding(text, dimension_);
    }

    int dimension() const override { return dimension_; }
    std::string identity() const override { return "scripted"; }

    std::map<std::string, std::uint64_t> call_counts() const {
        std::lock_guard lock(mu_);
        return calls_by_kind_;
    }

    // Deterministic pseudo-embedding: component i is derived from
    // sha256(text # i) and mapped into [-1, 1).
    static Embedding hash_embedding(const std::string& text, int dim) {
        Embedding v(static_cast<size_t>(dim));
        for (int i = 0; i < dim; ++i) {
            std::uint64_t h = sha256_u64(text + "#" + std::to_string(i));
            v[static_cast<size_t>(i)] = static_cast<double>(h >> 11) * 0x1.0p-53 * 2.0 - 1.0;
        }
        if (l2_norm(v) < 1e-12) v[0] = 1.0;
        return v;
    }

private:
    void configure(const nlohmann::json& config) {
        if (!config.is_object() || !config.contains("rules") || !config["rules"].is_array())
            throw AgentError(ErrorCode::ConfigError, "scripted rules: expected {dimension, rules[]}");
        dimension_ = config.value("dimension", 8);
        if (dimension_ <= 0)
            throw AgentError(ErrorCode::ConfigError, "scripted rules: dimension must be > 0");
        bool has_catch_all = false;
        for (const auto& rj : config["rules"]) {
            ScriptedRule r;
            r.kind = rj.value("kind", "*");
            r.template_id = rj.value("template", "");
            if (rj.contains("contains")) {
                for (auto it = rj["contains"].begin(); it != rj["contains"].end(); ++it)
                    r.contains[it.key()] = it.value().get<std::string>();
            }
            if (rj.contains("text")) r.text = rj["text"].get<std::string>();
            if (rj.contains("echo_slot")) r.echo_slot = rj["echo_slot"].get<std::string>();
            if (rj.contains("embedding")) {
                r.embedding = rj["embedding"].get<Embedding>();
                if (static_cast<int>(r.embedding->size()) != dimension_)
                    throw AgentError(ErrorCode::ConfigError,
                                     "scripted rule embedding does not match declared dimension");
                if (l2_norm(*r.embedding) <= 0)
                    throw AgentError(ErrorCode::ConfigError, "scripted rule embedding has zero norm");
            }
            if (!r.textual() && !r.embedding)
                throw AgentError(ErrorCode::ConfigError, "scripted rule without response payload");
            if (r.textual() && r.is_catch_all()) has_catch_all = true;
            rules_.push_back(std::move(r));
        }
        if (!has_catch_all)
            throw AgentError(ErrorCode::ConfigError,
                             "scripted rules must include a textual catch-all (kind \"*\")");
    }

    static bool matches(const ScriptedRule& rule, const std::string& kind,
                        const std::string& template_id, const SlotMap& slots) {
        if (rule.kind != "*" && rule.kind != kind) return false;
        if (!rule.template_id.empty() && rule.template_id != template_id) return false;
        for (const auto& [slot, needle] : rule.contains) {
            auto it = slots.find(slot);
            if (it == slots.end()) return false;
            if (it->second.find(needle) == std::string::npos) return false;
        }
        return true;
    }

    int dimension_ = 8;
    std::vector<ScriptedRule> rules_;
    mutable std::mutex mu_;
    std::map<std::string, std::uint64_t> calls_by_kind_;
};

// ---------------------------------------------------------------------------
// Replay cache
// ---------------------------------------------------------------------------

// Append-only record file keyed by request digest. With an inner backend the
// cache records misses; without one it replays strictly and a miss is a
// backend-unavailable error. Single writer, concurrent readers.
class ReplayBackend : public TextBackend {
public:
    ReplayBackend(std::string path, BackendPtr inner) : path_(std::move(path)), inner_(std::move(inner)) {
        load();
        out_.open(path_, std::ios::app | std::ios::binary);
        if (!out_) throw AgentError(ErrorCode::IoError, "cannot open replay cache for append: " + path_);
    }

    CompletionResponse complete(const PromptRequest& req) override {
        validate_request(req);
        const std::string key = request_digest(req);
        {
            std::shared_lock lock(mu_);
            auto it = completions_.find(key);
            if (it != completions_.end()) return CompletionResponse{it->second, 0, 0};
        }
        if (!inner_)
            throw AgentError(ErrorCode::BackendUnavailable,
                             "replay cache miss with no live backend (digest " + key + ")");
        CompletionResponse resp = inner_->complete(req);
        std::unique_lock lock(mu_);
        auto [it, inserted] = completions_.emplace(key, resp.text);
        if (inserted) append_record(key, kind_name(req.kind), "completion", resp.text, {});
        return CompletionResponse{it->second, resp.prompt_tokens, resp.completion_tokens};
    }

    Embedding embed(const std::string& text) override {
        if (trim(text).empty())
            throw AgentError(ErrorCode::InvalidArgument, "embed: empty text");
        const std::string key = embed_digest(text);
        {
            std::shared_lock lock(mu_);
            auto it = embeddings_.find(key);
            if (it != embeddings_.end()) return it->second;
        }
        if (!inner_)
            throw AgentError(ErrorCode::BackendUnavailable,
                             "replay cache miss with no live backend (digest " + key + ")");
        Embedding vec = inner_->embed(text);
        std::unique_lock lock(mu_);
        auto [it, inserted] = embeddings_.emplace(key, vec);
        if (inserted) append_record(key, "embed", "embedding", "", it->second);
        return it->second;
    }

    int dimension() const override {
        if (inner_) return inner_->dimension();
        std::shared_lock lock(mu_);
        return embeddings_.empty() ? 0 : static_cast<int>(embeddings_.begin()->second.size());
    }

    std::string identity() const override {
        return "replay(" + (inner_ ? inner_->identity() : std::string("strict")) + ")";
    }

    size_t cached_completions() const {
        std::shared_lock lock(mu_);
        return completions_.size();
    }

private:
    void load() {
        std::ifstream in(path_, std::ios::binary);
        if (!in) return;  // a fresh cache file is created on first append
        std::string line;
        while (std::getline(in, line)) {
            if (trim(line).empty()) continue;
            nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded()) continue;  // tolerate a torn trailing record
            const std::string type = j.value("type", "");
            const std::string digest = j.value("digest", "");
            if (digest.empty()) continue;
            if (type == "completion") {
                completions_[digest] = j.value("text", "");
            } else if (type == "embedding" && j.contains("values")) {
                embeddings_[digest] = j["values"].get<Embedding>();
            }
        }
    }

    void append_record(const std::string& digest, const std::string& kind, const std::string& type,
                       const std::string& text, const Embedding& values) {
        nlohmann::json j;
        j["digest"] = digest;
        j["kind"] = kind;
        j["type"] = type;
        if (type == "completion") j["text"] = text;
        if (type == "embedding") j["values"] = values;
        j["ts"] = std::chrono::duration_cast<std::chrono::seconds>(
                      std::chrono::system_clock::now().time_since_epoch())
                      .count();
        out_ << j.dump() << '\n';
        out_.flush();
    }

    std::string path_;
    BackendPtr inner_;
    mutable std::shared_mutex mu_;
    std::map<std::string, std::string> completions_;
    std::map<std::string, Embedding> embeddings_;
    std::ofstream out_;
};

// ---------------------------------------------------------------------------
// Recording decorator (test and audit aid)
// ---------------------------------------------------------------------------

class RecordingBackend : public TextBackend {
public:
    explicit RecordingBackend(BackendPtr inner) : inner_(std::move(inner)) {}

    CompletionResponse complete(const PromptRequest& req) override {
        auto resp = inner_->complete(req);
        std::lock_guard lock(mu_);
        requests_.push_back(req);
        responses_.push_back(resp.text);
        return resp;
    }

    Embedding embed(const std::string& text) override {
        auto v = inner_->embed(text);
        std::lock_guard lock(mu_);
        embedded_.push_back(text);
        return v;
    }

    int dimension() const override { return inner_->dimension(); }
    std::string identity() const override { return inner_->identity(); }

    std::vector<PromptRequest> requests() const {
        std::lock_guard lock(mu_);
        return requests_;
    }
    std::vector<std::string> responses() const {
        std::lock_guard lock(mu_);
        return responses_;
    }
    std::vector<std::string> embedded_texts() const {
        std::lock_guard lock(mu_);
        return embedded_;
    }

private:
    BackendPtr inner_;
    mutable std::mutex mu_;
    std::vector<PromptRequest> requests_;
    std::vector<std::string> responses_;
    std::vector<std::string> embedded_;
};

}  // namespace agentsim
