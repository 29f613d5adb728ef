#pragma once

// Structured run trace: newline-delimited JSON records. One header, one
// record per phase per interaction (step index, phase, agent ids, prompt and
// response digests, memory-diff digests), segmentation events, and a footer
// carrying the final snapshot digest. Enough to diff golden transcripts and
// to verify a replayed run step by step.

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "agentsim/common.hpp"
#include "agentsim/digest.hpp"

namespace agentsim {

struct TraceCall {
    std::string kind;
    std::string template_id;
    std::string prompt_digest;
    std::string response_digest;
    bool degraded = false;
    // set for choose-positive prompts: string positions of the negative and
    // positive candidate texts in the rendered prompt
    std::optional<size_t> neg_at;
    std::optional<size_t> pos_at;

    nlohmann::json to_json() const {
        nlohmann::json j{{"kind", kind},
                         {"template", template_id},
                         {"prompt", prompt_digest},
                         {"response", response_digest}};
        if (degraded) j["degraded"] = true;
        if (neg_at) j["neg_at"] = *neg_at;
        if (pos_at) j["pos_at"] = *pos_at;
        return j;
    }
};

struct TraceWrite {
    std::string target;  // "user" | "item" | "group"
    std::string id;
    std::string layer;  // "separated" | "fused" | "memory" | "shared"
    std::string domain;
    std::string digest;  // digest of the written content

    nlohmann::json to_json() const {
        return {{"target", target}, {"id", id}, {"layer", layer}, {"domain", domain}, {"digest", digest}};
    }
};

struct TraceRecord {
    std::int64_t step = 0;
    std::string phase;
    std::string user;
    std::string item;
    std::string negative;
    std::string domain;
    std::vector<TraceCall> calls;
    std::vector<TraceWrite> writes;
    std::string note;

    nlohmann::json to_json() const {
        nlohmann::json j{{"type", "step"}, {"step", step}, {"phase", phase}};
        if (!user.empty()) j["user"] = user;
        if (!item.empty()) j["item"] = item;
        if (!negative.empty()) j["negative"] = negative;
        if (!domain.empty()) j["domain"] = domain;
        if (!calls.empty()) {
            auto arr = nlohmann::json::array();
            for (const auto& c : calls) arr.push_back(c.to_json());
            j["calls"] = arr;
        }
        if (!writes.empty()) {
            auto arr = nlohmann::json::array();
            for (const auto& w : writes) arr.push_back(w.to_json());
            j["writes"] = arr;
        }
        if (!note.empty()) j["note"] = note;
        return j;
    }
};

class TraceWriter {
public:
    TraceWriter() = default;

    explicit TraceWriter(const std::string& path) : path_(path) {
        out_.open(path, std::ios::binary | std::ios::trunc);
        if (!out_) throw AgentError(ErrorCode::IoError, "cannot open trace for writing: " + path);
    }

    bool active() const { return out_.is_open(); }

    void header(const std::string& config_digest, const std::string& dataset_digest,
                std::uint64_t seed, const std::string& backend,
                const std::vector<std::string>& domains) {
        write({{"type", "header"},
               {"version", 1},
               {"config_digest", config_digest},
               {"dataset_digest", dataset_digest},
               {"seed", seed},
               {"backend", backend},
               {"domains", domains}});
    }

    void step(const TraceRecord& rec) { write(rec.to_json()); }

    void segment(std::int64_t after_step, std::int64_t epoch, size_t group_count,
                 const std::string& status) {
        write({{"type", "segment"},
               {"after_step", after_step},
               {"epoch", epoch},
               {"groups", group_count},
               {"status", status}});
    }

    void footer(std::int64_t steps, const std::string& snapshot_digest) {
        write({{"type", "end"}, {"steps", steps}, {"snapshot_digest", snapshot_digest}});
    }

    const std::string& path() const { return path_; }

private:
    void write(const nlohmann::json& j) {
        if (!out_.is_open()) return;
        out_ << j.dump() << '\n';
        out_.flush();
    }

    std::string path_;
    std::ofstream out_;
};

struct TraceFile {
    nlohmann::json header;
    std::vector<nlohmann::json> records;  // step + segment records, in order
    nlohmann::json footer;

    std::vector<nlohmann::json> steps() const {
        std::vector<nlohmann::json> out;
        for (const auto& r : records)
            if (r.value("type", "") == "step") out.push_back(r);
        return out;
    }
};

// Requires an intact header and footer; a trace without its end marker is
// treated as truncated.
inline TraceFile read_trace(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw AgentError(ErrorCode::IoError, "cannot open trace: " + path);
    TraceFile tf;
    std::string line;
    bool have_header = false, have_footer = false;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) throw AgentError(ErrorCode::ReplayError, "unparseable trace record");
        const std::string type = j.value("type", "");
        if (type == "header") {
            tf.header = j;
            have_header = true;
        } else if (type == "end") {
            tf.footer = j;
            have_footer = true;
        } else if (type == "step" || type == "segment") {
            tf.records.push_back(j);
        } else {
            throw AgentError(ErrorCode::ReplayError, "unknown trace record type '" + type + "'");
        }
    }
    if (!have_header || !have_footer)
        throw AgentError(ErrorCode::ReplayError, "trace truncated (missing header or end marker)");
    return tf;
}

inline std::string file_sha256(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw AgentError(ErrorCode::IoError, "cannot open file for digest: " + path);
    Sha256 h;
    char buf[65536];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
        h.update(buf, static_cast<size_t>(in.gcount()));
    return to_hex(h.finish());
}

}  // namespace agentsim
