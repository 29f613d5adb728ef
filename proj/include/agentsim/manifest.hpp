#pragma once

// Run manifest: written atomically at the end of every run. The manifest
// digest covers only the determinism-relevant identity (config digest,
// dataset digest, seed, backend), so equal digests promise equal scripted
// outcomes; timestamps and artifact paths sit outside it.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include <json.hpp>

#include "agentsim/common.hpp"
#include "agentsim/digest.hpp"

namespace agentsim {

struct RunManifest {
    std::string config_digest;
    std::string dataset_digest;
    std::uint64_t seed = 0;
    std::string backend_identity;
    std::int64_t started = 0;
    std::int64_t finished = 0;
    std::map<std::string, std::string> artifacts;  // name -> path

    std::string digest() const {
        std::string buf = config_digest;
        buf += '\x1f';
        buf += dataset_digest;
        buf += '\x1f';
        buf += std::to_string(seed);
        buf += '\x1f';
        buf += backend_identity;
        return sha256_hex(buf);
    }

    nlohmann::json to_json() const {
        return {{"config_digest", config_digest},
                {"dataset_digest", dataset_digest},
                {"seed", seed},
                {"backend", backend_identity},
                {"started", started},
                {"finished", finished},
                {"manifest_digest", digest()},
                {"artifacts", artifacts}};
    }

    static RunManifest from_json(const nlohmann::json& j) {
        RunManifest m;
        try {
            m.config_digest = j.at("config_digest").get<std::string>();
            m.dataset_digest = j.at("dataset_digest").get<std::string>();
            m.seed = j.at("seed").get<std::uint64_t>();
            m.backend_identity = j.at("backend").get<std::string>();
            m.started = j.value("started", 0);
            m.finished = j.value("finished", 0);
            if (j.contains("artifacts"))
                m.artifacts = j["artifacts"].get<std::map<std::string, std::string>>();
        } catch (const nlohmann::json::exception& e) {
            throw AgentError(ErrorCode::IoError, std::string("manifest: ") + e.what());
        }
        return m;
    }

    static RunManifest load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw AgentError(ErrorCode::IoError, "cannot open manifest: " + path);
        nlohmann::json j = nlohmann::json::parse(f, nullptr, false);
        if (j.is_discarded()) throw AgentError(ErrorCode::IoError, "manifest is not JSON: " + path);
        return from_json(j);
    }
};

inline std::int64_t unix_now() {
    return std::chrono::duration_cast<std::chrono::seconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

inline void write_manifest_atomic(const RunManifest& manifest, const std::string& path) {
    namespace fs = std::filesystem;
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw AgentError(ErrorCode::IoError, "cannot write manifest: " + tmp);
        out << manifest.to_json().dump(2) << '\n';
    }
    fs::rename(tmp, path);
}

}  // namespace agentsim
