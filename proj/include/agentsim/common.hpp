#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace agentsim {

enum class ErrorCode {
    BackendUnavailable,
    MalformedResponse,
    TemplateError,
    InvalidItem,
    UnknownDomain,
    UnknownAgent,
    SnapshotError,
    TagExtractionFailed,
    InvalidK,
    NoNegativeAvailable,
    IoError,
    DatasetTooSmall,
    EvalPoolTooSmall,
    InvalidRank,
    ConfigError,
    ReplayError,
    InvalidArgument,
};

inline const char* error_code_name(ErrorCode c) {
    switch (c) {
        case ErrorCode::BackendUnavailable: return "backend-unavailable";
        case ErrorCode::MalformedResponse: return "malformed-response";
        case ErrorCode::TemplateError: return "template-error";
        case ErrorCode::InvalidItem: return "invalid-item";
        case ErrorCode::UnknownDomain: return "unknown-domain";
        case ErrorCode::UnknownAgent: return "unknown-agent";
        case ErrorCode::SnapshotError: return "snapshot-error";
        case ErrorCode::TagExtractionFailed: return "tag-extraction-failed";
        case ErrorCode::InvalidK: return "invalid-k";
        case ErrorCode::NoNegativeAvailable: return "no-negative-available";
        case ErrorCode::IoError: return "io-error";
        case ErrorCode::DatasetTooSmall: return "dataset-too-small";
        case ErrorCode::EvalPoolTooSmall: return "eval-pool-too-small";
        case ErrorCode::InvalidRank: return "invalid-rank";
        case ErrorCode::ConfigError: return "config-error";
        case ErrorCode::ReplayError: return "replay-error";
        case ErrorCode::InvalidArgument: return "invalid-argument";
    }
    return "unknown";
}

class AgentError : public std::runtime_error {
public:
    AgentError(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + what), code_(code) {}

    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

// ---- small string helpers ------------------------------------------------

inline std::string trim(std::string_view s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

inline std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    size_t start = 0;
    for (size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == sep) {
            out.emplace_back(s.substr(start, i - start));
            start = i + 1;
        }
    }
    return out;
}

inline std::vector<std::string> split_any(std::string_view s, std::string_view seps) {
    std::vector<std::string> out;
    size_t start = 0;
    for (size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || seps.find(s[i]) != std::string_view::npos) {
            out.emplace_back(s.substr(start, i - start));
            start = i + 1;
        }
    }
    return out;
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

inline size_t word_count(std::string_view s) {
    size_t n = 0;
    bool in_word = false;
    for (char c : s) {
        bool ws = std::isspace(static_cast<unsigned char>(c));
        if (!ws && !in_word) ++n;
        in_word = !ws;
    }
    return n;
}

// Keeps the newest tail of a memory text. Memories grow by prepending history
// to rewritten text, so the oldest content sits at the front.
inline std::string clip_memory(std::string_view text, size_t budget) {
    if (text.size() <= budget) return std::string(text);
    return std::string(text.substr(text.size() - budget));
}

// Locale-independent double formatting (shortest round-trip form).
inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline bool parse_double(std::string_view s, double& out) {
    auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc{} && res.ptr == s.data() + s.size();
}

inline bool parse_int64(std::string_view s, std::int64_t& out) {
    auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc{} && res.ptr == s.data() + s.size();
}

}  // namespace agentsim
