#pragma once

// Prompt templates live in a plain text file, one section per template:
//
//   [section-name]
//   body with {slot} placeholders
//
// Rendering is a single substitution pass. Every placeholder must be bound
// and every bound slot must be used; both mismatches are template errors so
// a miswired call site fails loudly instead of producing a silent prompt.

#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "agentsim/common.hpp"

namespace agentsim {

using SlotMap = std::map<std::string, std::string>;

class TemplateSet {
public:
    TemplateSet() = default;

    static TemplateSet parse(const std::string& text) {
        TemplateSet ts;
        std::string current;
        std::vector<std::string> body;
        std::istringstream in(text);
        std::string line;
        auto flush = [&]() {
            if (current.empty()) return;
            while (!body.empty() && trim(body.back()).empty()) body.pop_back();
            size_t skip = 0;
            while (skip < body.size() && trim(body[skip]).empty()) ++skip;
            std::string joined;
            for (size_t i = skip; i < body.size(); ++i) {
                if (i > skip) joined += '\n';
                joined += body[i];
            }
            if (!ts.sections_.emplace(current, joined).second)
                throw AgentError(ErrorCode::TemplateError, "duplicate template section '" + current + "'");
            body.clear();
        };
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            std::string t = trim(line);
            if (t.size() >= 2 && t.front() == '[' && t.back() == ']') {
                flush();
                current = trim(t.substr(1, t.size() - 2));
                if (current.empty())
                    throw AgentError(ErrorCode::TemplateError, "empty template section name");
            } else if (!current.empty()) {
                body.push_back(line);
            }
        }
        flush();
        return ts;
    }

    static TemplateSet load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw AgentError(ErrorCode::IoError, "cannot open template file: " + path);
        std::ostringstream ss;
        ss << f.rdbuf();
        return parse(ss.str());
    }

    bool has(const std::string& id) const { return sections_.count(id) > 0; }

    const std::string& body(const std::string& id) const {
        auto it = sections_.find(id);
        if (it == sections_.end())
            throw AgentError(ErrorCode::TemplateError, "unknown template '" + id + "'");
        return it->second;
    }

    // Slot names referenced by a template, in order of first appearance.
    std::vector<std::string> placeholders(const std::string& id) const {
        std::vector<std::string> out;
        std::set<std::string> seen;
        scan(body(id), [&](const std::string& name, size_t, size_t) {
            if (seen.insert(name).second) out.push_back(name);
        });
        return out;
    }

    struct Rendered {
        std::string text;
        // position of each slot's first substitution in the rendered text
        std::map<std::string, size_t> slot_at;
    };

    Rendered render_with_positions(const std::string& id, const SlotMap& slots) const {
        const std::string& tpl = body(id);
        Rendered out;
        out.text.reserve(tpl.size());
        std::set<std::string> used;
        size_t last = 0;
        scan(tpl, [&](const std::string& name, size_t begin, size_t end) {
            out.text.append(tpl, last, begin - last);
            auto it = slots.find(name);
            if (it == slots.end())
                throw AgentError(ErrorCode::TemplateError,
                                 "missing slot '" + name + "' for template '" + id + "'");
            out.slot_at.emplace(name, out.text.size());
            out.text += it->second;
            used.insert(name);
            last = end;
        });
        out.text.append(tpl, last, tpl.size() - last);
        for (const auto& [k, v] : slots) {
            if (!used.count(k))
                throw AgentError(ErrorCode::TemplateError,
                                 "unused slot '" + k + "' for template '" + id + "'");
        }
        return out;
    }

    std::string render(const std::string& id, const SlotMap& slots) const {
        return render_with_positions(id, slots).text;
    }

    std::vector<std::string> ids() const {
        std::vector<std::string> out;
        for (const auto& [k, v] : sections_) out.push_back(k);
        return out;
    }

private:
    template <typename Fn>
    static void scan(const std::string& tpl, Fn&& fn) {
        size_t i = 0;
        while (i < tpl.size()) {
            if (tpl[i] != '{') {
                ++i;
                continue;
            }
            size_t j = i + 1;
            while (j < tpl.size() && (std::isalnum(static_cast<unsigned char>(tpl[j])) || tpl[j] == '_'))
                ++j;
            if (j > i + 1 && j < tpl.size() && tpl[j] == '}') {
                fn(tpl.substr(i + 1, j - i - 1), i, j + 1);
                i = j + 1;
            } else {
                ++i;
            }
        }
    }

    std::map<std::string, std::string> sections_;
};

}  // namespace agentsim
