#pragma once

// All agent memory state lives here: item memories seeded from side
// information, per-domain dual-layer user memories (separated + fused), and
// bounded group-shared memories. Reads assemble the decision context used by
// the inference phase; writes are issued by the update phase.
//
// The store has single-writer semantics: the simulation loop is the only
// writer, reads may happen concurrently between writes.

#include <deque>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "agentsim/common.hpp"
#include "agentsim/digest.hpp"

namespace agentsim {

using DomainId = std::string;

// Sentinel memory domain used when the dual-layer architecture is disabled
// and a user keeps one memory across all domains.
inline const std::string kAllDomains = "ALL";

struct ItemAgent {
    std::string id;
    DomainId domain;
    std::string title;
    std::string category;
    std::string memory;

    std::string side_info() const {
        std::string out = "Title: " + title;
        if (!category.empty()) out += "; Category: " + category;
        return out;
    }
};

struct UserAgent {
    std::string id;
    std::map<DomainId, std::string> separated;
    std::map<DomainId, std::string> fused;
    std::set<std::string> groups;
};

struct SharedEntry {
    std::string user;
    std::string item_summary;
    DomainId domain;
    std::int64_t timestamp = 0;

    bool operator==(const SharedEntry&) const = default;
};

struct GroupSharedMemory {
    size_t capacity = 20;
    std::deque<SharedEntry> entries;

    // FIFO: append, evict oldest beyond capacity.
    void push(const SharedEntry& e) {
        entries.push_back(e);
        while (entries.size() > capacity) entries.pop_front();
    }
};

struct InterestGroup {
    std::string id;
    std::string name;
    std::set<std::string> member_users;
    GroupSharedMemory shared;
};

struct SharedView {
    std::string group_name;
    std::string text;

    bool operator==(const SharedView&) const = default;
};

struct DecisionContext {
    std::string separated;
    std::string fused;
    std::vector<SharedView> shared_views;

    bool operator==(const DecisionContext&) const = default;

    // Rendering used in prompt slots: one block per group the user belongs to.
    std::string shared_text() const {
        std::string out;
        for (const auto& view : shared_views) {
            if (!out.empty()) out += '\n';
            out += "[" + view.group_name + "]\n";
            out += view.text.empty() ? "(no recent activity)" : view.text;
        }
        return out;
    }
};

struct MemoryOptions {
    size_t group_capacity = 20;
    size_t shared_view_size = 10;
    bool include_own_entries = true;   // whether a user's own broadcasts show up in their views
    size_t summary_category_chars = 100;
};

class MemoryStore {
public:
    MemoryStore() = default;
    MemoryStore(std::vector<DomainId> domains, MemoryOptions options)
        : domains_(std::move(domains)), options_(options) {
        for (const auto& d : domains_) domain_set_.insert(d);
    }

    const std::vector<DomainId>& domains() const { return domains_; }
    const MemoryOptions& options() const { return options_; }
    bool has_domain(const DomainId& d) const { return domain_set_.count(d) > 0; }

    // ---- agents -----------------------------------------------------------

    UserAgent& add_user(const std::string& id) {
        UserAgent u;
        u.id = id;
        for (const auto& d : domains_) {
            u.separated[d] = "";
            u.fused[d] = "";
        }
        return users_[id] = std::move(u);
    }

    // Seeds the item memory from side information.
    ItemAgent& add_item(const std::string& id, const DomainId& domain, const std::string& title,
                        const std::string& category) {
        if (trim(title).empty() && trim(category).empty())
            throw AgentError(ErrorCode::InvalidItem, "item " + id + " has empty side information");
        ItemAgent item;
        item.id = id;
        item.domain = domain;
        item.title = title;
        item.category = category;
        item.memory = item.side_info();
        return items_[id] = std::move(item);
    }

    bool has_user(const std::string& id) const { return users_.count(id) > 0; }
    bool has_item(const std::string& id) const { return items_.count(id) > 0; }

    const UserAgent& user(const std::string& id) const {
        auto it = users_.find(id);
        if (it == users_.end()) throw AgentError(ErrorCode::UnknownAgent, "user " + id);
        return it->second;
    }
    const ItemAgent& item(const std::string& id) const {
        auto it = items_.find(id);
        if (it == items_.end()) throw AgentError(ErrorCode::UnknownAgent, "item " + id);
        return it->second;
    }

    const std::map<std::string, UserAgent>& users() const { return users_; }
    const std::map<std::string, ItemAgent>& items() const { return items_; }
    const std::map<std::string, InterestGroup>& groups() const { return groups_; }

    // ---- writes ------------------------------------------------------------

    void write_separated(const std::string& user_id, const DomainId& d, const std::string& text) {
        check_domain(d);
        mutable_user(user_id).separated[d] = text;
    }

    void write_fused(const std::string& user_id, const DomainId& d, const std::string& text) {
        check_domain(d);
        mutable_user(user_id).fused[d] = text;
    }

    void write_item_memory(const std::string& item_id, const std::string& text) {
        auto it = items_.find(item_id);
        if (it == items_.end()) throw AgentError(ErrorCode::UnknownAgent, "item " + item_id);
        it->second.memory = text;
    }

    void push_shared(const std::string& group_id, const SharedEntry& e) {
        auto it = groups_.find(group_id);
        if (it == groups_.end()) throw AgentError(ErrorCode::UnknownAgent, "group " + group_id);
        it->second.shared.push(e);
    }

    // Pushes the entry into every group the user belongs to; returns the
    // group ids written, in deterministic (sorted) order.
    std::vector<std::string> broadcast(const std::string& user_id, const SharedEntry& e) {
        std::vector<std::string> written;
        for (const auto& gid : user(user_id).groups) {
            push_shared(gid, e);
            written.push_back(gid);
        }
        return written;
    }

    std::string summarize_item(const ItemAgent& item) const {
        std::string out = item.title;
        if (!item.category.empty())
            out += " | " + item.category.substr(0, options_.summary_category_chars);
        return out;
    }

    // ---- reads -------------------------------------------------------------

    DecisionContext decision_context(const std::string& user_id, const DomainId& d) const {
        return decision_context(user_id, d, options_.shared_view_size);
    }

    DecisionContext decision_context(const std::string& user_id, const DomainId& d, size_t view_size) const {
        check_domain(d);
        const UserAgent& u = user(user_id);
        DecisionContext ctx;
        ctx.separated = u.separated.at(d);
        ctx.fused = u.fused.at(d);
        for (const auto& gid : u.groups) {
            auto git = groups_.find(gid);
            if (git == groups_.end()) continue;
            const InterestGroup& g = git->second;
            std::vector<const SharedEntry*> visible;
            for (const auto& e : g.shared.entries) {
                if (!options_.include_own_entries && e.user == user_id) continue;
                visible.push_back(&e);
            }
            // most recent first
            std::string text;
            size_t take = std::min(view_size, visible.size());
            for (size_t i = 0; i < take; ++i) {
                const SharedEntry& e = *visible[visible.size() - 1 - i];
                if (!text.empty()) text += '\n';
                text += "- " + e.item_summary + " [" + e.domain + "] by user " + e.user;
            }
            ctx.shared_views.push_back(SharedView{g.name, text});
        }
        return ctx;
    }

    // ---- group table maintenance (used by segmentation) --------------------

    void replace_groups(std::map<std::string, InterestGroup> new_groups) {
        groups_ = std::move(new_groups);
        for (auto& [uid, u] : users_) {
            u.groups.clear();
            for (const auto& [gid, g] : groups_) {
                if (g.member_users.count(uid)) u.groups.insert(gid);
            }
        }
    }

    // ---- snapshot / restore -------------------------------------------------

    static constexpr const char* kSnapshotHeader = "agentsim-snapshot v1";

    std::string snapshot(std::int64_t processed = 0, std::int64_t segment_epoch = 0) const {
        std::ostringstream out;
        out << kSnapshotHeader << '\n';
        nlohmann::json meta;
        meta["domains"] = domains_;
        meta["options"] = {{"group_capacity", options_.group_capacity},
                           {"shared_view_size", options_.shared_view_size},
                           {"include_own_entries", options_.include_own_entries},
                           {"summary_category_chars", options_.summary_category_chars}};
        meta["processed"] = processed;
        meta["segment_epoch"] = segment_epoch;
        out << "meta\t" << meta.dump() << '\n';
        std::int64_t records = 0;
        for (const auto& [id, item] : items_) {
            nlohmann::json j{{"id", item.id},
                             {"domain", item.domain},
                             {"title", item.title},
                             {"category", item.category},
                             {"memory", item.memory}};
            out << "item\t" << j.dump() << '\n';
            ++records;
        }
        for (const auto& [id, u] : users_) {
            nlohmann::json j{{"id", u.id},
                             {"separated", u.separated},
                             {"fused", u.fused},
                             {"groups", std::vector<std::string>(u.groups.begin(), u.groups.end())}};
            out << "user\t" << j.dump() << '\n';
            ++records;
        }
        for (const auto& [id, g] : groups_) {
            nlohmann::json entries = nlohmann::json::array();
            for (const auto& e : g.shared.entries) {
                entries.push_back({{"user", e.user},
                                   {"item_summary", e.item_summary},
                                   {"domain", e.domain},
                                   {"timestamp", e.timestamp}});
            }
            nlohmann::json j{{"id", g.id},
                             {"name", g.name},
                             {"capacity", g.shared.capacity},
                             {"members", std::vector<std::string>(g.member_users.begin(),
                                                                  g.member_users.end())},
                             {"entries", entries}};
            out << "group\t" << j.dump() << '\n';
            ++records;
        }
        out << "end\t" << nlohmann::json{{"records", records}}.dump() << '\n';
        return out.str();
    }

private:
    friend struct SnapshotRestore;

    UserAgent& mutable_user(const std::string& id) {
        auto it = users_.find(id);
        if (it == users_.end()) throw AgentError(ErrorCode::UnknownAgent, "user " + id);
        return it->second;
    }

    void check_domain(const DomainId& d) const {
        if (!has_domain(d)) throw AgentError(ErrorCode::UnknownDomain, d);
    }

    std::vector<DomainId> domains_;
    std::set<DomainId> domain_set_;
    MemoryOptions options_;
    std::map<std::string, UserAgent> users_;
    std::map<std::string, ItemAgent> items_;
    std::map<std::string, InterestGroup> groups_;
};

struct SnapshotRestore {
    MemoryStore store;
    std::int64_t processed = 0;
    std::int64_t segment_epoch = 0;

    // Parses a snapshot blob. Truncated input, unknown record tags, bad
    // payloads, and dangling group references are all snapshot errors.
    static SnapshotRestore parse(const std::string& blob) {
        std::istringstream in(blob);
        std::string line;
        if (!std::getline(in, line) || trim(line) != MemoryStore::kSnapshotHeader)
            throw AgentError(ErrorCode::SnapshotError, "bad or missing snapshot header");
        SnapshotRestore result;
        MemoryStore& store = result.store;
        bool have_meta = false, have_end = false;
        std::int64_t records = 0, declared = -1;
        while (std::getline(in, line)) {
            if (trim(line).empty()) continue;
            auto tab = line.find('\t');
            if (tab == std::string::npos)
                throw AgentError(ErrorCode::SnapshotError, "malformed snapshot record");
            const std::string tag = line.substr(0, tab);
            nlohmann::json j = nlohmann::json::parse(line.substr(tab + 1), nullptr, false);
            if (j.is_discarded())
                throw AgentError(ErrorCode::SnapshotError, "unparseable snapshot payload");
            try {
                if (tag == "meta") {
                    store.domains_ = j.at("domains").get<std::vector<std::string>>();
                    for (const auto& d : store.domains_) store.domain_set_.insert(d);
                    const auto& o = j.at("options");
                    store.options_.group_capacity = o.at("group_capacity").get<size_t>();
                    store.options_.shared_view_size = o.at("shared_view_size").get<size_t>();
                    store.options_.include_own_entries = o.at("include_own_entries").get<bool>();
                    store.options_.summary_category_chars =
                        o.at("summary_category_chars").get<size_t>();
                    result.processed = j.at("processed").get<std::int64_t>();
                    result.segment_epoch = j.at("segment_epoch").get<std::int64_t>();
                    have_meta = true;
                } else if (tag == "item") {
                    ItemAgent item;
                    item.id = j.at("id").get<std::string>();
                    item.domain = j.at("domain").get<std::string>();
                    item.title = j.at("title").get<std::string>();
                    item.category = j.at("category").get<std::string>();
                    item.memory = j.at("memory").get<std::string>();
                    store.items_[item.id] = std::move(item);
                    ++records;
                } else if (tag == "user") {
                    UserAgent u;
                    u.id = j.at("id").get<std::string>();
                    u.separated = j.at("separated").get<std::map<std::string, std::string>>();
                    u.fused = j.at("fused").get<std::map<std::string, std::string>>();
                    for (const auto& g : j.at("groups")) u.groups.insert(g.get<std::string>());
                    store.users_[u.id] = std::move(u);
                    ++records;
                } else if (tag == "group") {
                    InterestGroup g;
                    g.id = j.at("id").get<std::string>();
                    g.name = j.at("name").get<std::string>();
                    g.shared.capacity = j.at("capacity").get<size_t>();
                    for (const auto& m : j.at("members")) g.member_users.insert(m.get<std::string>());
                    for (const auto& e : j.at("entries")) {
                        SharedEntry entry;
                        entry.user = e.at("user").get<std::string>();
                        entry.item_summary = e.at("item_summary").get<std::string>();
                        entry.domain = e.at("domain").get<std::string>();
                        entry.timestamp = e.at("timestamp").get<std::int64_t>();
                        g.shared.entries.push_back(std::move(entry));
                    }
                    store.groups_[g.id] = std::move(g);
                    ++records;
                } else if (tag == "end") {
                    declared = j.at("records").get<std::int64_t>();
                    have_end = true;
                } else {
                    throw AgentError(ErrorCode::SnapshotError,
                                     "unknown snapshot record '" + tag + "'");
                }
            } catch (const nlohmann::json::exception& e) {
                throw AgentError(ErrorCode::SnapshotError,
                                 std::string("snapshot field error: ") + e.what());
            }
        }
        if (!have_meta || !have_end || records != declared)
            throw AgentError(ErrorCode::SnapshotError, "snapshot truncated or record count mismatch");
        for (const auto& [uid, u] : store.users_) {
            for (const auto& gid : u.groups) {
                if (!store.groups_.count(gid))
                    throw AgentError(ErrorCode::SnapshotError,
                                     "user " + uid + " references unknown group " + gid);
            }
        }
        return result;
    }
};

}  // namespace agentsim
