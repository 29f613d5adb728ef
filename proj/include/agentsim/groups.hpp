#pragma once

// Interest group construction: extract short interest tags per user through
// the backend, embed and cluster them (seeded k-means over L2-normalized
// vectors), name each cluster, and give every user their largest few groups.
// Rebuilt periodically; old shared memories are discarded on rebuild.

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "agentsim/backend.hpp"
#include "agentsim/kmeans.hpp"
#include "agentsim/memory.hpp"

namespace agentsim {

struct InterestTag {
    std::string owner;
    std::string text;
    Embedding vector;
};

struct GroupingConfig {
    int max_tags = 8;            // T: tags kept per user
    int max_groups_per_user = 3; // G: groups retained per user
    size_t k = 0;                // cluster count; 0 = max(2, floor(sqrt(#tags)))
    KmeansOptions kmeans;
    std::int64_t resegment_every = 0;  // interactions between rebuilds; 0 = once per pass
};

// Splits a completion into tag texts: entries separated by ';' or newlines,
// trimmed, at most five words each, case-insensitive deduplication, first T
// kept.
inline std::vector<std::string> parse_tags(const std::string& completion, int max_tags) {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& raw : split_any(completion, ";\n")) {
        std::string tag = trim(raw);
        if (!tag.empty() && tag.back() == '.') tag = trim(tag.substr(0, tag.size() - 1));
        if (tag.empty()) continue;
        if (word_count(tag) > 5) continue;
        if (!seen.insert(to_lower(tag)).second) continue;
        out.push_back(tag);
        if (static_cast<int>(out.size()) >= max_tags) break;
    }
    return out;
}

// One completion over the user's memory text; empty memories yield an empty
// list without a backend call. A completion that parses to zero tags is
// retried once, then reported as tag-extraction-failed.
inline std::vector<std::string> extract_tags(TextBackend& backend, const std::string& user_id,
                                             const std::string& memories, int max_tags,
                                             std::uint64_t seed) {
    if (trim(memories).empty()) return {};
    PromptRequest req;
    req.kind = PromptKind::ExtractTags;
    req.template_id = "extract-tags";
    req.slots = {{"memories", memories}};
    req.seed = seed;
    for (int attempt = 0; attempt < 2; ++attempt) {
        req.seed = seed + static_cast<std::uint64_t>(attempt) * 1000003ULL;
        std::string text;
        try {
            text = backend.complete(req).text;
        } catch (const AgentError& e) {
            if (e.code() == ErrorCode::MalformedResponse) continue;
            throw;
        }
        auto tags = parse_tags(text, max_tags);
        if (!tags.empty()) return tags;
    }
    throw AgentError(ErrorCode::TagExtractionFailed, "user " + user_id);
}

// Synthesizes a single-line group name from the cluster's tags; an empty
// completion falls back to the most frequent tag text.
inline std::string name_cluster(TextBackend& backend, const std::vector<std::string>& tag_texts,
                                std::uint64_t seed) {
    std::string fallback;
    {
        std::map<std::string, int> counts;
        for (const auto& t : tag_texts) ++counts[t];
        int best = 0;
        for (const auto& [text, n] : counts) {
            if (n > best) {
                best = n;
                fallback = text;
            }
        }
    }
    PromptRequest req;
    req.kind = PromptKind::NameGroup;
    req.template_id = "name-group";
    req.slots = {{"tags", join(tag_texts, "; ")}};
    req.seed = seed;
    std::string text;
    try {
        text = backend.complete(req).text;
    } catch (const AgentError& e) {
        if (e.code() == ErrorCode::MalformedResponse) return fallback;
        throw;
    }
    std::string line = trim(split(text, '\n').front());
    return line.empty() ? fallback : line;
}

// Per-user group choice: clusters holding at least one of the user's tags,
// ranked by how many of the user's tags they hold (ties: lower cluster index
// first), top G retained.
inline std::vector<size_t> assign_groups(const std::vector<size_t>& tag_clusters, int max_groups) {
    std::map<size_t, int> counts;
    for (size_t c : tag_clusters) ++counts[c];
    std::vector<std::pair<size_t, int>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::vector<size_t> out;
    for (const auto& [cluster, n] : ranked) {
        if (static_cast<int>(out.size()) >= max_groups) break;
        out.push_back(cluster);
    }
    return out;
}

struct SegmentationOutcome {
    std::int64_t epoch = 0;
    std::map<std::string, InterestGroup> groups;
    std::map<std::string, std::vector<std::string>> user_tags;
    std::map<std::string, std::vector<std::string>> group_top_tags;
    std::vector<std::string> carried_over_users;  // kept previous groups after extraction failure
    size_t cluster_count = 0;
};

namespace detail {

inline std::vector<std::string> top_tags(const std::vector<std::string>& texts, size_t limit = 5) {
    std::map<std::string, int> counts;
    for (const auto& t : texts) ++counts[t];
    std::vector<std::pair<std::string, int>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::vector<std::string> out;
    for (const auto& [text, n] : ranked) {
        if (out.size() >= limit) break;
        out.push_back(text);
    }
    return out;
}

inline std::string group_id(std::int64_t epoch, size_t cluster) {
    return "e" + std::to_string(epoch) + "-c" + std::to_string(cluster);
}

}  // namespace detail

// Full interest segmentation pass. tag_source maps a user to the memory text
// tags are extracted from (the fused layers, or the single memory under the
// single-layer configuration).
inline SegmentationOutcome segment_by_interest(
    const MemoryStore& store, TextBackend& backend, const GroupingConfig& cfg, std::uint64_t seed,
    std::int64_t epoch, const std::function<std::string(const UserAgent&)>& tag_source) {
    SegmentationOutcome outcome;
    outcome.epoch = epoch;

    std::vector<InterestTag> tags;
    std::map<std::string, Embedding> embed_cache;
    for (const auto& [uid, u] : store.users()) {
        std::string source = tag_source(u);
        std::vector<std::string> texts;
        try {
            texts = extract_tags(backend, uid, source, cfg.max_tags,
                                 derive_seed(seed, "tags", uid, epoch));
        } catch (const AgentError& e) {
            if (e.code() == ErrorCode::TagExtractionFailed) {
                outcome.carried_over_users.push_back(uid);
                continue;
            }
            throw;
        }
        outcome.user_tags[uid] = texts;
        for (const auto& t : texts) tags.push_back(InterestTag{uid, t, {}});
    }
    if (tags.empty()) return outcome;

    int dim = 0;
    for (auto& tag : tags) {
        auto it = embed_cache.find(tag.text);
        if (it == embed_cache.end()) it = embed_cache.emplace(tag.text, backend.embed(tag.text)).first;
        tag.vector = it->second;
        if (dim == 0) dim = static_cast<int>(tag.vector.size());
        if (static_cast<int>(tag.vector.size()) != dim || l2_norm(tag.vector) <= 0)
            throw AgentError(ErrorCode::MalformedResponse,
                             "embedding dimension drift or zero norm for tag '" + tag.text + "'");
    }

    std::vector<Point> points;
    points.reserve(tags.size());
    for (const auto& tag : tags) points.push_back(l2_normalized(tag.vector));

    size_t k = cfg.k > 0 ? cfg.k
                         : std::max<size_t>(2, static_cast<size_t>(std::floor(
                                                   std::sqrt(static_cast<double>(tags.size())))));
    size_t distinct = detail::count_distinct(points);
    if (cfg.k == 0) k = std::min(k, distinct);
    auto clustering = kmeans(points, k, derive_seed(seed, "kmeans", epoch), cfg.kmeans);
    outcome.cluster_count = k;

    std::vector<std::string> cluster_names(k);
    std::vector<std::vector<std::string>> cluster_texts(k);
    for (size_t c = 0; c < k; ++c) {
        for (size_t i : clustering.members[c]) cluster_texts[c].push_back(tags[i].text);
        if (!cluster_texts[c].empty())
            cluster_names[c] = name_cluster(backend, cluster_texts[c],
                                            derive_seed(seed, "name", static_cast<std::int64_t>(c), epoch));
    }

    // owner tag index -> cluster, then per-user retention of the top G
    std::map<std::string, std::vector<size_t>> user_tag_clusters;
    for (size_t i = 0; i < tags.size(); ++i)
        user_tag_clusters[tags[i].owner].push_back(clustering.assignment[i]);

    std::map<size_t, std::set<std::string>> cluster_members;
    for (const auto& [uid, clusters] : user_tag_clusters) {
        for (size_t c : assign_groups(clusters, cfg.max_groups_per_user))
            cluster_members[c].insert(uid);
    }

    for (const auto& [c, members] : cluster_members) {
        if (members.empty()) continue;
        InterestGroup g;
        g.id = detail::group_id(epoch, c);
        g.name = cluster_names[c];
        g.member_users = members;
        g.shared.capacity = store.options().group_capacity;
        outcome.group_top_tags[g.id] = detail::top_tags(cluster_texts[c]);
        outcome.groups[g.id] = std::move(g);
    }
    return outcome;
}

// Ablation variant: one embedding per user over their full interaction
// history text; every user lands in exactly one cluster-group. Groups get a
// plain positional label; no naming call is spent on them.
inline SegmentationOutcome segment_by_history(const MemoryStore& store, TextBackend& backend,
                                              const GroupingConfig& cfg, std::uint64_t seed,
                                              std::int64_t epoch,
                                              const std::map<std::string, std::string>& histories) {
    SegmentationOutcome outcome;
    outcome.epoch = epoch;
    std::vector<std::string> uids;
    std::vector<Point> points;
    for (const auto& [uid, u] : store.users()) {
        auto it = histories.find(uid);
        if (it == histories.end() || trim(it->second).empty()) continue;
        uids.push_back(uid);
        points.push_back(l2_normalized(backend.embed(it->second)));
    }
    if (uids.empty()) return outcome;

    size_t k = cfg.k > 0 ? cfg.k
                         : std::max<size_t>(2, static_cast<size_t>(std::floor(
                                                   std::sqrt(static_cast<double>(uids.size())))));
    size_t distinct = detail::count_distinct(points);
    if (cfg.k == 0) k = std::min(k, distinct);
    auto clustering = kmeans(points, k, derive_seed(seed, "kmeans-history", epoch), cfg.kmeans);
    outcome.cluster_count = k;

    std::map<size_t, std::set<std::string>> cluster_members;
    for (size_t i = 0; i < uids.size(); ++i) cluster_members[clustering.assignment[i]].insert(uids[i]);
    for (const auto& [c, members] : cluster_members) {
        if (members.empty()) continue;
        InterestGroup g;
        g.id = detail::group_id(epoch, c);
        g.name = "history-group-" + std::to_string(c);
        g.member_users = members;
        g.shared.capacity = store.options().group_capacity;
        outcome.groups[g.id] = std::move(g);
    }
    return outcome;
}

// Installs a new segmentation. Users whose tag extraction failed keep their
// previous groups: those group objects are carried into the new table with
// their shared entries intact, membership narrowed to the carried users.
inline void apply_segmentation(MemoryStore& store, const SegmentationOutcome& outcome) {
    std::map<std::string, InterestGroup> table = outcome.groups;
    std::set<std::string> carried(outcome.carried_over_users.begin(),
                                  outcome.carried_over_users.end());
    for (const auto& uid : carried) {
        for (const auto& gid : store.user(uid).groups) {
            auto it = table.find(gid);
            if (it == table.end()) {
                InterestGroup kept = store.groups().at(gid);
                kept.member_users.clear();
                it = table.emplace(gid, std::move(kept)).first;
            }
            it->second.member_users.insert(uid);
        }
    }
    store.replace_groups(std::move(table));
}

inline void write_segmentation_report(const std::string& path, const SegmentationOutcome& outcome) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw AgentError(ErrorCode::IoError, "cannot write segmentation report: " + path);
    for (const auto& [gid, g] : outcome.groups) {
        std::string tags;
        auto it = outcome.group_top_tags.find(gid);
        if (it != outcome.group_top_tags.end()) tags = join(it->second, "|");
        out << gid << '\t' << g.name << '\t' << g.member_users.size() << '\t' << tags << '\n';
    }
}

}  // namespace agentsim
