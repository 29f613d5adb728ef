#pragma once

// Review ingestion and dataset construction: tolerant parsing of
// newline-delimited key=value records, the rating/window/domain/user filter
// pipeline, seeded user sampling, and the chronological 8:1:1 split. A
// prepared dataset is a bundle directory: one interactions file per split,
// an item catalog, and a spec manifest.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "agentsim/common.hpp"
#include "agentsim/digest.hpp"
#include "agentsim/rng.hpp"

namespace agentsim {

struct RawReview {
    std::string user_id;
    std::string item_id;
    std::string domain;
    double rating = 0;
    std::int64_t timestamp = 0;
    std::string title;
    std::string category;
};

struct Interaction {
    std::string user;
    std::string item;
    std::string domain;
    std::int64_t timestamp = 0;
    double rating = 0;

    bool operator==(const Interaction&) const = default;
};

struct ItemInfo {
    std::string item_id;
    std::string domain;
    std::string title;
    std::string category;
};

struct DatasetSpec {
    std::string name;
    std::vector<std::string> domains;
    std::int64_t window_start = 0;  // inclusive
    std::int64_t window_end = 0;    // exclusive
    double min_rating = 4.0;
    int min_interactions = 10;
    int user_sample_size = 100;
    std::vector<double> split_ratio = {0.8, 0.1, 0.1};
    std::uint64_t seed = 1;
    bool per_user_split = false;  // default is a global chronological split

    void validate() const {
        if (domains.size() < 3 || domains.size() > 4)
            throw AgentError(ErrorCode::ConfigError, "dataset spec needs 3 or 4 domains");
        if (window_end <= window_start)
            throw AgentError(ErrorCode::ConfigError, "dataset window is empty");
        if (split_ratio.size() != 3)
            throw AgentError(ErrorCode::ConfigError, "split ratio needs 3 entries");
        double sum = split_ratio[0] + split_ratio[1] + split_ratio[2];
        if (std::abs(sum - 1.0) > 1e-9)
            throw AgentError(ErrorCode::ConfigError, "split ratios must sum to 1");
        if (user_sample_size <= 0)
            throw AgentError(ErrorCode::ConfigError, "user sample size must be positive");
    }

    static DatasetSpec from_json(const nlohmann::json& j) {
        DatasetSpec s;
        try {
            s.name = j.at("name").get<std::string>();
            s.domains = j.at("domains").get<std::vector<std::string>>();
            s.window_start = j.at("window_start").get<std::int64_t>();
            s.window_end = j.at("window_end").get<std::int64_t>();
            s.min_rating = j.value("min_rating", 4.0);
            s.min_interactions = j.value("min_interactions", 10);
            s.user_sample_size = j.value("user_sample_size", 100);
            if (j.contains("split_ratio")) s.split_ratio = j["split_ratio"].get<std::vector<double>>();
            s.seed = j.value("seed", 1);
            s.per_user_split = j.value("per_user_split", false);
        } catch (const nlohmann::json::exception& e) {
            throw AgentError(ErrorCode::ConfigError, std::string("dataset spec: ") + e.what());
        }
        s.validate();
        return s;
    }

    nlohmann::json to_json() const {
        return {{"name", name},
                {"domains", domains},
                {"window_start", window_start},
                {"window_end", window_end},
                {"min_rating", min_rating},
                {"min_interactions", min_interactions},
                {"user_sample_size", user_sample_size},
                {"split_ratio", split_ratio},
                {"seed", seed},
                {"per_user_split", per_user_split}};
    }

    static DatasetSpec load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw AgentError(ErrorCode::IoError, "cannot open dataset spec: " + path);
        nlohmann::json j = nlohmann::json::parse(f, nullptr, false);
        if (j.is_discarded()) throw AgentError(ErrorCode::ConfigError, "dataset spec is not JSON");
        return from_json(j);
    }
};

// The Cross-1..Cross-5 presets enumerate the 3-or-4 element subsets of
// {Books, CDs, Movies, Games}. The original composition of those datasets is
// not public, so these are a reconstruction, not an authoritative mapping.
inline std::vector<DatasetSpec> cross_presets() {
    const std::vector<std::vector<std::string>> combos = {
        {"Books", "CDs", "Movies"},
        {"Books", "CDs", "Games"},
        {"Books", "Movies", "Games"},
        {"CDs", "Movies", "Games"},
        {"Books", "CDs", "Movies", "Games"},
    };
    std::vector<DatasetSpec> out;
    for (size_t i = 0; i < combos.size(); ++i) {
        DatasetSpec s;
        s.name = "cross-" + std::to_string(i + 1);
        s.domains = combos[i];
        s.window_start = 1633046400;  // 2021-10-01T00:00:00Z
        s.window_end = 1648771200;    // 2022-04-01T00:00:00Z
        out.push_back(std::move(s));
    }
    return out;
}

// ---- key=value line format -------------------------------------------------

inline std::map<std::string, std::string> parse_kv_line(const std::string& line) {
    std::map<std::string, std::string> out;
    for (const auto& field : split(line, '\t')) {
        auto eq = field.find('=');
        if (eq == std::string::npos) continue;
        out[field.substr(0, eq)] = field.substr(eq + 1);
    }
    return out;
}

inline std::string sanitize_kv_value(std::string v) {
    for (char& c : v) {
        if (c == '\t' || c == '\n' || c == '\r') c = ' ';
    }
    return v;
}

struct IngestResult {
    std::vector<RawReview> reviews;
    size_t skipped = 0;
};

inline IngestResult ingest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw AgentError(ErrorCode::IoError, "cannot open review file: " + path);
    IngestResult result;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        auto kv = parse_kv_line(line);
        RawReview r;
        r.user_id = trim(kv.count("user_id") ? kv["user_id"] : "");
        r.item_id = trim(kv.count("item_id") ? kv["item_id"] : "");
        r.domain = trim(kv.count("domain") ? kv["domain"] : "");
        r.title = trim(kv.count("title") ? kv["title"] : "");
        r.category = trim(kv.count("category") ? kv["category"] : "");
        bool ok = !r.user_id.empty() && !r.item_id.empty() && !r.domain.empty() && !r.title.empty() &&
                  kv.count("rating") && parse_double(kv["rating"], r.rating) &&
                  kv.count("timestamp") && parse_int64(kv["timestamp"], r.timestamp) &&
                  r.rating >= 1.0 && r.rating <= 5.0;
        if (!ok) {
            ++result.skipped;
            continue;
        }
        result.reviews.push_back(std::move(r));
    }
    return result;
}

// ---- filter pipeline ---------------------------------------------------------

struct FilterResult {
    std::vector<Interaction> interactions;  // input order preserved
    std::vector<ItemInfo> catalog;          // every item passing the record-level filters
    size_t eligible_users = 0;
    std::vector<std::string> sampled_users;
};

// Record-level filters (rating, window, domain) feed user-level rules
// (multi-domain, minimum interactions), then a seeded uniform sample of
// user_sample_size users. Fewer eligible users than the sample size is an
// error, not a silent shortfall.
inline FilterResult filter_pipeline(const std::vector<RawReview>& reviews, const DatasetSpec& spec) {
    spec.validate();
    std::set<std::string> domain_set(spec.domains.begin(), spec.domains.end());

    std::vector<const RawReview*> surviving;
    std::map<std::string, ItemInfo> catalog;
    for (const auto& r : reviews) {
        if (r.rating < spec.min_rating) continue;
        if (r.timestamp < spec.window_start || r.timestamp >= spec.window_end) continue;
        if (!domain_set.count(r.domain)) continue;
        surviving.push_back(&r);
        if (!catalog.count(r.item_id))
            catalog[r.item_id] = ItemInfo{r.item_id, r.domain, r.title, r.category};
    }

    std::map<std::string, std::set<std::string>> user_domains;
    std::map<std::string, int> user_counts;
    for (const auto* r : surviving) {
        user_domains[r->user_id].insert(r->domain);
        ++user_counts[r->user_id];
    }

    std::vector<std::string> eligible;
    for (const auto& [uid, domains] : user_domains) {
        if (domains.size() >= 2 && user_counts[uid] >= spec.min_interactions) eligible.push_back(uid);
    }

    FilterResult result;
    result.eligible_users = eligible.size();
    if (eligible.size() < static_cast<size_t>(spec.user_sample_size))
        throw AgentError(ErrorCode::DatasetTooSmall,
                         "eligible users " + std::to_string(eligible.size()) + " < sample size " +
                             std::to_string(spec.user_sample_size));

    Rng rng(derive_seed(spec.seed, "user-sample"));
    std::set<std::string> sampled;
    for (size_t idx : rng.sample_indices(eligible.size(), static_cast<size_t>(spec.user_sample_size)))
        sampled.insert(eligible[idx]);
    result.sampled_users.assign(sampled.begin(), sampled.end());

    for (const auto* r : surviving) {
        if (!sampled.count(r->user_id)) continue;
        result.interactions.push_back(
            Interaction{r->user_id, r->item_id, r->domain, r->timestamp, r->rating});
    }
    for (const auto& [id, info] : catalog) result.catalog.push_back(info);
    return result;
}

// ---- chronological split ------------------------------------------------------

struct SplitResult {
    std::vector<Interaction> train, valid, test;
    bool degenerate = false;  // fewer than 10 interactions
};

namespace detail {

inline SplitResult split_sorted(std::vector<Interaction> sorted, const std::vector<double>& ratio) {
    SplitResult out;
    size_t n = sorted.size();
    auto n_train = static_cast<size_t>(std::llround(ratio[0] * static_cast<double>(n)));
    auto n_valid = static_cast<size_t>(std::llround(ratio[1] * static_cast<double>(n)));
    n_train = std::min(n_train, n);
    n_valid = std::min(n_valid, n - n_train);
    out.train.assign(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.valid.assign(sorted.begin() + static_cast<std::ptrdiff_t>(n_train),
                     sorted.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid));
    out.test.assign(sorted.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid), sorted.end());
    return out;
}

}  // namespace detail

// Global chronological sort (stable on ties), then contiguous
// round(r0*n)/round(r1*n)/remainder slices. The per-user variant applies the
// same rule within each user's records.
inline SplitResult split(const std::vector<Interaction>& interactions,
                         const std::vector<double>& ratio = {0.8, 0.1, 0.1},
                         bool per_user = false) {
    if (interactions.empty())
        throw AgentError(ErrorCode::InvalidArgument, "split: no interactions");
    SplitResult out;
    out.degenerate = interactions.size() < 10;
    if (!per_user) {
        std::vector<Interaction> sorted = interactions;
        std::stable_sort(sorted.begin(), sorted.end(),
                         [](const Interaction& a, const Interaction& b) { return a.timestamp < b.timestamp; });
        auto r = detail::split_sorted(std::move(sorted), ratio);
        out.train = std::move(r.train);
        out.valid = std::move(r.valid);
        out.test = std::move(r.test);
    } else {
        std::map<std::string, std::vector<Interaction>> by_user;
        for (const auto& i : interactions) by_user[i.user].push_back(i);
        for (auto& [uid, list] : by_user) {
            std::stable_sort(list.begin(), list.end(),
                             [](const Interaction& a, const Interaction& b) { return a.timestamp < b.timestamp; });
            auto r = detail::split_sorted(std::move(list), ratio);
            out.train.insert(out.train.end(), r.train.begin(), r.train.end());
            out.valid.insert(out.valid.end(), r.valid.begin(), r.valid.end());
            out.test.insert(out.test.end(), r.test.begin(), r.test.end());
        }
        auto by_time = [](const Interaction& a, const Interaction& b) { return a.timestamp < b.timestamp; };
        std::stable_sort(out.train.begin(), out.train.end(), by_time);
        std::stable_sort(out.valid.begin(), out.valid.end(), by_time);
        std::stable_sort(out.test.begin(), out.test.end(), by_time);
    }
    return out;
}

// ---- bundle I/O -----------------------------------------------------------------

struct DatasetBundle {
    DatasetSpec spec;
    std::vector<Interaction> train, valid, test;
    std::vector<ItemInfo> catalog;

    std::vector<std::string> all_users() const {
        std::set<std::string> users;
        for (const auto* part : {&train, &valid, &test})
            for (const auto& i : *part) users.insert(i.user);
        return {users.begin(), users.end()};
    }

    // items each user interacted with anywhere in the bundle
    std::map<std::string, std::set<std::string>> interacted() const {
        std::map<std::string, std::set<std::string>> out;
        for (const auto* part : {&train, &valid, &test})
            for (const auto& i : *part) out[i.user].insert(i.item);
        return out;
    }
};

namespace detail {

inline std::string interactions_to_kv(const std::vector<Interaction>& list) {
    std::ostringstream out;
    for (const auto& i : list) {
        out << "user_id=" << sanitize_kv_value(i.user) << "\titem_id=" << sanitize_kv_value(i.item)
            << "\tdomain=" << sanitize_kv_value(i.domain) << "\trating=" << format_double(i.rating)
            << "\ttimestamp=" << i.timestamp << '\n';
    }
    return out.str();
}

inline std::vector<Interaction> interactions_from_kv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw AgentError(ErrorCode::IoError, "cannot open split file: " + path);
    std::vector<Interaction> out;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        auto kv = parse_kv_line(line);
        Interaction i;
        i.user = kv["user_id"];
        i.item = kv["item_id"];
        i.domain = kv["domain"];
        if (!parse_double(kv["rating"], i.rating) || !parse_int64(kv["timestamp"], i.timestamp) ||
            i.user.empty() || i.item.empty() || i.domain.empty())
            throw AgentError(ErrorCode::IoError, "corrupt interaction record in " + path);
        out.push_back(std::move(i));
    }
    return out;
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw AgentError(ErrorCode::IoError, "cannot write " + path.string());
    out << content;
}

}  // namespace detail

inline void save_bundle(const DatasetBundle& bundle, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    detail::write_file(fs::path(dir) / "train.kv", detail::interactions_to_kv(bundle.train));
    detail::write_file(fs::path(dir) / "valid.kv", detail::interactions_to_kv(bundle.valid));
    detail::write_file(fs::path(dir) / "test.kv", detail::interactions_to_kv(bundle.test));
    std::ostringstream items;
    for (const auto& item : bundle.catalog) {
        items << "item_id=" << sanitize_kv_value(item.item_id)
              << "\tdomain=" << sanitize_kv_value(item.domain)
              << "\ttitle=" << sanitize_kv_value(item.title)
              << "\tcategory=" << sanitize_kv_value(item.category) << '\n';
    }
    detail::write_file(fs::path(dir) / "items.kv", items.str());
    nlohmann::json manifest;
    manifest["spec"] = bundle.spec.to_json();
    manifest["counts"] = {{"train", bundle.train.size()},
                          {"valid", bundle.valid.size()},
                          {"test", bundle.test.size()},
                          {"items", bundle.catalog.size()}};
    detail::write_file(fs::path(dir) / "spec.json", manifest.dump(2) + "\n");
}

inline DatasetBundle load_bundle(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream spec_in(fs::path(dir) / "spec.json", std::ios::binary);
    if (!spec_in) throw AgentError(ErrorCode::IoError, "not a dataset bundle (missing spec.json): " + dir);
    nlohmann::json manifest = nlohmann::json::parse(spec_in, nullptr, false);
    if (manifest.is_discarded() || !manifest.contains("spec"))
        throw AgentError(ErrorCode::IoError, "corrupt bundle manifest in " + dir);
    DatasetBundle bundle;
    bundle.spec = DatasetSpec::from_json(manifest["spec"]);
    bundle.train = detail::interactions_from_kv((fs::path(dir) / "train.kv").string());
    bundle.valid = detail::interactions_from_kv((fs::path(dir) / "valid.kv").string());
    bundle.test = detail::interactions_from_kv((fs::path(dir) / "test.kv").string());
    std::ifstream items_in(fs::path(dir) / "items.kv", std::ios::binary);
    if (!items_in) throw AgentError(ErrorCode::IoError, "bundle missing items.kv: " + dir);
    std::string line;
    while (std::getline(items_in, line)) {
        if (trim(line).empty()) continue;
        auto kv = parse_kv_line(line);
        if (kv["item_id"].empty())
            throw AgentError(ErrorCode::IoError, "corrupt item record in " + dir);
        bundle.catalog.push_back(ItemInfo{kv["item_id"], kv["domain"], kv["title"], kv["category"]});
    }
    for (const auto* part : {&bundle.train, &bundle.valid, &bundle.test}) {
        for (const auto& i : *part) {
            if (i.rating < bundle.spec.min_rating)
                throw AgentError(ErrorCode::IoError,
                                 "bundle violates rating filter guarantee: " + i.user + "/" + i.item);
        }
    }
    return bundle;
}

// Digest over the bundle's content files; identifies the dataset in run
// manifests and traces.
inline std::string bundle_digest(const std::string& dir) {
    namespace fs = std::filesystem;
    Sha256 h;
    for (const char* name : {"spec.json", "train.kv", "valid.kv", "test.kv", "items.kv"}) {
        std::ifstream in(fs::path(dir) / name, std::ios::binary);
        if (!in) throw AgentError(ErrorCode::IoError, std::string("bundle missing ") + name);
        std::ostringstream ss;
        ss << in.rdbuf();
        h.update(name);
        h.update("\x1f");
        h.update(ss.str());
        h.update("\x1e");
    }
    return to_hex(h.finish());
}

}  // namespace agentsim
