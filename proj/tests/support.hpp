#pragma once

// Shared test fixtures: temp directories, scripted rule sets, and small
// dataset bundles.

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <json.hpp>

#include "agentsim/backend.hpp"
#include "agentsim/dataset.hpp"
#include "agentsim/templates.hpp"

namespace testsupport {

inline std::string data_dir() { return AGENTSIM_DATA_DIR; }

inline agentsim::TemplateSet default_templates() {
    return agentsim::TemplateSet::load(data_dir() + "/templates/default.tpl");
}

class TempDir {
public:
    TempDir() {
        namespace fs = std::filesystem;
        static std::atomic<unsigned> counter{0};
        std::ostringstream name;
        name << "agentsim-test-" << ::getpid() << "-" << counter++;
        path_ = fs::temp_directory_path() / name.str();
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::filesystem::path path() const { return path_; }
    std::string str() const { return path_.string(); }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

inline void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << content;
}

inline std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Scripted rules that keep a synthetic run moving: the agent always picks the
// positive, memories echo through the reflection chain, tags are fixed.
inline nlohmann::json generic_rules() {
    return nlohmann::json{
        {"dimension", 4},
        {"rules",
         nlohmann::json::array({
             {{"kind", "choose-positive"}, {"text", "B"}},
             {{"kind", "update-user-memory"}, {"echo_slot", "positive"}},
             {{"kind", "extract-relevant-preferences"}, {"echo_slot", "source_memory"}},
             {{"kind", "fuse-preferences"}, {"echo_slot", "separated"}},
             {{"kind", "update-item-memory"}, {"echo_slot", "user_memory"}},
             {{"kind", "extract-tags"}, {"text", "alpha; beta"}},
             {{"kind", "name-group"}, {"echo_slot", "tags"}},
             {{"kind", "rank-candidates"}, {"text", "1,2,3,4,5,6,7,8,9,10"}},
             {{"kind", "*"}, {"text", "ok"}},
         })}};
}

inline std::shared_ptr<agentsim::ScriptedBackend> generic_backend() {
    return std::make_shared<agentsim::ScriptedBackend>(generic_rules());
}

// Bundle with two domains, three items each, two users, six training
// interactions; enough to drive every phase of the loop.
inline agentsim::DatasetBundle tiny_bundle() {
    using namespace agentsim;
    DatasetBundle b;
    b.spec.name = "tiny";
    b.spec.domains = {"Books", "Movies", "Games"};
    b.spec.window_start = 0;
    b.spec.window_end = 10'000;
    b.spec.min_rating = 4.0;
    b.spec.user_sample_size = 2;
    for (const std::string& d : b.spec.domains) {
        for (int i = 1; i <= 3; ++i) {
            std::string id = std::string(1, static_cast<char>(std::tolower(d[0]))) + std::to_string(i);
            b.catalog.push_back(ItemInfo{id, d, d + " item " + std::to_string(i), "cat-" + d});
        }
    }
    b.train = {
        {"u1", "b1", "Books", 100, 5.0},  {"u2", "m1", "Movies", 200, 4.5},
        {"u1", "m2", "Movies", 300, 4.0}, {"u2", "b2", "Books", 400, 5.0},
        {"u1", "g1", "Games", 500, 4.5},  {"u2", "g2", "Games", 600, 4.0},
    };
    b.valid = {{"u1", "b3", "Books", 700, 4.0}};
    b.test = {{"u2", "m3", "Movies", 800, 5.0}};
    return b;
}

// Figure-style outdoor scenario: three users buy outdoor items at t1, two of
// them buy rain gear at t2, one buys camping equipment at t3. The first user
// never interacts after t1.
inline agentsim::DatasetBundle outdoor_bundle() {
    agentsim::DatasetBundle b;
    b.spec.name = "outdoor";
    b.spec.domains = {"Outdoor", "Books", "Games"};
    b.spec.window_start = 0;
    b.spec.window_end = 10'000;
    b.spec.user_sample_size = 3;
    b.catalog = {
        {"camp1", "Outdoor", "Camp Stove", "camping equipment"},
        {"hike1", "Outdoor", "Hiking Poles", "outdoor activity"},
        {"rain1", "Outdoor", "Rain Boots", "rain gear"},
        {"rain2", "Outdoor", "Storm Poncho", "rain gear"},
        {"tent1", "Outdoor", "Trail Tent", "outdoor activity"},
        {"tent2", "Outdoor", "Ridge Tent", "outdoor activity"},
    };
    b.train = {
        {"alice", "tent1", "Outdoor", 100, 5.0}, {"alice", "hike1", "Outdoor", 101, 4.5},
        {"bob", "tent1", "Outdoor", 102, 4.5},   {"carl", "tent2", "Outdoor", 103, 5.0},
        {"bob", "rain1", "Outdoor", 200, 5.0},   {"carl", "rain2", "Outdoor", 201, 4.5},
        {"carl", "camp1", "Outdoor", 300, 5.0},
    };
    return b;
}

inline nlohmann::json outdoor_rules() {
    return nlohmann::json{
        {"dimension", 2},
        {"rules",
         nlohmann::json::array({
             {{"kind", "choose-positive"}, {"text", "B"}},
             {{"kind", "update-user-memory"}, {"text", "enjoys outdoor activities and gear"}},
             {{"kind", "fuse-preferences"}, {"echo_slot", "separated"}},
             {{"kind", "update-item-memory"}, {"echo_slot", "user_memory"}},
             {{"kind", "extract-tags"}, {"contains", {{"memories", "outdoor"}}},
              {"text", "outdoor activities; camping"}},
             {{"kind", "name-group"}, {"contains", {{"tags", "outdoor"}}},
              {"text", "Outdoor Enthusiasts"}},
             {{"kind", "name-group"}, {"contains", {{"tags", "camping"}}}, {"text", "Camping Crew"}},
             {{"kind", "embed"}, {"contains", {{"text", "outdoor activities"}}},
              {"embedding", {1.0, 0.0}}},
             {{"kind", "embed"}, {"contains", {{"text", "camping"}}}, {"embedding", {0.0, 1.0}}},
             {{"kind", "*"}, {"text", "ok"}},
         })}};
}

// Raw review file with planted filter edge cases:
//   heavy_single : 12 interactions, one domain only  -> excluded (multi-domain rule)
//   nine_user    : 9 interactions across 2 domains   -> excluded (minimum 10)
//   boundary_low : 10 interactions, one rated 3.9    -> 9 survive, excluded
//   boundary_ok  : 10 interactions, one rated 4.0    -> all survive, included
// plus one record outside the window and one in a foreign domain.
inline std::string edge_case_reviews() {
    std::ostringstream out;
    auto line = [&](const std::string& user, const std::string& item, const std::string& domain,
                    const std::string& rating, long long ts) {
        out << "user_id=" << user << "\titem_id=" << item << "\tdomain=" << domain
            << "\trating=" << rating << "\ttimestamp=" << ts << "\ttitle=Title " << item
            << "\tcategory=cat\n";
    };
    for (int i = 0; i < 12; ++i)
        line("heavy_single", "hs" + std::to_string(i), "Books", "5", 1000 + i);
    for (int i = 0; i < 9; ++i)
        line("nine_user", "nu" + std::to_string(i), i % 2 ? "Books" : "Movies", "4.5", 2000 + i);
    for (int i = 0; i < 9; ++i)
        line("boundary_low", "bl" + std::to_string(i), i % 2 ? "Books" : "Movies", "4", 3000 + i);
    line("boundary_low", "bl9", "Books", "3.9", 3009);
    for (int i = 0; i < 9; ++i)
        line("boundary_ok", "bo" + std::to_string(i), i % 2 ? "Books" : "Movies", "4.5", 4000 + i);
    line("boundary_ok", "bo9", "Books", "4", 4009);
    line("boundary_ok", "late", "Books", "5", 99999);      // outside the window
    line("boundary_ok", "alien", "Gardening", "5", 4010);  // foreign domain
    return out.str();
}

inline agentsim::DatasetSpec edge_case_spec() {
    agentsim::DatasetSpec spec;
    spec.name = "edge";
    spec.domains = {"Books", "Movies", "Games"};
    spec.window_start = 0;
    spec.window_end = 50000;
    spec.min_rating = 4.0;
    spec.min_interactions = 10;
    spec.user_sample_size = 1;
    spec.seed = 5;
    return spec;
}

}  // namespace testsupport
