// Acceptance suite: one test case per release criterion, each printing a
// [PASS]/[FAIL] line through the listener below. Everything runs offline on
// the scripted backend; the live directional check is hidden behind the
// [.live] tag and an environment-provided config.

#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <cstdlib>
#include <functional>
#include <iostream>

#include "agentsim/backend_factory.hpp"
#include "agentsim/config.hpp"
#include "agentsim/dataset.hpp"
#include "agentsim/evaluation.hpp"
#include "agentsim/kmeans.hpp"
#include "agentsim/simulation.hpp"
#include "agentsim/trace.hpp"

#include "support.hpp"

using namespace agentsim;
using testsupport::TempDir;

namespace {

class CriterionListener : public Catch::EventListenerBase {
public:
    using Catch::EventListenerBase::EventListenerBase;
    void testCaseEnded(const Catch::TestCaseStats& stats) override {
        const bool ok = stats.totals.assertions.allPassed();
        std::cout << (ok ? "[PASS] " : "[FAIL] ") << stats.testInfo->name << "\n";
    }
};
CATCH_REGISTER_LISTENER(CriterionListener)

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// Independent oracles, deliberately written from the definitions rather than
// the library formulas.
double oracle_mrr(int rank) { return 1.0 / static_cast<double>(rank); }

double oracle_ndcg(int rank, int set_size) {
    double dcg = 0;
    for (int pos = 1; pos <= set_size; ++pos) {
        double gain = (pos == rank) ? 1.0 : 0.0;
        dcg += gain * std::log(2.0) / std::log(pos + 1.0);
    }
    return dcg;  // ideal DCG with one relevant item is 1
}

double brute_force_optimal_sse(const std::vector<Point>& points, size_t k) {
    const size_t n = points.size();
    const size_t dim = points[0].size();
    std::vector<size_t> assign(n, 0);
    double best = std::numeric_limits<double>::max();
    std::function<void(size_t)> recurse = [&](size_t i) {
        if (i == n) {
            std::vector<Point> sums(k, Point(dim, 0.0));
            std::vector<size_t> counts(k, 0);
            for (size_t p = 0; p < n; ++p) {
                ++counts[assign[p]];
                for (size_t d = 0; d < dim; ++d) sums[assign[p]][d] += points[p][d];
            }
            double sse = 0;
            for (size_t p = 0; p < n; ++p) {
                for (size_t d = 0; d < dim; ++d) {
                    double mean = sums[assign[p]][d] / static_cast<double>(counts[assign[p]]);
                    sse += (points[p][d] - mean) * (points[p][d] - mean);
                }
            }
            best = std::min(best, sse);
            return;
        }
        for (size_t c = 0; c < k; ++c) {
            assign[i] = c;
            recurse(i + 1);
        }
    };
    recurse(0);
    return best;
}

DatasetBundle golden_bundle(const std::string& into_dir) {
    DatasetSpec spec = DatasetSpec::load(testsupport::data_dir() + "/golden/dataset.json");
    auto reviews = ingest(testsupport::data_dir() + "/golden/reviews.kv").reviews;
    auto filtered = filter_pipeline(reviews, spec);
    auto parts = split(filtered.interactions, spec.split_ratio, spec.per_user_split);
    DatasetBundle bundle;
    bundle.spec = spec;
    bundle.train = parts.train;
    bundle.valid = parts.valid;
    bundle.test = parts.test;
    bundle.catalog = filtered.catalog;
    save_bundle(bundle, into_dir);
    return load_bundle(into_dir);
}

struct GoldenRun {
    std::string snapshot_digest;
    std::string trace_digest;
};

GoldenRun run_golden_once(const std::string& workdir) {
    AppConfig cfg = load_app_config(testsupport::data_dir() + "/golden/config.json");
    DatasetBundle bundle = golden_bundle(workdir + "/bundle");
    auto backend = ScriptedBackend::from_file(cfg.backend.rules_path);
    auto templates = TemplateSet::load(cfg.templates_path);
    TrainerSinks sinks;
    sinks.trace_path = workdir + "/trace.jsonl";
    sinks.config_digest = cfg.digest();
    sinks.dataset_digest = bundle_digest(workdir + "/bundle");
    Trainer trainer(bundle, cfg.sim, backend, templates, sinks);
    trainer.run();
    GoldenRun result;
    result.snapshot_digest = sha256_hex(trainer.finish());
    result.trace_digest = file_sha256(sinks.trace_path);
    return result;
}

}  // namespace

TEST_CASE("criterion 1: MRR/NDCG match the brute-force oracle exactly") {
    auto start = std::chrono::steady_clock::now();
    for (int rank = 1; rank <= 10; ++rank) {
        INFO("rank " << rank);
        CHECK_THAT(mrr(rank), Catch::Matchers::WithinAbs(oracle_mrr(rank), 1e-12));
        CHECK_THAT(ndcg(rank), Catch::Matchers::WithinAbs(oracle_ndcg(rank, 10), 1e-12));
    }
    CHECK(seconds_since(start) < 1.0);
}

TEST_CASE("criterion 2: k-means is near-optimal at desk scale with monotone SSE") {
    auto start = std::chrono::steady_clock::now();
    for (int instance = 0; instance < 100; ++instance) {
        Rng rng(derive_seed(4242, "kmeans-instance", instance));
        const size_t n = 4 + rng.index(7);  // 4..10 points
        const size_t k = 1 + rng.index(3);  // 1..3 clusters
        std::vector<Point> points;
        for (size_t i = 0; i < n; ++i)
            points.push_back({rng.real01() * 10.0, rng.real01() * 10.0});
        const size_t usable_k = std::min(k, n);

        auto result = kmeans(points, usable_k, derive_seed(4242, "kmeans-seed", instance));
        double optimal = brute_force_optimal_sse(points, usable_k);
        INFO("instance " << instance << " n=" << n << " k=" << usable_k << " sse=" << result.sse
                         << " optimal=" << optimal);
        CHECK(result.sse <= 1.05 * optimal + 1e-12);
        for (const auto& history : result.sse_histories) {
            for (size_t i = 1; i < history.size(); ++i)
                CHECK(history[i] <= history[i - 1] + 1e-9);
        }
    }
    CHECK(seconds_since(start) < 10.0);
}

TEST_CASE("criterion 3: the golden pipeline is byte-identical across runs") {
    auto start = std::chrono::steady_clock::now();
    TempDir run1, run2;
    GoldenRun a = run_golden_once(run1.str());
    GoldenRun b = run_golden_once(run2.str());
    CHECK(a.snapshot_digest == b.snapshot_digest);
    CHECK(a.trace_digest == b.trace_digest);
    CHECK(testsupport::read_text(run1.file("trace.jsonl")) ==
          testsupport::read_text(run2.file("trace.jsonl")));

    // digests frozen from the shipped golden dataset + rule file
    std::ifstream exp(testsupport::data_dir() + "/golden/expected.json");
    REQUIRE(exp.good());
    nlohmann::json expected = nlohmann::json::parse(exp);
    CHECK(a.snapshot_digest == expected.at("snapshot_digest").get<std::string>());
    CHECK(a.trace_digest == expected.at("trace_digest").get<std::string>());
    CHECK(seconds_since(start) < 5.0);
}

TEST_CASE("criterion 4: shared memory moves a silent user's context; the ablation freezes it") {
    auto bundle = testsupport::outdoor_bundle();
    auto templates = testsupport::default_templates();

    SimulationConfig full;
    full.seed = 17;
    full.grouping.resegment_every = 4;
    auto full_backend = std::make_shared<ScriptedBackend>(testsupport::outdoor_rules());
    Trainer agentpp(bundle, full, full_backend, templates);
    for (int i = 0; i < 4; ++i) agentpp.step();
    auto full_t1 = agentpp.decision_context("alice", "Outdoor");
    agentpp.step();
    agentpp.step();
    auto full_t2 = agentpp.decision_context("alice", "Outdoor");
    agentpp.step();
    auto full_t3 = agentpp.decision_context("alice", "Outdoor");
    CHECK(full_t2 != full_t1);
    CHECK(full_t3 != full_t1);

    SimulationConfig base;
    base.seed = 17;
    base.dual_layer = false;
    base.shared_groups = false;
    auto base_backend = std::make_shared<ScriptedBackend>(testsupport::outdoor_rules());
    Trainer agentcf(bundle, base, base_backend, templates);
    for (int i = 0; i < 4; ++i) agentcf.step();
    auto base_t1 = agentcf.decision_context("alice", "Outdoor");
    agentcf.step();
    agentcf.step();
    auto base_t2 = agentcf.decision_context("alice", "Outdoor");
    agentcf.step();
    auto base_t3 = agentcf.decision_context("alice", "Outdoor");
    CHECK(base_t2 == base_t1);
    CHECK(base_t3 == base_t1);
}

TEST_CASE("criterion 5: with both flags off the call kinds reduce to the baseline loop") {
    TempDir dir;
    DatasetBundle bundle = golden_bundle(dir.file("bundle"));
    SimulationConfig cfg;
    cfg.dual_layer = false;
    cfg.shared_groups = false;
    cfg.seed = 7;
    TrainerSinks sinks;
    sinks.trace_path = dir.file("trace.jsonl");
    auto backend = ScriptedBackend::from_file(testsupport::data_dir() + "/golden/rules.json");
    Trainer trainer(bundle, cfg, backend, testsupport::default_templates(), sinks);
    trainer.run();

    auto tf = read_trace(sinks.trace_path);
    const std::map<std::string, int> baseline_kinds{
        {"choose-positive", 1}, {"update-user-memory", 1}, {"update-item-memory", 2}};
    std::map<std::int64_t, std::map<std::string, int>> per_step;
    for (const auto& rec : tf.records) {
        CHECK(rec.value("type", "") != "segment");
        if (rec.value("type", "") != "step") continue;
        CHECK(rec.value("phase", "") != "fuse");
        CHECK(rec.value("phase", "") != "broadcast");
        if (!rec.contains("calls")) continue;
        for (const auto& call : rec["calls"]) {
            const std::string kind = call.value("kind", "?");
            CHECK(kind != "extract-relevant-preferences");
            CHECK(kind != "fuse-preferences");
            CHECK(kind != "extract-tags");
            CHECK(kind != "name-group");
            ++per_step[rec.value("step", -1)][kind];
        }
    }
    REQUIRE(per_step.size() == bundle.train.size());
    for (const auto& [step, kinds] : per_step) {
        INFO("step " << step);
        CHECK(kinds == baseline_kinds);
    }
}

TEST_CASE("criterion 6: shared queues never exceed capacity and equal the oracle suffix") {
    Rng rng(606);
    for (int round = 0; round < 20; ++round) {
        const size_t capacity = 1 + rng.index(50);
        GroupSharedMemory queue;
        queue.capacity = capacity;
        std::vector<SharedEntry> oracle;  // unbounded
        for (int push = 0; push < 1000; ++push) {
            SharedEntry e{"u" + std::to_string(rng.index(7)), "item-" + std::to_string(push),
                          "Books", push};
            oracle.push_back(e);
            queue.push(e);
            if (queue.entries.size() > capacity) {
                FAIL("capacity exceeded at push " << push << " (capacity " << capacity << ")");
            }
        }
        REQUIRE(queue.entries.size() == std::min<size_t>(capacity, 1000));
        const size_t offset = oracle.size() - queue.entries.size();
        bool suffix_equal = true;
        for (size_t i = 0; i < queue.entries.size(); ++i)
            suffix_equal = suffix_equal && queue.entries[i] == oracle[offset + i];
        CHECK(suffix_equal);
    }
}

TEST_CASE("criterion 7: interactions in one domain never write another domain's memories") {
    // randomized interaction stream over 4 domains
    Rng rng(707);
    DatasetBundle bundle;
    bundle.spec.name = "random4";
    bundle.spec.domains = {"Books", "CDs", "Games", "Movies"};
    bundle.spec.window_start = 0;
    bundle.spec.window_end = 1'000'000;
    bundle.spec.user_sample_size = 4;
    for (const auto& d : bundle.spec.domains) {
        for (int i = 0; i < 6; ++i) {
            bundle.catalog.push_back(ItemInfo{d + "-i" + std::to_string(i), d,
                                              d + " title " + std::to_string(i), "cat"});
        }
    }
    std::vector<std::string> users = {"u1", "u2", "u3", "u4"};
    for (int n = 0; n < 60; ++n) {
        const auto& d = bundle.spec.domains[rng.index(4)];
        bundle.train.push_back(Interaction{users[rng.index(users.size())],
                                           d + "-i" + std::to_string(rng.index(6)), d,
                                           1000 + n, 4.0 + static_cast<double>(rng.index(2))});
    }

    TempDir dir;
    TrainerSinks sinks;
    sinks.trace_path = dir.file("trace.jsonl");
    SimulationConfig cfg;
    cfg.seed = 70;
    cfg.grouping.resegment_every = 15;
    Trainer trainer(bundle, cfg, testsupport::generic_backend(), testsupport::default_templates(),
                    sinks);
    trainer.run();

    auto tf = read_trace(sinks.trace_path);
    int writes_checked = 0;
    for (const auto& rec : tf.steps()) {
        if (!rec.contains("writes")) continue;
        const std::string domain = rec.value("domain", "");
        const std::string user = rec.value("user", "");
        const std::string item = rec.value("item", "");
        const std::string negative = rec.value("negative", "");
        for (const auto& write : rec["writes"]) {
            ++writes_checked;
            CHECK(write.value("domain", "?") == domain);
            const std::string target = write.value("target", "?");
            if (target == "user") {
                CHECK(write.value("id", "?") == user);
                const std::string layer = write.value("layer", "?");
                bool layer_ok = layer == "separated" || layer == "fused";
                CHECK(layer_ok);
            } else if (target == "item") {
                const std::string id = write.value("id", "?");
                bool is_candidate = id == item || id == negative;
                CHECK(is_candidate);
            }
        }
    }
    CHECK(writes_checked > 100);
}

TEST_CASE("criterion 8: every choose-positive prompt renders the negative before the positive") {
    TempDir dir;
    // golden run plus a random 4-domain run, both traced
    std::vector<std::string> traces;
    {
        GoldenRun g = run_golden_once(dir.str());
        traces.push_back(dir.file("trace.jsonl"));
        (void)g;
    }
    int checked = 0;
    for (const auto& path : traces) {
        auto tf = read_trace(path);
        for (const auto& rec : tf.steps()) {
            if (rec.value("phase", "") != "infer") continue;
            for (const auto& call : rec["calls"]) {
                if (call.value("kind", "") != "choose-positive") continue;
                REQUIRE(call.contains("neg_at"));
                REQUIRE(call.contains("pos_at"));
                CHECK(call["neg_at"].get<size_t>() < call["pos_at"].get<size_t>());
                ++checked;
            }
        }
    }
    CHECK(checked >= 14);
}

TEST_CASE("criterion 9: the dataset pipeline matches hand-computed filters and split sizes") {
    TempDir dir;
    auto raw_path = dir.file("edge.kv");
    testsupport::write_text(raw_path, testsupport::edge_case_reviews());
    auto reviews = ingest(raw_path).reviews;
    auto result = filter_pipeline(reviews, testsupport::edge_case_spec());

    // hand-computed: only boundary_ok survives, with all ten of its records
    REQUIRE(result.sampled_users == std::vector<std::string>{"boundary_ok"});
    REQUIRE(result.interactions.size() == 10);
    std::vector<std::string> expected_items;
    for (int i = 0; i < 9; ++i) expected_items.push_back("bo" + std::to_string(i));
    expected_items.push_back("bo9");
    for (size_t i = 0; i < expected_items.size(); ++i)
        CHECK(result.interactions[i].item == expected_items[i]);

    auto sizes = [](int n) {
        std::vector<Interaction> in;
        for (int i = 0; i < n; ++i)
            in.push_back(Interaction{"u", "i" + std::to_string(i), "Books", i, 4.0});
        auto parts = split(in);
        return std::array<size_t, 3>{parts.train.size(), parts.valid.size(), parts.test.size()};
    };
    CHECK(sizes(10) == std::array<size_t, 3>{8, 1, 1});
    CHECK(sizes(20) == std::array<size_t, 3>{16, 2, 2});
    CHECK(sizes(101) == std::array<size_t, 3>{81, 10, 10});
}

// Manual, live-backend directional check. Hidden by default: needs a config
// with a live backend and a prepared 100-user bundle, named by
// AGENTSIM_LIVE_CONFIG. No absolute metric value is asserted, only the
// ordering between the full configuration and its ablation.
TEST_CASE("criterion 10: full configuration beats the base ablation on MRR", "[.live]") {
    const char* cfg_path = std::getenv("AGENTSIM_LIVE_CONFIG");
    if (!cfg_path) {
        SKIP("set AGENTSIM_LIVE_CONFIG to a live-backend run config");
    }
    AppConfig cfg = load_app_config(cfg_path);
    TemplateSet templates = TemplateSet::load(cfg.templates_path);
    DatasetBundle bundle = load_bundle(cfg.bundle_dir);
    BackendPtr backend = make_backend(cfg, templates);

    auto train_and_eval = [&](bool dual, bool shared) {
        SimulationConfig sim = cfg.sim;
        sim.dual_layer = dual;
        sim.shared_groups = shared;
        Trainer trainer(bundle, sim, backend, templates);
        trainer.run();
        Evaluator evaluator(bundle, trainer.store(), sim, backend);
        return evaluator.evaluate("agent", cfg.eval).mrr_mean;
    };
    double full = train_and_eval(true, true);
    double base = train_and_eval(false, false);
    INFO("full=" << full << " base=" << base);
    CHECK(full >= base);
}
