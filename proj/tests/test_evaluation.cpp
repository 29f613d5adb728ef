#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "agentsim/evaluation.hpp"

#include "support.hpp"

using namespace agentsim;

namespace {

// Independent metric oracle: DCG computed positionally with natural logs,
// over an explicit relevance vector with a single positive.
double oracle_ndcg(int rank, int set_size) {
    std::vector<int> rel(static_cast<size_t>(set_size), 0);
    rel[static_cast<size_t>(rank - 1)] = 1;
    double dcg = 0;
    for (int pos = 1; pos <= set_size; ++pos)
        dcg += rel[static_cast<size_t>(pos - 1)] / (std::log(pos + 1.0) / std::log(2.0));
    double idcg = 1.0 / (std::log(2.0) / std::log(2.0));
    return dcg / idcg;
}

double oracle_mrr(int rank) {
    // literal definition: reciprocal of the first relevant position
    for (int pos = 1; pos <= 10; ++pos) {
        if (pos == rank) return 1.0 / pos;
    }
    return 0.0;
}

CandidateSet small_set(const std::vector<std::string>& ids, const std::string& truth) {
    CandidateSet cs;
    cs.ground_truth = truth;
    for (const auto& id : ids)
        if (id != truth) cs.distractors.push_back(id);
    cs.presentation_order = ids;
    return cs;
}

DatasetBundle eval_bundle() {
    DatasetBundle b;
    b.spec.name = "evalset";
    b.spec.domains = {"Books", "Movies", "Games"};
    b.spec.window_start = 0;
    b.spec.window_end = 10'000;
    b.spec.user_sample_size = 1;
    for (int i = 1; i <= 12; ++i) {
        std::string id = (i < 10 ? "b0" : "b1") + std::to_string(i % 10);
        b.catalog.push_back(ItemInfo{id, "Books", "Book " + std::to_string(i), "fiction"});
    }
    b.train = {{"u1", "b01", "Books", 100, 5.0}, {"u1", "b02", "Books", 200, 4.5}};
    b.test = {{"u1", "b03", "Books", 300, 5.0}};
    return b;
}

MemoryStore eval_store(const DatasetBundle& b) {
    MemoryStore store({"Books", "Movies", "Games"}, {});
    store.add_user("u1");
    for (const auto& item : b.catalog)
        store.add_item(item.item_id, item.domain, item.title, item.category);
    store.write_separated("u1", "Books", "loves fiction");
    return store;
}

}  // namespace

TEST_CASE("mrr and ndcg closed forms") {
    CHECK(mrr(1) == 1.0);
    CHECK(ndcg(1) == 1.0);
    CHECK(mrr(2) == 0.5);
    CHECK_THAT(ndcg(2), Catch::Matchers::WithinAbs(0.6309297535714575, 1e-12));
    CHECK_THAT(ndcg(3), Catch::Matchers::WithinAbs(0.5, 1e-12));
}

TEST_CASE("metrics agree with the brute-force oracle on every rank") {
    for (int rank = 1; rank <= 10; ++rank) {
        INFO("rank " << rank);
        CHECK_THAT(mrr(rank), Catch::Matchers::WithinAbs(oracle_mrr(rank), 1e-12));
        CHECK_THAT(ndcg(rank), Catch::Matchers::WithinAbs(oracle_ndcg(rank, 10), 1e-12));
    }
}

TEST_CASE("metrics are bounded and strictly decreasing in rank") {
    for (int rank = 1; rank <= 10; ++rank) {
        CHECK(mrr(rank) > 0.0);
        CHECK(mrr(rank) <= 1.0);
        CHECK(ndcg(rank) > 0.0);
        CHECK(ndcg(rank) <= 1.0);
        if (rank > 1) {
            CHECK(mrr(rank) < mrr(rank - 1));
            CHECK(ndcg(rank) < ndcg(rank - 1));
        }
    }
    for (int bad : {0, -1, 11}) {
        INFO("rank " << bad);
        CHECK_THROWS_AS(mrr(bad), AgentError);
        CHECK_THROWS_AS(ndcg(bad), AgentError);
    }
}

TEST_CASE("candidate sets sample nine eligible same-domain distractors") {
    auto b = eval_bundle();
    std::set<std::string> interacted{"b01", "b02", "b03"};

    auto cs = build_candidates("u1", "b03", "Books", b.catalog, interacted, 42);
    CHECK(cs.ground_truth == "b03");
    REQUIRE(cs.distractors.size() == 9);
    REQUIRE(cs.presentation_order.size() == 10);
    for (const auto& d : cs.distractors) {
        CHECK(d != "b03");
        CHECK(interacted.count(d) == 0);
    }
    std::set<std::string> order_set(cs.presentation_order.begin(), cs.presentation_order.end());
    CHECK(order_set.size() == 10);
    CHECK(order_set.count("b03") == 1);

    SECTION("fixed seed reproduces set and order") {
        auto again = build_candidates("u1", "b03", "Books", b.catalog, interacted, 42);
        CHECK(again.distractors == cs.distractors);
        CHECK(again.presentation_order == cs.presentation_order);
    }
    SECTION("different seeds vary the presentation order") {
        auto other = build_candidates("u1", "b03", "Books", b.catalog, interacted, 43);
        CHECK(other.presentation_order != cs.presentation_order);
    }
    SECTION("exactly nine eligible means a forced set") {
        // 12 items minus truth minus the two interacted = 9 eligible
        std::set<std::string> sorted_d(cs.distractors.begin(), cs.distractors.end());
        CHECK(sorted_d.size() == 9);
    }
    SECTION("eight eligible is an error") {
        auto thin = b.catalog;
        thin.pop_back();  // 11 items -> 8 eligible
        try {
            build_candidates("u1", "b03", "Books", thin, interacted, 42);
            FAIL("expected eval-pool-too-small");
        } catch (const AgentError& e) {
            CHECK(e.code() == ErrorCode::EvalPoolTooSmall);
        }
    }
}

TEST_CASE("agent ranking parses scripted permutations and falls back safely") {
    auto b = eval_bundle();
    auto store = eval_store(b);
    SimulationConfig cfg;
    std::set<std::string> interacted{"b01", "b02", "b03"};
    auto cs = build_candidates("u1", "b03", "Books", b.catalog, interacted, 7);

    SECTION("scripted fixed order") {
        nlohmann::json rules{{"dimension", 2},
                             {"rules", nlohmann::json::array({
                                           {{"kind", "rank-candidates"},
                                            {"text", "10, 9, 8, 7, 6, 5, 4, 3, 2, 1"}},
                                           {{"kind", "*"}, {"text", "ok"}},
                                       })}};
        ScriptedBackend backend(rules);
        auto r = rank_with_agent(store, cfg, backend, "u1", cs, "Books", 7);
        CHECK_FALSE(r.degraded);
        REQUIRE(r.ordering.size() == 10);
        for (int i = 0; i < 10; ++i) CHECK(r.ordering[i] == cs.presentation_order[9 - i]);
        CHECK(r.rank_of_truth >= 1);
        CHECK(r.rank_of_truth <= 10);
    }
    SECTION("omissions reprompt, then presentation order with degraded flag") {
        nlohmann::json rules{{"dimension", 2},
                             {"rules", nlohmann::json::array({
                                           {{"kind", "rank-candidates"}, {"text", "1, 2, 3"}},
                                           {{"kind", "*"}, {"text", "ok"}},
                                       })}};
        auto backend = std::make_shared<ScriptedBackend>(rules);
        auto recording = RecordingBackend(backend);
        auto r = rank_with_agent(store, cfg, recording, "u1", cs, "Books", 7);
        CHECK(r.degraded);
        CHECK(r.ordering == cs.presentation_order);
        CHECK(recording.requests().size() == 2);  // one reprompt before the fallback
    }
}

TEST_CASE("pop baseline sorts by training count with id tie-break") {
    auto cs = small_set({"a", "b", "c"}, "a");
    std::map<std::string, int> counts{{"a", 5}, {"b", 3}, {"c", 1}};
    auto r = pop_baseline(cs, counts);
    CHECK(r.ordering == std::vector<std::string>{"a", "b", "c"});
    CHECK(r.rank_of_truth == 1);
    CHECK(mrr(r.rank_of_truth) == 1.0);

    SECTION("all-zero counts fall back to id order") {
        auto zero = pop_baseline(cs, {});
        CHECK(zero.ordering == std::vector<std::string>{"a", "b", "c"});
    }
    SECTION("rank reflects the count order") {
        counts = {{"a", 0}, {"b", 9}, {"c", 4}};
        auto ranked = pop_baseline(cs, counts);
        CHECK(ranked.ordering == std::vector<std::string>{"b", "c", "a"});
        CHECK(ranked.rank_of_truth == 3);
    }
}

TEST_CASE("seqsim baseline scores by best cosine against history") {
    std::vector<ItemInfo> catalog = {{"h1", "Books", "History One", "x"},
                                     {"c1", "Books", "Cand One", "x"},
                                     {"c2", "Books", "Cand Two", "x"},
                                     {"c3", "Books", "Cand Three", "x"}};
    auto cs = small_set({"c1", "c2", "c3"}, "c2");

    SECTION("a candidate duplicating a history vector ranks first") {
        nlohmann::json rules{
            {"dimension", 3},
            {"rules",
             nlohmann::json::array({
                 {{"kind", "embed"}, {"contains", {{"text", "History One"}}},
                  {"embedding", {1.0, 0.0, 0.0}}},
                 {{"kind", "embed"}, {"contains", {{"text", "Cand Two"}}},
                  {"embedding", {1.0, 0.0, 0.0}}},
                 {{"kind", "embed"}, {"contains", {{"text", "Cand"}}}, {"embedding", {0.0, 1.0, 0.0}}},
                 {{"kind", "*"}, {"text", "ok"}},
             })}};
        ScriptedBackend backend(rules);
        auto r = seqsim_baseline(backend, catalog, {"h1"}, cs);
        CHECK(r.ordering.front() == "c2");
        CHECK(r.rank_of_truth == 1);
    }
    SECTION("equal similarity ties break by id") {
        nlohmann::json rules{
            {"dimension", 4},
            {"rules", nlohmann::json::array({
                          {{"kind", "embed"}, {"contains", {{"text", "History"}}},
                           {"embedding", {0.0, 0.0, 0.0, 1.0}}},
                          {{"kind", "embed"}, {"contains", {{"text", "Cand One"}}},
                           {"embedding", {1.0, 0.0, 0.0, 0.0}}},
                          {{"kind", "embed"}, {"contains", {{"text", "Cand Two"}}},
                           {"embedding", {0.0, 1.0, 0.0, 0.0}}},
                          {{"kind", "embed"}, {"contains", {{"text", "Cand Three"}}},
                           {"embedding", {0.0, 0.0, 1.0, 0.0}}},
                          {{"kind", "*"}, {"text", "ok"}},
                      })}};
        ScriptedBackend backend(rules);
        auto r = seqsim_baseline(backend, catalog, {"h1"}, cs);
        CHECK(r.ordering == std::vector<std::string>{"c1", "c2", "c3"});
    }
    SECTION("empty history degrades to id order") {
        ScriptedBackend backend(testsupport::generic_rules());
        auto r = seqsim_baseline(backend, catalog, {}, cs);
        CHECK(r.degraded);
        CHECK(r.ordering == std::vector<std::string>{"c1", "c2", "c3"});
    }
}

TEST_CASE("llmrank baseline ranks titles with the zero-shot prompt") {
    auto b = eval_bundle();
    std::set<std::string> interacted{"b01", "b02", "b03"};
    auto cs = build_candidates("u1", "b03", "Books", b.catalog, interacted, 3);

    nlohmann::json rules{{"dimension", 2},
                         {"rules", nlohmann::json::array({
                                       {{"kind", "rank-candidates"},
                                        {"text", "2,1,3,4,5,6,7,8,9,10"}},
                                       {{"kind", "*"}, {"text", "ok"}},
                                   })}};
    auto backend = std::make_shared<ScriptedBackend>(rules);
    RecordingBackend recording(backend);
    auto r = llmrank_baseline(recording, b.catalog, {"b01", "b02"}, cs, "Books", 3);
    CHECK_FALSE(r.degraded);
    CHECK(r.ordering[0] == cs.presentation_order[1]);
    CHECK(r.ordering[1] == cs.presentation_order[0]);
    auto requests = recording.requests();
    REQUIRE(requests.size() == 1);
    CHECK(requests[0].template_id == "rank-candidates-history");
    CHECK(requests[0].slots.at("history").find("Book 1") != std::string::npos);

    SECTION("permutation validity holds on every result") {
        std::set<std::string> ids(r.ordering.begin(), r.ordering.end());
        CHECK(ids.size() == 10);
    }
}

TEST_CASE("aggregate computes mean and sample standard deviation") {
    MetricReport r;
    r.per_run_mrr = {0.3, 0.5};
    r.per_run_ndcg = {0.4, 0.4};
    aggregate(r);
    CHECK(r.runs == 2);
    CHECK_THAT(r.mrr_mean, Catch::Matchers::WithinAbs(0.4, 1e-12));
    CHECK_THAT(r.mrr_std, Catch::Matchers::WithinAbs(std::sqrt(0.02), 1e-12));
    CHECK(r.ndcg_std == 0.0);

    MetricReport single;
    single.per_run_mrr = {0.7};
    single.per_run_ndcg = {0.6};
    aggregate(single);
    CHECK(single.runs == 1);
    CHECK(single.mrr_mean == 0.7);
    CHECK(single.mrr_std == 0.0);

    MetricReport five;
    five.per_run_mrr.assign(5, 0.25);
    five.per_run_ndcg.assign(5, 0.5);
    aggregate(five);
    CHECK(five.runs == 5);
    CHECK(five.mrr_std == 0.0);
    CHECK(five.ndcg_std == 0.0);
}

TEST_CASE("evaluator runs the protocol end to end with fixed state") {
    auto b = eval_bundle();
    auto store = eval_store(b);
    SimulationConfig cfg;
    auto backend = testsupport::generic_backend();
    Evaluator evaluator(b, store, cfg, backend);

    EvalConfig eval_cfg;
    eval_cfg.runs = 5;
    auto report = evaluator.evaluate("agent", eval_cfg);
    CHECK(report.runs == 5);
    CHECK(report.method == "agent");
    CHECK(report.dataset == "evalset");
    REQUIRE(report.per_run_mrr.size() == 5);
    for (double v : report.per_run_mrr) {
        CHECK(v > 0.0);
        CHECK(v <= 1.0);
    }

    SECTION("evaluation is repeatable") {
        auto again = evaluator.evaluate("agent", eval_cfg);
        CHECK(again.per_run_mrr == report.per_run_mrr);
        CHECK(again.per_run_ndcg == report.per_run_ndcg);
    }
    SECTION("single run") {
        eval_cfg.runs = 1;
        auto one = evaluator.evaluate("pop", eval_cfg);
        CHECK(one.runs == 1);
        CHECK(one.mrr_std == 0.0);
    }
    SECTION("pop and seqsim are backend-deterministic") {
        auto p1 = evaluator.evaluate("pop", eval_cfg);
        auto p2 = evaluator.evaluate("pop", eval_cfg);
        CHECK(p1.per_run_mrr == p2.per_run_mrr);
        auto s1 = evaluator.evaluate("seqsim", eval_cfg);
        auto s2 = evaluator.evaluate("seqsim", eval_cfg);
        CHECK(s1.per_run_mrr == s2.per_run_mrr);
    }
    SECTION("unknown method is a config error") {
        CHECK_THROWS_AS(evaluator.evaluate("mystery", eval_cfg), AgentError);
    }
}

TEST_CASE("report files carry per-run and summary records") {
    testsupport::TempDir dir;
    MetricReport r;
    r.method = "pop";
    r.dataset = "evalset";
    r.per_run_mrr = {0.5, 0.7};
    r.per_run_ndcg = {0.6, 0.8};
    aggregate(r);
    auto jsonl = dir.file("eval_report.jsonl");
    auto table = dir.file("eval_report.txt");
    write_eval_reports({r}, jsonl, table);

    int runs = 0, summaries = 0;
    std::istringstream in(testsupport::read_text(jsonl));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        if (j["type"] == "run") ++runs;
        if (j["type"] == "summary") {
            ++summaries;
            CHECK(j["runs"] == 2);
            CHECK_THAT(j["mrr_mean"].get<double>(), Catch::Matchers::WithinAbs(0.6, 1e-12));
        }
    }
    CHECK(runs == 2);
    CHECK(summaries == 1);

    auto rendered = testsupport::read_text(table);
    CHECK(rendered.find("pop") != std::string::npos);
    CHECK(rendered.find("0.6000") != std::string::npos);
}
