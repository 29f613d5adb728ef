#pragma once

// Ranking evaluation: a 10-item candidate set per test interaction (ground
// truth plus 9 seeded same-domain distractors the user never touched), a
// list-wise ranking elicited from the trained agent or from the training-free
// baselines, NDCG/MRR per rank and averages over repeated runs. Candidate
// sampling and presentation order are re-seeded per (user, run); the trained
// state stays fixed across runs.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "agentsim/backend.hpp"
#include "agentsim/dataset.hpp"
#include "agentsim/memory.hpp"
#include "agentsim/rng.hpp"
#include "agentsim/simulation.hpp"

namespace agentsim {

inline constexpr int kCandidateSetSize = 10;

struct CandidateSet {
    std::string ground_truth;
    std::vector<std::string> distractors;        // 9 ids
    std::vector<std::string> presentation_order;  // permutation of all 10
};

struct RankingResult {
    std::vector<std::string> ordering;  // best first
    int rank_of_truth = 0;              // 1-based
    bool degraded = false;

    void finalize(const CandidateSet& cs) {
        if (ordering.size() != cs.presentation_order.size())
            throw AgentError(ErrorCode::InvalidArgument, "ranking is not a full permutation");
        std::set<std::string> seen(ordering.begin(), ordering.end());
        std::set<std::string> expected(cs.presentation_order.begin(), cs.presentation_order.end());
        if (seen != expected)
            throw AgentError(ErrorCode::InvalidArgument, "ranking ids do not match candidate set");
        auto it = std::find(ordering.begin(), ordering.end(), cs.ground_truth);
        rank_of_truth = static_cast<int>(std::distance(ordering.begin(), it)) + 1;
    }
};

// MRR = 1/rank. Single relevant item, so IDCG = 1 and NDCG reduces to the
// positional discount 1/log2(rank+1).
inline double mrr(int rank) {
    if (rank < 1 || rank > kCandidateSetSize)
        throw AgentError(ErrorCode::InvalidRank, "rank " + std::to_string(rank));
    return 1.0 / static_cast<double>(rank);
}

inline double ndcg(int rank) {
    if (rank < 1 || rank > kCandidateSetSize)
        throw AgentError(ErrorCode::InvalidRank, "rank " + std::to_string(rank));
    return 1.0 / std::log2(static_cast<double>(rank) + 1.0);
}

// Uniform seeded sample of 9 same-domain distractors the user has not
// interacted with, then a seeded presentation shuffle of all 10.
inline CandidateSet build_candidates(const std::string& user, const std::string& truth_item,
                                     const std::string& domain,
                                     const std::vector<ItemInfo>& catalog,
                                     const std::set<std::string>& interacted, std::uint64_t seed) {
    std::vector<std::string> eligible;
    for (const auto& item : catalog) {
        if (item.domain != domain) continue;
        if (item.item_id == truth_item) continue;
        if (interacted.count(item.item_id)) continue;
        eligible.push_back(item.item_id);
    }
    std::sort(eligible.begin(), eligible.end());
    if (eligible.size() < 9)
        throw AgentError(ErrorCode::EvalPoolTooSmall,
                         "only " + std::to_string(eligible.size()) + " eligible distractors for user " +
                             user + " in " + domain);
    CandidateSet cs;
    cs.ground_truth = truth_item;
    Rng rng(derive_seed(seed, "distractors"));
    for (size_t idx : rng.sample_indices(eligible.size(), 9)) cs.distractors.push_back(eligible[idx]);
    cs.presentation_order = cs.distractors;
    cs.presentation_order.push_back(truth_item);
    Rng order_rng(derive_seed(seed, "order"));
    order_rng.shuffle(cs.presentation_order);
    return cs;
}

namespace detail {

inline std::map<std::string, const ItemInfo*> catalog_index(const std::vector<ItemInfo>& catalog) {
    std::map<std::string, const ItemInfo*> out;
    for (const auto& item : catalog) out[item.item_id] = &item;
    return out;
}

inline RankingResult ranking_from_parse(const CandidateSet& cs, const std::vector<int>& order,
                                        bool degraded) {
    RankingResult result;
    result.degraded = degraded;
    if (order.empty()) {
        result.ordering = cs.presentation_order;
        result.degraded = true;
    } else {
        for (int idx : order)
            result.ordering.push_back(cs.presentation_order[static_cast<size_t>(idx - 1)]);
    }
    result.finalize(cs);
    return result;
}

}  // namespace detail

// One rank-candidates completion over the user's decision context plus the
// ten item memories in presentation order. Parse failures reprompt once,
// then fall back to presentation order with the degraded flag set.
inline RankingResult rank_with_agent(const MemoryStore& store, const SimulationConfig& cfg,
                                     TextBackend& backend, const std::string& user,
                                     const CandidateSet& cs, const std::string& domain,
                                     std::uint64_t seed) {
    const auto ctx = store.decision_context(user, cfg.memory_domain(domain));
    std::string numbered;
    for (size_t i = 0; i < cs.presentation_order.size(); ++i) {
        numbered += std::to_string(i + 1) + ". " +
                    clip_memory(store.item(cs.presentation_order[i]).memory, cfg.slot_char_budget);
        if (i + 1 < cs.presentation_order.size()) numbered += '\n';
    }
    PromptRequest req;
    req.kind = PromptKind::RankCandidates;
    req.template_id = "rank-candidates";
    req.slots = {{"domain", domain},
                 {"separated", clip_memory(ctx.separated, cfg.slot_char_budget)},
                 {"fused", clip_memory(ctx.fused, cfg.slot_char_budget)},
                 {"shared", clip_memory(ctx.shared_text(), cfg.slot_char_budget)},
                 {"candidates", numbered}};
    req.seed = derive_seed(seed, "rank", user);

    std::vector<int> order;
    for (int attempt = 0; attempt < 2 && order.empty(); ++attempt) {
        PromptRequest attempt_req = req;
        attempt_req.seed = req.seed + static_cast<std::uint64_t>(attempt) * Trainer::kRetrySeedOffset;
        try {
            order = parse_ranking(backend.complete(attempt_req).text,
                                  static_cast<int>(cs.presentation_order.size()));
        } catch (const AgentError&) {
            // treated like a parse failure; fall through to the reprompt
        }
    }
    return detail::ranking_from_parse(cs, order, false);
}

// Popularity baseline: candidates ordered by training-split interaction
// count, ties by item id ascending.
inline RankingResult pop_baseline(const CandidateSet& cs,
                                  const std::map<std::string, int>& train_counts) {
    RankingResult result;
    result.ordering = cs.presentation_order;
    std::stable_sort(result.ordering.begin(), result.ordering.end(),
                     [&](const std::string& a, const std::string& b) {
                         int ca = train_counts.count(a) ? train_counts.at(a) : 0;
                         int cb = train_counts.count(b) ? train_counts.at(b) : 0;
                         if (ca != cb) return ca > cb;
                         return a < b;
                     });
    result.finalize(cs);
    return result;
}

// Embedding-similarity baseline: a candidate scores the maximum cosine
// similarity between its side-info embedding and the user's training-history
// item embeddings.
inline RankingResult seqsim_baseline(TextBackend& backend, const std::vector<ItemInfo>& catalog,
                                     const std::vector<std::string>& history_items,
                                     const CandidateSet& cs) {
    auto index = detail::catalog_index(catalog);
    auto side_info_text = [&](const std::string& id) -> std::string {
        auto it = index.find(id);
        if (it == index.end()) return id;
        return it->second->title +
               (it->second->category.empty() ? "" : "; " + it->second->category);
    };
    auto cosine = [](const Embedding& a, const Embedding& b) {
        double dot = 0;
        for (size_t i = 0; i < a.size() && i < b.size(); ++i) dot += a[i] * b[i];
        double na = l2_norm(a), nb = l2_norm(b);
        if (na <= 0 || nb <= 0) return 0.0;
        return dot / (na * nb);
    };

    RankingResult result;
    result.ordering = cs.presentation_order;
    if (history_items.empty()) {
        std::sort(result.ordering.begin(), result.ordering.end());
        result.degraded = true;
        result.finalize(cs);
        return result;
    }

    std::vector<Embedding> history_vecs;
    for (const auto& id : history_items) history_vecs.push_back(backend.embed(side_info_text(id)));
    std::map<std::string, double> score;
    for (const auto& id : cs.presentation_order) {
        Embedding v = backend.embed(side_info_text(id));
        double best = -2.0;
        for (const auto& h : history_vecs) best = std::max(best, cosine(v, h));
        score[id] = best;
    }
    std::stable_sort(result.ordering.begin(), result.ordering.end(),
                     [&](const std::string& a, const std::string& b) {
                         if (score[a] != score[b]) return score[a] > score[b];
                         return a < b;
                     });
    result.finalize(cs);
    return result;
}

// Zero-shot ranker baseline: one completion over raw history titles and
// candidate titles, no learned memories. Parsing mirrors rank_with_agent.
inline RankingResult llmrank_baseline(TextBackend& backend, const std::vector<ItemInfo>& catalog,
                                      const std::vector<std::string>& history_items,
                                      const CandidateSet& cs, const std::string& domain,
                                      std::uint64_t seed) {
    auto index = detail::catalog_index(catalog);
    auto title_of = [&](const std::string& id) -> std::string {
        auto it = index.find(id);
        return it == index.end() ? id : it->second->title;
    };
    std::string history;
    for (size_t i = 0; i < history_items.size(); ++i) {
        if (i) history += "; ";
        history += title_of(history_items[i]);
    }
    if (history.empty()) history = "(none)";
    std::string numbered;
    for (size_t i = 0; i < cs.presentation_order.size(); ++i) {
        numbered += std::to_string(i + 1) + ". " + title_of(cs.presentation_order[i]);
        if (i + 1 < cs.presentation_order.size()) numbered += '\n';
    }
    PromptRequest req;
    req.kind = PromptKind::RankCandidates;
    req.template_id = "rank-candidates-history";
    req.slots = {{"domain", domain}, {"history", history}, {"candidates", numbered}};
    req.seed = derive_seed(seed, "llmrank");

    std::vector<int> order;
    for (int attempt = 0; attempt < 2 && order.empty(); ++attempt) {
        PromptRequest attempt_req = req;
        attempt_req.seed = req.seed + static_cast<std::uint64_t>(attempt) * Trainer::kRetrySeedOffset;
        try {
            order = parse_ranking(backend.complete(attempt_req).text,
                                  static_cast<int>(cs.presentation_order.size()));
        } catch (const AgentError&) {
        }
    }
    return detail::ranking_from_parse(cs, order, false);
}

// ---- aggregation ------------------------------------------------------------

struct MetricReport {
    std::string method;
    std::string dataset;
    std::vector<double> per_run_mrr;
    std::vector<double> per_run_ndcg;
    double mrr_mean = 0, mrr_std = 0;
    double ndcg_mean = 0, ndcg_std = 0;
    int runs = 0;
    int degraded = 0;
    int skipped_cases = 0;
};

inline std::pair<double, double> mean_and_stddev(const std::vector<double>& values) {
    if (values.empty()) throw AgentError(ErrorCode::InvalidArgument, "empty sample");
    double mean = 0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    if (values.size() == 1) return {mean, 0.0};
    double var = 0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(values.size() - 1);
    return {mean, std::sqrt(var)};
}

inline void aggregate(MetricReport& report) {
    if (report.per_run_mrr.empty())
        throw AgentError(ErrorCode::InvalidArgument, "aggregate: no runs");
    report.runs = static_cast<int>(report.per_run_mrr.size());
    std::tie(report.mrr_mean, report.mrr_std) = mean_and_stddev(report.per_run_mrr);
    std::tie(report.ndcg_mean, report.ndcg_std) = mean_and_stddev(report.per_run_ndcg);
}

// ---- evaluation driver ---------------------------------------------------------

struct EvalConfig {
    int runs = 5;
    std::uint64_t seed = 11;
    std::vector<std::string> methods = {"agent", "pop", "seqsim", "llmrank"};
};

class Evaluator {
public:
    Evaluator(const DatasetBundle& bundle, const MemoryStore& store, const SimulationConfig& sim_cfg,
              BackendPtr backend)
        : bundle_(bundle), store_(store), sim_cfg_(sim_cfg), backend_(std::move(backend)) {
        interacted_ = bundle_.interacted();
        for (const auto& i : bundle_.train) {
            ++train_counts_[i.item];
            history_[i.user].push_back(i.item);
        }
    }

    MetricReport evaluate(const std::string& method, const EvalConfig& cfg) {
        if (bundle_.test.empty())
            throw AgentError(ErrorCode::InvalidArgument, "evaluation needs a non-empty test split");
        if (cfg.runs < 1) throw AgentError(ErrorCode::ConfigError, "runs must be >= 1");
        MetricReport report;
        report.method = method;
        report.dataset = bundle_.spec.name;
        for (int run = 0; run < cfg.runs; ++run) {
            double mrr_sum = 0, ndcg_sum = 0;
            int cases = 0;
            for (const auto& ix : bundle_.test) {
                std::uint64_t case_seed =
                    derive_seed(cfg.seed, "case", ix.user + "|" + ix.item, run);
                CandidateSet cs;
                try {
                    cs = build_candidates(ix.user, ix.item, ix.domain, bundle_.catalog,
                                          interacted_[ix.user], case_seed);
                } catch (const AgentError& e) {
                    if (e.code() == ErrorCode::EvalPoolTooSmall) {
                        ++report.skipped_cases;
                        continue;
                    }
                    throw;
                }
                RankingResult r = rank(method, ix, cs, case_seed);
                if (r.degraded) ++report.degraded;
                mrr_sum += mrr(r.rank_of_truth);
                ndcg_sum += ndcg(r.rank_of_truth);
                ++cases;
            }
            if (cases == 0)
                throw AgentError(ErrorCode::EvalPoolTooSmall,
                                 "no evaluable test interactions (catalog too thin)");
            report.per_run_mrr.push_back(mrr_sum / cases);
            report.per_run_ndcg.push_back(ndcg_sum / cases);
        }
        aggregate(report);
        return report;
    }

private:
    RankingResult rank(const std::string& method, const Interaction& ix, const CandidateSet& cs,
                       std::uint64_t case_seed) {
        if (method == "agent")
            return rank_with_agent(store_, sim_cfg_, *backend_, ix.user, cs, ix.domain, case_seed);
        if (method == "pop") return pop_baseline(cs, train_counts_);
        if (method == "seqsim")
            return seqsim_baseline(*backend_, bundle_.catalog, history_lookup(ix.user), cs);
        if (method == "llmrank")
            return llmrank_baseline(*backend_, bundle_.catalog, history_lookup(ix.user), cs,
                                    ix.domain, case_seed);
        throw AgentError(ErrorCode::ConfigError, "unknown evaluation method '" + method + "'");
    }

    const std::vector<std::string>& history_lookup(const std::string& user) {
        static const std::vector<std::string> empty;
        auto it = history_.find(user);
        return it == history_.end() ? empty : it->second;
    }

    const DatasetBundle& bundle_;
    const MemoryStore& store_;
    SimulationConfig sim_cfg_;
    BackendPtr backend_;
    std::map<std::string, std::set<std::string>> interacted_;
    std::map<std::string, int> train_counts_;
    std::map<std::string, std::vector<std::string>> history_;
};

// ---- report files ---------------------------------------------------------------

inline std::string render_eval_table(const std::vector<MetricReport>& reports) {
    std::ostringstream out;
    out << std::left << std::setw(16) << "method" << std::setw(12) << "dataset" << std::right
        << std::setw(8) << "runs" << std::setw(18) << "MRR(mean+/-std)" << std::setw(18)
        << "NDCG(mean+/-std)" << '\n';
    out << std::string(72, '-') << '\n';
    for (const auto& r : reports) {
        std::ostringstream mrr_s, ndcg_s;
        mrr_s << std::fixed << std::setprecision(4) << r.mrr_mean << "+/-" << std::setprecision(4)
              << r.mrr_std;
        ndcg_s << std::fixed << std::setprecision(4) << r.ndcg_mean << "+/-" << std::setprecision(4)
               << r.ndcg_std;
        out << std::left << std::setw(16) << r.method << std::setw(12) << r.dataset << std::right
            << std::setw(8) << r.runs << std::setw(18) << mrr_s.str() << std::setw(18) << ndcg_s.str()
            << '\n';
    }
    return out.str();
}

inline void write_eval_reports(const std::vector<MetricReport>& reports, const std::string& jsonl_path,
                               const std::string& table_path) {
    std::ofstream jf(jsonl_path, std::ios::binary | std::ios::trunc);
    if (!jf) throw AgentError(ErrorCode::IoError, "cannot write report: " + jsonl_path);
    for (const auto& r : reports) {
        for (size_t run = 0; run < r.per_run_mrr.size(); ++run) {
            nlohmann::json j{{"type", "run"},     {"method", r.method}, {"dataset", r.dataset},
                             {"run", run},        {"mrr", r.per_run_mrr[run]},
                             {"ndcg", r.per_run_ndcg[run]}};
            jf << j.dump() << '\n';
        }
        nlohmann::json s{{"type", "summary"},     {"method", r.method},
                         {"dataset", r.dataset},  {"runs", r.runs},
                         {"mrr_mean", r.mrr_mean}, {"mrr_std", r.mrr_std},
                         {"ndcg_mean", r.ndcg_mean}, {"ndcg_std", r.ndcg_std},
                         {"degraded", r.degraded}, {"skipped_cases", r.skipped_cases}};
        jf << s.dump() << '\n';
    }

    std::ofstream tf(table_path, std::ios::binary | std::ios::trunc);
    if (!tf) throw AgentError(ErrorCode::IoError, "cannot write report: " + table_path);
    tf << render_eval_table(reports);
}


}  // namespace agentsim
