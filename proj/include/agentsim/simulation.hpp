#pragma once

// The chronological training loop. Each interaction runs the inference phase
// (choose the real item against a sampled negative, negative rendered first)
// and the update phase: rewrite the user's domain-separated memory, the
// two-step fusion into the domain-fused memory, item memory updates for both
// candidates, then a broadcast of the positive into the user's groups.
// Feature flags reduce the loop to the single-memory baseline or to either
// mechanism alone; group segmentation is rebuilt every E interactions.

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "agentsim/backend.hpp"
#include "agentsim/dataset.hpp"
#include "agentsim/groups.hpp"
#include "agentsim/memory.hpp"
#include "agentsim/templates.hpp"
#include "agentsim/trace.hpp"

namespace agentsim {

struct SimulationConfig {
    bool dual_layer = true;
    bool shared_groups = true;
    enum class GroupBy { Interest, History };
    GroupBy group_by = GroupBy::Interest;
    int epochs = 1;
    std::uint64_t seed = 7;
    bool fuse_every_interaction = true;
    size_t slot_char_budget = 2000;
    MemoryOptions memory;
    GroupingConfig grouping;

    void validate() const {
        if (group_by == GroupBy::History && !shared_groups)
            throw AgentError(ErrorCode::ConfigError,
                             "group_by=history requires shared_groups=true");
        if (epochs < 1) throw AgentError(ErrorCode::ConfigError, "epochs must be >= 1");
    }

    // memory layer a dataset domain maps to; single-layer runs collapse onto
    // one sentinel domain
    std::string memory_domain(const std::string& d) const { return dual_layer ? d : kAllDomains; }

    std::vector<std::string> memory_domains(const std::vector<std::string>& dataset_domains) const {
        if (dual_layer) return dataset_domains;
        return {kAllDomains};
    }

    std::string variant_name() const {
        if (!dual_layer && !shared_groups) return "base";
        if (dual_layer && !shared_groups) return "dual";
        if (!dual_layer && shared_groups) return "shared";
        return group_by == GroupBy::History ? "full-history" : "full";
    }
};

struct InferenceOutcome {
    std::string chosen;  // item id, one of {positive, negative}
    std::string explanation;
    bool correct = false;
    bool degraded = false;  // parse fallback fired (seeded coin)
};

// Finds the choice in a completion. Option labels are an uppercase
// standalone "A"/"B", the words "first"/"second", or the phrases
// "option a"/"option b"; the earliest label wins. Lowercase bare "a" is
// ignored (it is usually the article). Returns 0 = negative (first option),
// 1 = positive (second option), -1 = unparseable.
inline int parse_choice(const std::string& completion) {
    auto token_at = [](const std::string& text, const std::string& needle) -> size_t {
        size_t from = 0;
        while (true) {
            size_t pos = text.find(needle, from);
            if (pos == std::string::npos) return std::string::npos;
            bool left_ok = pos == 0 || !std::isalnum(static_cast<unsigned char>(text[pos - 1]));
            size_t end = pos + needle.size();
            bool right_ok = end >= text.size() || !std::isalnum(static_cast<unsigned char>(text[end]));
            if (left_ok && right_ok) return pos;
            from = pos + 1;
        }
    };
    const std::string lower = to_lower(completion);
    size_t neg = std::min({token_at(completion, "A"), token_at(lower, "first"),
                           token_at(lower, "option a")});
    size_t pos = std::min({token_at(completion, "B"), token_at(lower, "second"),
                           token_at(lower, "option b")});
    if (neg == std::string::npos && pos == std::string::npos) return -1;
    return pos < neg ? 1 : 0;
}

// Parses a ranking completion into a permutation of 1..n. Integers are read
// in order of appearance; duplicates are ignored; anything short of a full
// permutation is a parse failure.
inline std::vector<int> parse_ranking(const std::string& completion, int n) {
    std::vector<int> order;
    std::set<int> seen;
    size_t i = 0;
    while (i < completion.size()) {
        if (!std::isdigit(static_cast<unsigned char>(completion[i]))) {
            ++i;
            continue;
        }
        size_t j = i;
        while (j < completion.size() && std::isdigit(static_cast<unsigned char>(completion[j]))) ++j;
        int value = 0;
        auto res = std::from_chars(completion.data() + i, completion.data() + j, value);
        if (res.ec == std::errc{} && value >= 1 && value <= n && seen.insert(value).second)
            order.push_back(value);
        i = j;
    }
    if (static_cast<int>(order.size()) != n) return {};
    return order;
}

struct TrainerSinks {
    std::string trace_path;
    std::string report_dir;       // segmentation reports land here
    std::string checkpoint_path;  // rolling snapshot, written atomically
    std::int64_t checkpoint_every = 0;
    std::string config_digest;
    std::string dataset_digest;
};

struct StepOutcome {
    Interaction interaction;
    std::string negative;
    InferenceOutcome inference;
    bool skipped = false;  // no eligible negative
};

class Trainer {
public:
    static constexpr std::uint64_t kRetrySeedOffset = 1000003;

    Trainer(DatasetBundle bundle, SimulationConfig cfg, BackendPtr backend, TemplateSet templates,
            TrainerSinks sinks = {})
        : bundle_(std::move(bundle)),
          cfg_(cfg),
          backend_(std::move(backend)),
          templates_(std::move(templates)),
          sinks_(std::move(sinks)) {
        cfg_.validate();
        validate_choose_positive_ordering();

        store_ = MemoryStore(cfg_.memory_domains(bundle_.spec.domains), cfg_.memory);
        for (const auto& item : bundle_.catalog)
            store_.add_item(item.item_id, item.domain, item.title, item.category);
        for (const auto& uid : bundle_.all_users()) store_.add_user(uid);
        interacted_ = bundle_.interacted();

        std::vector<Interaction> pass = bundle_.train;
        std::stable_sort(pass.begin(), pass.end(),
                         [](const Interaction& a, const Interaction& b) { return a.timestamp < b.timestamp; });
        for (int e = 0; e < cfg_.epochs; ++e)
            schedule_.insert(schedule_.end(), pass.begin(), pass.end());

        for (const auto& item : bundle_.catalog) items_by_domain_[item.domain].push_back(item.item_id);
        for (auto& [d, ids] : items_by_domain_) std::sort(ids.begin(), ids.end());

        if (!sinks_.trace_path.empty()) {
            trace_ = TraceWriter(sinks_.trace_path);
            trace_.header(sinks_.config_digest, sinks_.dataset_digest, cfg_.seed,
                          backend_->identity(), bundle_.spec.domains);
        }
    }

    const MemoryStore& store() const { return store_; }
    MemoryStore& mutable_store() { return store_; }
    const std::vector<Interaction>& schedule() const { return schedule_; }
    std::int64_t processed() const { return processed_; }
    std::int64_t degraded_events() const { return degraded_; }
    std::int64_t segment_epoch() const { return segment_epoch_; }
    bool done() const { return processed_ >= static_cast<std::int64_t>(schedule_.size()); }

    DecisionContext decision_context(const std::string& user, const std::string& domain) const {
        return store_.decision_context(user, cfg_.memory_domain(domain));
    }

    std::string snapshot_blob() const { return store_.snapshot(processed_, segment_epoch_); }

    // Rebuilds derived state (interaction histories) and resumes mid-pass.
    void resume_from_snapshot(const std::string& blob) {
        auto restored = SnapshotRestore::parse(blob);
        if (restored.processed > static_cast<std::int64_t>(schedule_.size()))
            throw AgentError(ErrorCode::SnapshotError, "snapshot is ahead of the training schedule");
        if (restored.store.domains() != store_.domains())
            throw AgentError(ErrorCode::SnapshotError,
                             "snapshot domain set does not match the configured run");
        store_ = std::move(restored.store);
        processed_ = restored.processed;
        segment_epoch_ = restored.segment_epoch;
        histories_.clear();
        for (std::int64_t i = 0; i < processed_; ++i) {
            const auto& ix = schedule_[static_cast<size_t>(i)];
            histories_[ix.user].push_back(item_title(ix.item));
        }
    }

    StepOutcome step() {
        if (done()) throw AgentError(ErrorCode::InvalidArgument, "step() after schedule end");
        const std::int64_t idx = processed_;
        const Interaction ix = schedule_[static_cast<size_t>(idx)];
        StepOutcome out;
        out.interaction = ix;

        const std::string negative = sample_negative(ix, idx);
        if (negative.empty()) {
            out.skipped = true;
            ++degraded_;
            TraceRecord rec = base_record(idx, "sample_negative", ix);
            rec.note = "no-negative-available";
            emit(rec);
            histories_[ix.user].push_back(item_title(ix.item));
            advance(idx);
            return out;
        }
        out.negative = negative;
        {
            TraceRecord rec = base_record(idx, "sample_negative", ix);
            rec.negative = negative;
            emit(rec);
        }

        out.inference = infer(ix, negative, idx);
        update_user_separated(ix, negative, out.inference, idx);
        if (cfg_.dual_layer && cfg_.fuse_every_interaction) fuse(ix, idx);
        update_item_memories(ix, negative, idx);
        if (cfg_.shared_groups) broadcast(ix, idx);

        histories_[ix.user].push_back(item_title(ix.item));
        advance(idx);
        return out;
    }

    void run(std::int64_t max_steps = -1) {
        std::int64_t n = 0;
        while (!done()) {
            if (max_steps >= 0 && n >= max_steps) return;
            step();
            ++n;
        }
        finish();
    }

    // Writes the final snapshot digest into the trace footer. Safe to call
    // once after the schedule completes or after an early stop.
    std::string finish() {
        std::string blob = snapshot_blob();
        if (!finished_) {
            finished_ = true;
            if (trace_.active()) trace_.footer(processed_, sha256_hex(blob));
        }
        return blob;
    }

private:
    // ---- helpers -----------------------------------------------------------

    std::string clip(const std::string& text) const { return clip_memory(text, cfg_.slot_char_budget); }

    std::string item_title(const std::string& item_id) const {
        return store_.has_item(item_id) ? store_.item(item_id).title : item_id;
    }

    TraceRecord base_record(std::int64_t idx, const std::string& phase, const Interaction& ix) const {
        TraceRecord rec;
        rec.step = idx;
        rec.phase = phase;
        rec.user = ix.user;
        rec.item = ix.item;
        rec.domain = ix.domain;
        return rec;
    }

    void emit(const TraceRecord& rec) {
        if (trace_.active()) trace_.step(rec);
    }

    void advance(std::int64_t idx) {
        ++processed_;
        if (cfg_.shared_groups) {
            std::int64_t every = cfg_.grouping.resegment_every > 0
                                     ? cfg_.grouping.resegment_every
                                     : static_cast<std::int64_t>(bundle_.train.size());
            if (every > 0 && processed_ % every == 0) resegment(idx);
        }
        if (sinks_.checkpoint_every > 0 && !sinks_.checkpoint_path.empty() &&
            processed_ % sinks_.checkpoint_every == 0) {
            write_checkpoint();
        }
    }

    void write_checkpoint() const {
        namespace fs = std::filesystem;
        const std::string tmp = sinks_.checkpoint_path + ".tmp";
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) throw AgentError(ErrorCode::IoError, "cannot write checkpoint: " + tmp);
            out << store_.snapshot(processed_, segment_epoch_);
        }
        fs::rename(tmp, sinks_.checkpoint_path);
    }

    // The template must put the negative candidate strictly before the
    // positive one; verified once with sentinel slots.
    void validate_choose_positive_ordering() const {
        SlotMap probe{{"domain", "d"},       {"separated", "s"},          {"fused", "f"},
                      {"shared", "g"},       {"candidate_a", "\x01NEG\x01"}, {"candidate_b", "\x01POS\x01"}};
        std::string rendered = templates_.render("choose-positive", probe);
        size_t neg = rendered.find("\x01NEG\x01");
        size_t pos = rendered.find("\x01POS\x01");
        if (neg == std::string::npos || pos == std::string::npos || neg >= pos)
            throw AgentError(ErrorCode::ConfigError,
                             "choose-positive template must render the negative before the positive");
    }

    CompletionResponse guarded_complete(const PromptRequest& req, TraceCall& call) {
        std::string prompt = templates_.render(req.template_id, req.slots);
        call.kind = kind_name(req.kind);
        call.template_id = req.template_id;
        call.prompt_digest = sha256_hex(prompt);
        CompletionResponse resp = backend_->complete(req);
        call.response_digest = sha256_hex(resp.text);
        return resp;
    }

    // ---- phases ------------------------------------------------------------

    // Uniform seeded draw from same-domain items the user never interacted
    // with; empty string when the pool is empty.
    std::string sample_negative(const Interaction& ix, std::int64_t idx) {
        auto it = items_by_domain_.find(ix.domain);
        if (it == items_by_domain_.end()) return "";
        const auto& interacted = interacted_[ix.user];
        std::vector<std::string> eligible;
        for (const auto& id : it->second) {
            if (id == ix.item) continue;
            if (interacted.count(id)) continue;
            eligible.push_back(id);
        }
        if (eligible.empty()) return "";
        Rng rng(derive_seed(cfg_.seed, "negative", idx));
        return eligible[static_cast<size_t>(rng.index(eligible.size()))];
    }

    InferenceOutcome infer(const Interaction& ix, const std::string& negative, std::int64_t idx) {
        const auto ctx = store_.decision_context(ix.user, cfg_.memory_domain(ix.domain));
        const ItemAgent& pos_item = store_.item(ix.item);
        const ItemAgent& neg_item = store_.item(negative);

        PromptRequest req;
        req.kind = PromptKind::ChoosePositive;
        req.template_id = "choose-positive";
        req.slots = {{"domain", ix.domain},
                     {"separated", clip(ctx.separated)},
                     {"fused", clip(ctx.fused)},
                     {"shared", clip(ctx.shared_text())},
                     {"candidate_a", clip(neg_item.memory)},
                     {"candidate_b", clip(pos_item.memory)}};
        req.seed = derive_seed(cfg_.seed, "infer", idx);

        TraceRecord rec = base_record(idx, "infer", ix);
        rec.negative = negative;

        InferenceOutcome outcome;
        int choice = -1;
        for (int attempt = 0; attempt < 2 && choice < 0; ++attempt) {
            PromptRequest attempt_req = req;
            attempt_req.seed = req.seed + static_cast<std::uint64_t>(attempt) * kRetrySeedOffset;
            TraceCall call;
            std::string text;
            try {
                text = guarded_complete(attempt_req, call).text;
            } catch (const AgentError& e) {
                call.response_digest = sha256_hex(std::string("error:") + error_code_name(e.code()));
                call.degraded = true;
            }
            auto rendered = templates_.render_with_positions(attempt_req.template_id, attempt_req.slots);
            if (auto it = rendered.slot_at.find("candidate_a"); it != rendered.slot_at.end())
                call.neg_at = it->second;
            if (auto it = rendered.slot_at.find("candidate_b"); it != rendered.slot_at.end())
                call.pos_at = it->second;
            if (!text.empty()) {
                choice = parse_choice(text);
                if (choice >= 0) outcome.explanation = text;
            }
            if (choice < 0 && !call.degraded) call.degraded = true;
            if (choice >= 0) call.degraded = false;
            rec.calls.push_back(call);
        }
        if (choice < 0) {
            Rng rng(derive_seed(cfg_.seed, "coin", idx));
            choice = static_cast<int>(rng.index(2));
            outcome.degraded = true;
            ++degraded_;
        }
        outcome.chosen = choice == 1 ? ix.item : negative;
        outcome.correct = outcome.chosen == ix.item;
        rec.note = std::string(outcome.correct ? "correct" : "incorrect") +
                   (outcome.degraded ? "+coin" : "");
        emit(rec);
        return outcome;
    }

    static std::string outcome_text(const InferenceOutcome& outcome) {
        return outcome.correct
                   ? "The user chose the second option, which is the item they actually interacted with."
                   : "The user chose the first option, but they actually interacted with the second one.";
    }

    void update_user_separated(const Interaction& ix, const std::string& negative,
                               const InferenceOutcome& outcome, std::int64_t idx) {
        const std::string md = cfg_.memory_domain(ix.domain);
        PromptRequest req;
        req.kind = PromptKind::UpdateUserMemory;
        req.template_id = "update-user-memory";
        req.slots = {{"domain", ix.domain},
                     {"separated", clip(store_.user(ix.user).separated.at(md))},
                     {"positive", clip(store_.item(ix.item).memory)},
                     {"negative", clip(store_.item(negative).memory)},
                     {"outcome", outcome_text(outcome)}};
        req.seed = derive_seed(cfg_.seed, "update-user", idx);

        TraceRecord rec = base_record(idx, "update_separated", ix);
        rec.negative = negative;
        TraceCall call;
        try {
            std::string text = guarded_complete(req, call).text;
            store_.write_separated(ix.user, md, text);
            rec.writes.push_back(TraceWrite{"user", ix.user, "separated", md, sha256_hex(text)});
        } catch (const AgentError& e) {
            call.response_digest = sha256_hex(std::string("error:") + error_code_name(e.code()));
            call.degraded = true;
            rec.note = "skipped";
            ++degraded_;
        }
        rec.calls.push_back(call);
        emit(rec);
    }

    // Two-step fusion: extract target-domain-relevant preferences from each
    // other domain's separated memory, then integrate the extracts into the
    // target domain's fused memory. Domains with empty separated memory are
    // skipped without a call.
    void fuse(const Interaction& ix, std::int64_t idx) {
        const std::string d = ix.domain;
        const UserAgent& u = store_.user(ix.user);
        TraceRecord rec = base_record(idx, "fuse", ix);

        std::vector<std::string> extracts;
        for (const auto& other : bundle_.spec.domains) {
            if (other == d) continue;
            const std::string& source = u.separated.at(other);
            if (source.empty()) continue;
            PromptRequest req;
            req.kind = PromptKind::ExtractRelevantPreferences;
            req.template_id = "extract-relevant-preferences";
            req.slots = {{"source_domain", other},
                         {"target_domain", d},
                         {"source_memory", clip(source)}};
            req.seed = derive_seed(cfg_.seed, "extract-" + other, idx);
            TraceCall call;
            try {
                std::string text = guarded_complete(req, call).text;
                extracts.push_back("From " + other + ": " + text);
            } catch (const AgentError& e) {
                call.response_digest = sha256_hex(std::string("error:") + error_code_name(e.code()));
                call.degraded = true;
                ++degraded_;
            }
            rec.calls.push_back(call);
        }

        PromptRequest req;
        req.kind = PromptKind::FusePreferences;
        req.template_id = "fuse-preferences";
        req.slots = {{"domain", d},
                     {"separated", clip(u.separated.at(d))},
                     {"extracts", extracts.empty() ? "(none)" : clip(join(extracts, "\n"))},
                     {"fused", clip(u.fused.at(d))}};
        req.seed = derive_seed(cfg_.seed, "fuse", idx);
        TraceCall call;
        try {
            std::string text = guarded_complete(req, call).text;
            store_.write_fused(ix.user, d, text);
            rec.writes.push_back(TraceWrite{"user", ix.user, "fused", d, sha256_hex(text)});
        } catch (const AgentError& e) {
            call.response_digest = sha256_hex(std::string("error:") + error_code_name(e.code()));
            call.degraded = true;
            rec.note = "fuse-skipped";
            ++degraded_;
        }
        rec.calls.push_back(call);
        emit(rec);
    }

    void update_item_memories(const Interaction& ix, const std::string& negative, std::int64_t idx) {
        const std::string md = cfg_.memory_domain(ix.domain);
        const UserAgent& u = store_.user(ix.user);
        const std::string user_memory = cfg_.dual_layer ? u.fused.at(md) : u.separated.at(md);

        TraceRecord rec = base_record(idx, "update_items", ix);
        rec.negative = negative;
        struct Target {
            std::string id;
            const char* stance;
            std::int64_t salt;
        };
        for (const auto& target : {Target{ix.item, "appeals to", 0}, Target{negative, "does not appeal to", 1}}) {
            PromptRequest req;
            req.kind = PromptKind::UpdateItemMemory;
            req.template_id = "update-item-memory";
            req.slots = {{"domain", ix.domain},
                         {"item_memory", clip(store_.item(target.id).memory)},
                         {"user_memory", clip(user_memory)},
                         {"stance", target.stance}};
            req.seed = derive_seed(cfg_.seed, "item", idx * 2 + target.salt);
            TraceCall call;
            try {
                std::string text = guarded_complete(req, call).text;
                store_.write_item_memory(target.id, text);
                rec.writes.push_back(
                    TraceWrite{"item", target.id, "memory", store_.item(target.id).domain, sha256_hex(text)});
            } catch (const AgentError& e) {
                call.response_digest = sha256_hex(std::string("error:") + error_code_name(e.code()));
                call.degraded = true;
                ++degraded_;
            }
            rec.calls.push_back(call);
        }
        emit(rec);
    }

    // Positive interactions only; negatives never enter shared memories.
    void broadcast(const Interaction& ix, std::int64_t idx) {
        TraceRecord rec = base_record(idx, "broadcast", ix);
        SharedEntry entry;
        entry.user = ix.user;
        entry.item_summary = store_.summarize_item(store_.item(ix.item));
        entry.domain = ix.domain;
        entry.timestamp = ix.timestamp;
        nlohmann::json ej{{"user", entry.user},
                          {"item_summary", entry.item_summary},
                          {"domain", entry.domain},
                          {"timestamp", entry.timestamp}};
        const std::string digest = sha256_hex(ej.dump());
        for (const auto& gid : store_.broadcast(ix.user, entry))
            rec.writes.push_back(TraceWrite{"group", gid, "shared", ix.domain, digest});
        emit(rec);
    }

    void resegment(std::int64_t after_step) {
        const std::int64_t epoch = segment_epoch_ + 1;
        try {
            SegmentationOutcome outcome;
            if (cfg_.group_by == SimulationConfig::GroupBy::Interest) {
                auto tag_source = [this](const UserAgent& u) {
                    if (cfg_.dual_layer) {
                        std::vector<std::string> parts;
                        for (const auto& d : bundle_.spec.domains) {
                            const std::string& f = u.fused.at(d);
                            if (!f.empty()) parts.push_back(f);
                        }
                        return join(parts, "\n");
                    }
                    return u.separated.at(kAllDomains);
                };
                outcome = segment_by_interest(store_, *backend_, cfg_.grouping, cfg_.seed, epoch,
                                              tag_source);
            } else {
                std::map<std::string, std::string> history_texts;
                for (const auto& [uid, titles] : histories_) history_texts[uid] = join(titles, "; ");
                outcome = segment_by_history(store_, *backend_, cfg_.grouping, cfg_.seed, epoch,
                                             history_texts);
            }
            apply_segmentation(store_, outcome);
            segment_epoch_ = epoch;
            if (!sinks_.report_dir.empty()) {
                namespace fs = std::filesystem;
                fs::create_directories(sinks_.report_dir);
                write_segmentation_report(
                    (fs::path(sinks_.report_dir) / ("segmentation-e" + std::to_string(epoch) + ".txt"))
                        .string(),
                    outcome);
            }
            if (trace_.active())
                trace_.segment(after_step, epoch, store_.groups().size(), "ok");
        } catch (const AgentError& e) {
            ++degraded_;
            if (trace_.active())
                trace_.segment(after_step, epoch, store_.groups().size(),
                               std::string("retained: ") + e.what());
        }
    }

    DatasetBundle bundle_;
    SimulationConfig cfg_;
    BackendPtr backend_;
    TemplateSet templates_;
    TrainerSinks sinks_;
    MemoryStore store_;
    TraceWriter trace_;
    std::vector<Interaction> schedule_;
    std::map<std::string, std::set<std::string>> interacted_;
    std::map<std::string, std::vector<std::string>> items_by_domain_;
    std::map<std::string, std::vector<std::string>> histories_;
    std::int64_t processed_ = 0;
    std::int64_t segment_epoch_ = 0;
    std::int64_t degraded_ = 0;
    bool finished_ = false;
};

}  // namespace agentsim
