// agentsim command line: prepare datasets, train agents, evaluate rankers,
// replay traces, and render report tables. Exit codes: 0 success, 1 degraded
// (fallbacks fired or replay mismatch), 2 user/config error, 3 environment
// error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "agentsim/backend.hpp"
#include "agentsim/backend_factory.hpp"
#include "agentsim/config.hpp"
#include "agentsim/dataset.hpp"
#include "agentsim/evaluation.hpp"
#include "agentsim/manifest.hpp"
#include "agentsim/simulation.hpp"
#include "agentsim/trace.hpp"

namespace fs = std::filesystem;
using namespace agentsim;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitDegraded = 1;
constexpr int kExitUserError = 2;
constexpr int kExitEnvError = 3;

int exit_code_for(const AgentError& e) {
    switch (e.code()) {
        case ErrorCode::BackendUnavailable:
        case ErrorCode::MalformedResponse:
            return kExitEnvError;
        default:
            return kExitUserError;
    }
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw AgentError(ErrorCode::IoError, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw AgentError(ErrorCode::IoError, "cannot write " + path);
    out << content;
}

TemplateSet load_templates(const AppConfig& cfg) {
    if (cfg.templates_path.empty())
        throw AgentError(ErrorCode::ConfigError, "config is missing the templates path");
    return TemplateSet::load(cfg.templates_path);
}

struct TrainOverrides {
    std::string bundle_dir;
    std::string templates_path;
    std::string backend_mode;
    std::int64_t seed = -1;
    int dual_layer = -1;     // -1 keep, 0 off, 1 on
    int shared_groups = -1;
    std::string group_by;
};

AppConfig load_config_with_overrides(const std::string& path, const TrainOverrides& ov) {
    AppConfig cfg = load_app_config(path);
    if (!ov.bundle_dir.empty()) cfg.bundle_dir = ov.bundle_dir;
    if (!ov.templates_path.empty()) cfg.templates_path = ov.templates_path;
    if (!ov.backend_mode.empty()) cfg.backend.mode = ov.backend_mode;
    if (ov.seed >= 0) cfg.sim.seed = static_cast<std::uint64_t>(ov.seed);
    if (ov.dual_layer >= 0) cfg.sim.dual_layer = ov.dual_layer == 1;
    if (ov.shared_groups >= 0) cfg.sim.shared_groups = ov.shared_groups == 1;
    if (!ov.group_by.empty()) {
        if (ov.group_by == "interest") {
            cfg.sim.group_by = SimulationConfig::GroupBy::Interest;
        } else if (ov.group_by == "history") {
            cfg.sim.group_by = SimulationConfig::GroupBy::History;
        } else {
            throw AgentError(ErrorCode::ConfigError, "group_by must be interest or history");
        }
    }
    cfg.sim.validate();
    if (cfg.bundle_dir.empty())
        throw AgentError(ErrorCode::ConfigError, "config is missing paths.bundle");
    // reflect overrides in the digest-bearing raw config
    cfg.raw["simulation"]["dual_layer"] = cfg.sim.dual_layer;
    cfg.raw["simulation"]["shared_groups"] = cfg.sim.shared_groups;
    cfg.raw["simulation"]["group_by"] =
        cfg.sim.group_by == SimulationConfig::GroupBy::History ? "history" : "interest";
    cfg.raw["simulation"]["seed"] = cfg.sim.seed;
    cfg.raw["backend"]["mode"] = cfg.backend.mode;
    return cfg;
}

// ---- subcommands ------------------------------------------------------------

int cmd_prepare(const std::string& spec_path, const std::string& input_path,
                const std::string& out_dir, bool force) {
    if (fs::exists(fs::path(out_dir) / "spec.json") && !force) {
        std::cerr << "refusing to overwrite existing bundle at " << out_dir
                  << " (use --force)\n";
        return kExitUserError;
    }
    DatasetSpec spec = DatasetSpec::load(spec_path);
    IngestResult ingested = ingest(input_path);
    FilterResult filtered = filter_pipeline(ingested.reviews, spec);
    SplitResult parts = split(filtered.interactions, spec.split_ratio, spec.per_user_split);
    if (parts.degenerate)
        std::cerr << "warning: split-degenerate (fewer than 10 interactions)\n";

    DatasetBundle bundle;
    bundle.spec = spec;
    bundle.train = parts.train;
    bundle.valid = parts.valid;
    bundle.test = parts.test;
    bundle.catalog = filtered.catalog;
    save_bundle(bundle, out_dir);

    std::cout << "prepared bundle " << spec.name << " at " << out_dir << "\n"
              << "  reviews: " << ingested.reviews.size() << " parsed, " << ingested.skipped
              << " skipped\n"
              << "  eligible users: " << filtered.eligible_users << ", sampled "
              << filtered.sampled_users.size() << "\n"
              << "  interactions: " << filtered.interactions.size() << " -> train "
              << parts.train.size() << " / valid " << parts.valid.size() << " / test "
              << parts.test.size() << "\n"
              << "  items: " << filtered.catalog.size() << "\n"
              << "  digest: " << bundle_digest(out_dir) << "\n";
    return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& out_dir, const TrainOverrides& ov,
              const std::string& resume_path, std::int64_t max_interactions,
              std::int64_t checkpoint_every) {
    AppConfig cfg = load_config_with_overrides(config_path, ov);
    TemplateSet templates = load_templates(cfg);
    BackendPtr backend = make_backend(cfg, templates);
    DatasetBundle bundle = load_bundle(cfg.bundle_dir);

    fs::create_directories(out_dir);
    TrainerSinks sinks;
    sinks.trace_path = (fs::path(out_dir) / "trace.jsonl").string();
    sinks.report_dir = out_dir;
    sinks.checkpoint_path = (fs::path(out_dir) / "checkpoint.txt").string();
    sinks.checkpoint_every = checkpoint_every;
    sinks.config_digest = cfg.digest();
    sinks.dataset_digest = bundle_digest(cfg.bundle_dir);

    RunManifest manifest;
    manifest.config_digest = sinks.config_digest;
    manifest.dataset_digest = sinks.dataset_digest;
    manifest.seed = cfg.sim.seed;
    manifest.backend_identity = backend->identity();
    manifest.started = unix_now();

    Trainer trainer(bundle, cfg.sim, backend, templates, sinks);
    if (!resume_path.empty()) trainer.resume_from_snapshot(read_file(resume_path));

    const bool partial = max_interactions >= 0;
    trainer.run(partial ? max_interactions : -1);

    if (partial && !trainer.done()) {
        write_file(sinks.checkpoint_path, trainer.snapshot_blob());
        std::cout << "stopped after " << trainer.processed() << " interactions; checkpoint at "
                  << sinks.checkpoint_path << "\n";
        return trainer.degraded_events() > 0 ? kExitDegraded : kExitOk;
    }

    std::string snapshot = trainer.finish();
    const std::string snapshot_path = (fs::path(out_dir) / "snapshot.txt").string();
    write_file(snapshot_path, snapshot);

    manifest.finished = unix_now();
    manifest.artifacts = {{"snapshot", snapshot_path},
                          {"trace", sinks.trace_path},
                          {"bundle", cfg.bundle_dir}};
    write_manifest_atomic(manifest, (fs::path(out_dir) / "manifest.json").string());

    std::cout << "trained variant " << cfg.sim.variant_name() << ": " << trainer.processed()
              << " interactions, " << trainer.degraded_events() << " degraded events\n"
              << "  snapshot digest: " << sha256_hex(snapshot) << "\n"
              << "  manifest digest: " << manifest.digest() << "\n";
    return trainer.degraded_events() > 0 ? kExitDegraded : kExitOk;
}

int cmd_eval(const std::string& config_path, const std::string& snapshot_path,
             const std::string& out_dir, int runs_override,
             const std::vector<std::string>& methods_override) {
    AppConfig cfg = load_app_config(config_path);
    if (cfg.bundle_dir.empty())
        throw AgentError(ErrorCode::ConfigError, "config is missing paths.bundle");
    TemplateSet templates = load_templates(cfg);
    BackendPtr backend = make_backend(cfg, templates);
    DatasetBundle bundle = load_bundle(cfg.bundle_dir);
    auto restored = SnapshotRestore::parse(read_file(snapshot_path));

    EvalConfig eval_cfg = cfg.eval;
    if (runs_override > 0) eval_cfg.runs = runs_override;
    if (!methods_override.empty()) eval_cfg.methods = methods_override;

    Evaluator evaluator(bundle, restored.store, cfg.sim, backend);
    std::vector<MetricReport> reports;
    int degraded = 0;
    for (const auto& method : eval_cfg.methods) {
        MetricReport r = evaluator.evaluate(method, eval_cfg);
        degraded += r.degraded;
        reports.push_back(std::move(r));
    }

    fs::create_directories(out_dir);
    write_eval_reports(reports, (fs::path(out_dir) / "eval_report.jsonl").string(),
                       (fs::path(out_dir) / "eval_report.txt").string());
    std::cout << render_eval_table(reports);
    return degraded > 0 ? kExitDegraded : kExitOk;
}

int cmd_replay(const std::string& trace_path, const std::string& config_path,
               const std::string& out_dir) {
    TraceFile original = read_trace(trace_path);
    AppConfig cfg = load_app_config(config_path);
    if (cfg.bundle_dir.empty())
        throw AgentError(ErrorCode::ConfigError, "config is missing paths.bundle");

    const std::string recorded_config = original.header.value("config_digest", "");
    if (!recorded_config.empty() && recorded_config != cfg.digest()) {
        std::cerr << "refusing replay: config digest mismatch (trace " << recorded_config
                  << ", config " << cfg.digest() << ")\n";
        return kExitUserError;
    }
    const std::string dataset_digest = bundle_digest(cfg.bundle_dir);
    const std::string recorded_dataset = original.header.value("dataset_digest", "");
    if (!recorded_dataset.empty() && recorded_dataset != dataset_digest) {
        std::cerr << "refusing replay: dataset digest mismatch\n";
        return kExitUserError;
    }

    TemplateSet templates = load_templates(cfg);
    BackendPtr backend = make_backend(cfg, templates);
    DatasetBundle bundle = load_bundle(cfg.bundle_dir);

    fs::create_directories(out_dir);
    TrainerSinks sinks;
    sinks.trace_path = (fs::path(out_dir) / "replay_trace.jsonl").string();
    sinks.config_digest = cfg.digest();
    sinks.dataset_digest = dataset_digest;

    Trainer trainer(bundle, cfg.sim, backend, templates, sinks);
    trainer.run();
    std::string snapshot = trainer.snapshot_blob();
    write_file((fs::path(out_dir) / "replay_snapshot.txt").string(), snapshot);

    const std::string recomputed = sha256_hex(snapshot);
    const std::string recorded = original.footer.value("snapshot_digest", "");
    TraceFile replayed = read_trace(sinks.trace_path);
    bool steps_match = original.records.size() == replayed.records.size();
    if (steps_match) {
        for (size_t i = 0; i < original.records.size(); ++i) {
            if (original.records[i] != replayed.records[i]) {
                steps_match = false;
                break;
            }
        }
    }
    if (recomputed == recorded && steps_match) {
        std::cout << "replay verified: " << replayed.records.size()
                  << " records, snapshot digest " << recomputed << "\n";
        return kExitOk;
    }
    std::cerr << "replay mismatch: snapshot " << recomputed << " vs recorded " << recorded
              << (steps_match ? "" : " (step records differ)") << "\n";
    return kExitDegraded;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out_path) {
    std::vector<MetricReport> reports;
    for (const auto& path : inputs) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw AgentError(ErrorCode::IoError, "cannot open report: " + path);
        std::string line;
        while (std::getline(in, line)) {
            if (trim(line).empty()) continue;
            nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded() || j.value("type", "") != "summary") continue;
            MetricReport r;
            r.method = j.value("method", "?");
            r.dataset = j.value("dataset", "?");
            r.runs = j.value("runs", 0);
            r.mrr_mean = j.value("mrr_mean", 0.0);
            r.mrr_std = j.value("mrr_std", 0.0);
            r.ndcg_mean = j.value("ndcg_mean", 0.0);
            r.ndcg_std = j.value("ndcg_std", 0.0);
            reports.push_back(std::move(r));
        }
    }
    if (reports.empty()) {
        std::cerr << "no summary records found\n";
        return kExitUserError;
    }
    std::string table = render_eval_table(reports);
    if (out_path.empty()) {
        std::cout << table;
    } else {
        write_file(out_path, table);
        std::cout << "wrote " << out_path << "\n";
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"agent-based user behavior simulator for cross-domain recommendation"};
    app.require_subcommand(1);

    // prepare
    auto* prepare = app.add_subcommand("prepare", "build a dataset bundle from raw reviews");
    std::string spec_path, input_path, out_dir;
    bool force = false;
    prepare->add_option("--spec", spec_path, "dataset spec JSON")->required();
    prepare->add_option("--input", input_path, "raw review file (key=value lines)")->required();
    prepare->add_option("--out", out_dir, "bundle output directory")->required();
    prepare->add_flag("--force", force, "overwrite an existing bundle");

    // train
    auto* train = app.add_subcommand("train", "run the training loop");
    std::string train_config, train_out = "run", resume_path;
    TrainOverrides ov;
    std::int64_t max_interactions = -1, checkpoint_every = 25;
    train->add_option("--config", train_config, "run config JSON")->required();
    train->add_option("--out", train_out, "output directory");
    train->add_option("--bundle", ov.bundle_dir, "dataset bundle override");
    train->add_option("--templates", ov.templates_path, "template file override");
    train->add_option("--backend", ov.backend_mode, "backend mode override (scripted|replay|live)");
    train->add_option("--seed", ov.seed, "seed override");
    train->add_option("--dual-layer", ov.dual_layer, "0/1 override for the dual-layer memory");
    train->add_option("--shared-groups", ov.shared_groups, "0/1 override for group-shared memory");
    train->add_option("--group-by", ov.group_by, "interest|history");
    train->add_option("--resume", resume_path, "resume from a snapshot file");
    train->add_option("--max-interactions", max_interactions,
                      "stop after N interactions (leaves a checkpoint)");
    train->add_option("--checkpoint-every", checkpoint_every, "periodic checkpoint interval");

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate ranking methods against a snapshot");
    std::string eval_config, eval_snapshot, eval_out = "eval";
    int runs_override = 0;
    std::vector<std::string> methods_override;
    eval->add_option("--config", eval_config, "run config JSON")->required();
    eval->add_option("--snapshot", eval_snapshot, "trained snapshot file")->required();
    eval->add_option("--out", eval_out, "output directory");
    eval->add_option("--runs", runs_override, "number of evaluation runs");
    eval->add_option("--methods", methods_override, "methods (agent pop seqsim llmrank)");

    // replay
    auto* replay = app.add_subcommand("replay", "re-execute a trace and verify digests");
    std::string replay_trace, replay_config, replay_out = "replay";
    replay->add_option("--trace", replay_trace, "trace file")->required();
    replay->add_option("--config", replay_config, "run config JSON")->required();
    replay->add_option("--out", replay_out, "output directory");

    // report
    auto* report = app.add_subcommand("report", "render a table from eval report files");
    std::vector<std::string> report_inputs;
    std::string report_out;
    report->add_option("--input", report_inputs, "eval_report.jsonl files")->required();
    report->add_option("--out", report_out, "write the table here instead of stdout");

    CLI11_PARSE(app, argc, argv);

    try {
        if (prepare->parsed()) return cmd_prepare(spec_path, input_path, out_dir, force);
        if (train->parsed())
            return cmd_train(train_config, train_out, ov, resume_path, max_interactions,
                             checkpoint_every);
        if (eval->parsed())
            return cmd_eval(eval_config, eval_snapshot, eval_out, runs_override, methods_override);
        if (replay->parsed()) return cmd_replay(replay_trace, replay_config, replay_out);
        if (report->parsed()) return cmd_report(report_inputs, report_out);
    } catch (const AgentError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUserError;
    }
    return kExitUserError;
}
