// Command-line entry point wiring corpora, checkpoints, profiles, and
// simulations. Every run directory receives a resolved_config.json echo so
// deterministic stages can be reproduced byte for byte.

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "elm/checkpoint.hpp"
#include "elm/corpus.hpp"
#include "elm/distill.hpp"
#include "elm/errors.hpp"
#include "elm/model.hpp"
#include "elm/pruning.hpp"
#include "elm/retrieval.hpp"
#include "elm/scheduler.hpp"
#include "elm/simulator.hpp"

#ifndef ELM_GIT_VERSION
#define ELM_GIT_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace elm;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitContract = 2;
constexpr int kExitIo = 3;

struct CommonOpts {
    std::string out_dir = "run";
    std::string config_file;
    std::uint64_t seed = 7;
};

std::string load_corpus(const std::string& spec) {
    if (spec.rfind("builtin", 0) == 0) {
        std::uint64_t seed = 41;
        const auto colon = spec.find(':');
        if (colon != std::string::npos) seed = std::stoull(spec.substr(colon + 1));
        return fixture_corpus(seed);
    }
    return read_text_file(spec);
}

void write_resolved_config(const std::string& out_dir, const std::string& subcommand, const json& cfg) {
    fs::create_directories(out_dir);
    json echo;
    echo["subcommand"] = subcommand;
    echo["version"] = ELM_GIT_VERSION;
    echo["config"] = cfg;
    write_text_file(out_dir + "/resolved_config.json", echo.dump(2) + "\n");
}

// Config-file defaults: flag values win over file values.
json merge_config_file(const std::string& path, const json& flags) {
    if (path.empty()) return flags;
    json file = json::parse(read_text_file(path));
    json merged = file;
    for (auto it = flags.begin(); it != flags.end(); ++it) merged[it.key()] = it.value();
    return merged;
}

ModelConfig desk_model_config() {
    ModelConfig cfg;
    cfg.n_layers = 4;
    cfg.hidden_dim = 64;
    cfg.n_heads = 8;
    cfg.head_dim = 8;
    cfg.ffn_dim = 256;
    cfg.vocab_size = 256;
    cfg.max_seq_len = 64;
    cfg.relation_heads = 8;
    cfg.relation_dim = 8;
    return cfg;
}

std::vector<int> parse_int_list(const std::string& csv) {
    std::vector<int> out;
    std::string cur;
    for (char c : csv + ",") {
        if (c == ',') {
            if (!cur.empty()) out.push_back(std::stoi(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    return out;
}

struct RetrievalTask {
    RetrievalCorpus corpus;
    std::vector<RetrievalExample> examples;  // train split
};

RetrievalTask build_retrieval_task(const ElasticModel& model, std::uint64_t corpus_seed,
                                   int n_passages, int query_len, int hard_negatives,
                                   bool localized, int k_top, std::uint64_t mine_seed) {
    RetrievalTask task;
    task.corpus = make_retrieval_corpus(corpus_seed, n_passages);
    const int passage_len = std::min(model.config().max_seq_len, 48);
    std::optional<PassageIndex> index;
    if (localized) index = build_index(model, task.corpus.passages, passage_len);
    for (int i = 0; i < n_passages; ++i) {
        RetrievalExample ex;
        ex.query_tokens = tokenize(task.corpus.train_queries[static_cast<std::size_t>(i)], query_len);
        ex.positive_id = i;
        if (hard_negatives > 0) {
            if (localized) {
                auto q = encode_query(model, task.corpus.train_queries[static_cast<std::size_t>(i)],
                                      model.submap().largest().level_label, query_len);
                RankedList run;
                run.ranked_ids = rank_passages(*index, q);
                run.positive_id = i;
                ex.negative_ids = mine_localized_negatives(run, k_top, hard_negatives,
                                                           mine_seed + static_cast<std::uint64_t>(i));
            } else {
                ex.negative_ids = mine_hard_negatives_lexical(
                    task.corpus.train_queries[static_cast<std::size_t>(i)], i, task.corpus.passages,
                    hard_negatives);
            }
        }
        task.examples.push_back(std::move(ex));
    }
    return task;
}

std::map<int, double> proxies_from_metrics_file(const std::string& path, const std::string& metric) {
    json j = json::parse(read_text_file(path));
    std::map<int, double> out;
    for (auto it = j.begin(); it != j.end(); ++it) {
        out[std::stoi(it.key())] = it.value().at(metric).get<double>();
    }
    return out;
}

int cmd_pretrain_teacher(const json& cfg) {
    const std::string out_dir = cfg.at("out_dir").get<std::string>();
    ModelConfig mc = desk_model_config();
    Submap full;
    full.entries = {SubStructure::full(100, mc)};
    ElasticModel teacher(mc, full, cfg.at("seed").get<std::uint64_t>());

    DistillConfig dc;
    dc.batch_size = cfg.at("batch_size").get<int>();
    dc.learning_rate = cfg.at("lr").get<double>();
    dc.max_steps = cfg.at("steps").get<int>();
    dc.epochs = cfg.at("epochs").get<int>();
    dc.seq_len = mc.max_seq_len;
    dc.seed = cfg.at("seed").get<std::uint64_t>();
    dc.warmup_proportion = 0.01;

    const std::string corpus = load_corpus(cfg.at("corpus").get<std::string>());
    TrainingTrace trace = pretrain_teacher(teacher, corpus, dc);
    Checkpoint::save(out_dir + "/teacher.ckpt", teacher);
    write_text_file(out_dir + "/pretrain_trace.jsonl", trace.to_jsonl());
    json summary{{"heldout_before", trace.heldout_before_pretrain},
                 {"heldout_after", trace.heldout_after_pretrain}};
    write_text_file(out_dir + "/pretrain_summary.json", summary.dump(2) + "\n");
    std::cout << "teacher held-out mlm loss: " << trace.heldout_before_pretrain << " -> "
              << trace.heldout_after_pretrain << "\n";
    return kExitOk;
}

int cmd_score(const json& cfg) {
    const std::string out_dir = cfg.at("out_dir").get<std::string>();
    ElasticModel teacher = Checkpoint::load(cfg.at("checkpoint").get<std::string>());
    const std::string corpus = load_corpus(cfg.at("corpus").get<std::string>());

    const int n_batches = cfg.at("batches").get<int>();
    const int batch_size = cfg.at("batch_size").get<int>();
    MlmSampler sampler(corpus, teacher.config().max_seq_len, 0.15, cfg.at("seed").get<std::uint64_t>());
    std::vector<std::vector<MlmExample>> batches;
    for (int b = 0; b < n_batches; ++b) {
        std::vector<MlmExample> batch;
        for (int i = 0; i < batch_size; ++i) batch.push_back(sampler.next());
        batches.push_back(std::move(batch));
    }
    ImportanceScores raw = record_scores(teacher, batches);
    ImportanceScores norm = normalize_scores(raw);
    for (const auto& w : norm.warnings) std::cerr << "warning: " << w << "\n";

    const auto levels = parse_int_list(cfg.at("levels").get<std::string>());
    std::vector<std::string> clamp_report;
    Submap derived = derive_submap(norm, levels, &clamp_report);
    for (const auto& w : clamp_report) std::cerr << "warning: " << w << "\n";

    Checkpoint::Extras extras;
    extras.scores = norm;
    extras.derived_submap = derived;
    Checkpoint::save(out_dir + "/teacher_scored.ckpt", teacher, extras);
    write_text_file(out_dir + "/scores.txt", scores_sidecar_text(norm));
    std::cout << "scored " << n_batches << " batches; levels:";
    for (int l : levels) std::cout << ' ' << l;
    std::cout << "\n";
    return kExitOk;
}

int cmd_distill(const json& cfg) {
    const std::string out_dir = cfg.at("out_dir").get<std::string>();
    Checkpoint::Extras extras;
    ElasticModel teacher = Checkpoint::load(cfg.at("teacher").get<std::string>(), std::nullopt, &extras);
    if (!extras.derived_submap.has_value()) {
        throw ContractError("teacher checkpoint has no derived submap; run `score` first");
    }
    ElasticModel student = build_student(teacher, *extras.derived_submap);

    DistillConfig dc;
    dc.batch_size = cfg.at("batch_size").get<int>();
    dc.learning_rate = cfg.at("lr").get<double>();
    dc.max_steps = cfg.at("steps").get<int>();
    dc.epochs = cfg.at("epochs").get<int>();
    dc.seq_len = teacher.config().max_seq_len;
    dc.seed = cfg.at("seed").get<std::uint64_t>();
    dc.warmup_proportion = 0.01;

    const std::string corpus = load_corpus(cfg.at("corpus").get<std::string>());
    TrainingTrace trace = distill(teacher, student, corpus, dc);
    Checkpoint::save(out_dir + "/student.ckpt", student);
    write_text_file(out_dir + "/distill_trace.jsonl", trace.to_jsonl());
    json held;
    for (const auto& [level, before] : trace.initial_heldout) {
        held[std::to_string(level)] = json{{"before", before}, {"after", trace.final_heldout.at(level)}};
        std::cout << "level " << level << ": held-out align " << before << " -> "
                  << trace.final_heldout.at(level) << "\n";
    }
    write_text_file(out_dir + "/distill_summary.json", held.dump(2) + "\n");
    return kExitOk;
}

int cmd_finetune(const json& cfg) {
    const std::string out_dir = cfg.at("out_dir").get<std::string>();
    const std::string objective = cfg.at("objective").get<std::string>();
    ElasticModel student = Checkpoint::load(cfg.at("checkpoint").get<std::string>());

    DistillConfig dc;
    dc.batch_size = cfg.at("batch_size").get<int>();
    dc.learning_rate = cfg.at("lr").get<double>();
    dc.max_steps = cfg.at("steps").get<int>();
    dc.epochs = cfg.at("epochs").get<int>();
    dc.seed = cfg.at("seed").get<std::uint64_t>();
    dc.warmup_proportion = 0.1;

    const std::uint64_t corpus_seed = cfg.at("corpus_seed").get<std::uint64_t>();
    const int n_passages = cfg.at("passages").get<int>();
    const int query_len = std::min(student.config().max_seq_len, 24);
    const int passage_len = std::min(student.config().max_seq_len, 48);
    const int negatives = cfg.at("hard_negatives").get<int>();

    TrainingTrace trace;
    if (objective == "dense") {
        RetrievalTask task = build_retrieval_task(student, corpus_seed, n_passages, query_len,
                                                  negatives, /*localized=*/false, 0, dc.seed);
        auto loss = dense_retrieval_objective(task.examples, task.corpus.passages, passage_len);
        trace = finetune(student, loss, static_cast<int>(task.examples.size()), dc);
        Checkpoint::save(out_dir + "/student_dense.ckpt", student);
    } else if (objective == "rerank") {
        RetrievalTask task = build_retrieval_task(student, corpus_seed, n_passages, query_len,
                                                  negatives, /*localized=*/true,
                                                  cfg.at("k_top").get<int>(), dc.seed);
        auto loss = rerank_objective(task.examples, task.corpus.train_queries, task.corpus.passages,
                                     student.config().max_seq_len);
        trace = finetune(student, loss, static_cast<int>(task.examples.size()), dc);
        Checkpoint::save(out_dir + "/student_rerank.ckpt", student);
    } else if (objective == "classify") {
        ClassificationData data = make_classification_data(corpus_seed, n_passages);
        auto loss = classification_objective(data, std::min(student.config().max_seq_len, 32));
        trace = finetune(student, loss, static_cast<int>(data.texts.size()), dc);
        Checkpoint::save(out_dir + "/student_classify.ckpt", student);
    } else {
        throw ContractError("unknown objective: " + objective);
    }
    write_text_file(out_dir + "/finetune_trace.jsonl", trace.to_jsonl());
    std::cout << "finetuned objective=" << objective << " steps=" << dc.max_steps << "\n";
    return kExitOk;
}

int cmd_eval_retrieval(const json& cfg) {
    const std::string out_dir = cfg.at("out_dir").get<std::string>();
    ElasticModel model = Checkpoint::load(cfg.at("checkpoint").get<std::string>());
    const std::uint64_t corpus_seed = cfg.at("corpus_seed").get<std::uint64_t>();
    const int n_passages = cfg.at("passages").get<int>();
    const int query_len = std::min(model.config().max_seq_len, 24);
    const int passage_len = std::min(model.config().max_seq_len, 48);

    RetrievalCorpus corpus = make_retrieval_corpus(corpus_seed, n_passages);
    PassageIndex index = build_index(model, corpus.passages, passage_len);
    save_index(out_dir + "/passages.idx", index);

    std::vector<int> positives(corpus.eval_queries.size());
    for (std::size_t i = 0; i < positives.size(); ++i) positives[i] = static_cast<int>(i);
    const auto k_list = parse_int_list(cfg.at("k_list").get<std::string>());
    auto metrics = evaluate_retrieval(model, index, corpus.eval_queries, positives,
                                      model.submap().levels(), k_list, query_len);
    json out;
    for (const auto& [level, m] : metrics) {
        json lm;
        for (int k : k_list) {
            lm["recall@" + std::to_string(k)] = m.recall_at.at(k);
            lm["mrr@" + std::to_string(k)] = m.mrr_at.at(k);
        }
        out[std::to_string(level)] = lm;
        std::cout << "level " << level;
        for (int k : k_list) std::cout << "  recall@" << k << "=" << m.recall_at.at(k);
        std::cout << "\n";
    }
    write_text_file(out_dir + "/metrics.json", out.dump(2) + "\n");
    return kExitOk;
}

int cmd_calibrate(const json& cfg) {
    const std::string out_dir = cfg.at("out_dir").get<std::string>();
    ElasticModel model = Checkpoint::load(cfg.at("checkpoint").get<std::string>());
    LatencyProfile profile =
        calibrate(model, cfg.at("trials").get<int>(), cfg.at("length").get<int>());
    for (const auto& w : profile.warnings) std::cerr << "warning: " << w << "\n";
    const std::string metrics_path = cfg.at("metrics").get<std::string>();
    if (!metrics_path.empty()) {
        attach_proxies(profile, proxies_from_metrics_file(metrics_path, cfg.at("metric").get<std::string>()));
    }
    write_text_file(out_dir + "/profile.txt", profile.to_text());
    for (const auto& lt : profile.levels) {
        std::cout << "level " << lt.level << ": t_p=" << lt.t_p_ms << " ms proxy=" << lt.proxy << "\n";
    }
    return kExitOk;
}

WorkloadSpec workload_from_config(const json& cfg) {
    WorkloadSpec spec;
    spec.duration_s = cfg.at("duration").get<double>();
    spec.ramp_s = cfg.at("ramp").get<double>();
    spec.peak_concurrency = cfg.at("peak").get<int>();
    spec.pause_min_s = cfg.at("pause_min").get<double>();
    spec.pause_max_s = cfg.at("pause_max").get<double>();
    spec.seed = cfg.at("seed").get<std::uint64_t>();
    spec.query_pool = cfg.at("query_pool").get<int>();
    return spec;
}

int cmd_simulate(const json& cfg) {
    const std::string out_dir = cfg.at("out_dir").get<std::string>();
    LatencyProfile profile = LatencyProfile::from_text(read_text_file(cfg.at("profile").get<std::string>()));
    WorkloadSpec spec = workload_from_config(cfg);
    if (!cfg.at("spec_file").get<std::string>().empty()) {
        json js = json::parse(read_text_file(cfg.at("spec_file").get<std::string>()));
        for (auto it = js.begin(); it != js.end(); ++it) {
            // spec file overrides workload fields not given as flags
        }
        WorkloadSpec file_spec;
        file_spec.duration_s = js.value("duration", spec.duration_s);
        file_spec.ramp_s = js.value("ramp", spec.ramp_s);
        file_spec.peak_concurrency = js.value("peak", spec.peak_concurrency);
        file_spec.pause_min_s = js.value("pause_min", spec.pause_min_s);
        file_spec.pause_max_s = js.value("pause_max", spec.pause_max_s);
        file_spec.seed = js.value("seed", spec.seed);
        file_spec.query_pool = js.value("query_pool", spec.query_pool);
        spec = file_spec;
    }

    SimOptions opt;
    opt.constraint_ms = cfg.at("constraint_ms").get<double>();
    opt.pinned_level = cfg.at("level").get<int>();
    opt.counting = cfg.at("count_waiting_only").get<bool>() ? QueueCounting::kWaitingOnly
                                                            : QueueCounting::kWithService;

    std::vector<RequestEvent> events;
    const std::string mode = cfg.at("mode").get<std::string>();
    if (mode == "de") {
        events = run_discrete_event(generate_workload(spec), profile, opt);
    } else if (mode == "wall") {
        ElasticModel model = Checkpoint::load(cfg.at("checkpoint").get<std::string>());
        RetrievalCorpus rc = make_retrieval_corpus(cfg.at("corpus_seed").get<std::uint64_t>(),
                                                   std::max(2, spec.query_pool));
        bool aborted = false;
        events = run_wall_clock(model, profile, spec, rc.eval_queries, opt, &aborted);
        if (aborted) std::cerr << "warning: run aborted at safety cap; trace is partial\n";
    } else {
        throw ContractError("unknown mode: " + mode);
    }
    write_text_file(out_dir + "/events.csv", events_to_csv(events));
    TradeoffReport rep = report(events, spec, opt.constraint_ms, profile, cfg.at("bucket").get<double>());
    write_text_file(out_dir + "/report.csv", report_to_csv(rep));

    const double peak_start_ms = spec.ramp_s * 1000.0;
    const double end_ms = spec.duration_s * 1000.0;
    json summary{{"requests", events.size()},
                 {"violation_rate_overall", violation_rate_in(events, 0, end_ms, opt.constraint_ms)},
                 {"violation_rate_peak", violation_rate_in(events, peak_start_ms, end_ms, opt.constraint_ms)},
                 {"mean_proxy_first_10s", mean_proxy_in(events, 0, 10000.0, profile)},
                 {"mode", mode},
                 {"pinned_level", opt.pinned_level}};
    write_text_file(out_dir + "/summary.json", summary.dump(2) + "\n");
    std::cout << summary.dump(2) << "\n";
    return kExitOk;
}

int cmd_report(const json& cfg) {
    const std::string out_dir = cfg.at("out_dir").get<std::string>();
    auto events = events_from_csv(read_text_file(cfg.at("events").get<std::string>()));
    LatencyProfile profile = LatencyProfile::from_text(read_text_file(cfg.at("profile").get<std::string>()));
    WorkloadSpec spec = workload_from_config(cfg);
    TradeoffReport rep = report(events, spec, cfg.at("constraint_ms").get<double>(), profile,
                                cfg.at("bucket").get<double>());
    write_text_file(out_dir + "/report.csv", report_to_csv(rep));
    std::cout << "report: " << rep.buckets.size() << " buckets\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale elastic language-model engine"};
    app.require_subcommand(1);

    // flag storage shared across subcommands; each subcommand registers only
    // the flags it uses
    std::string out_dir = "run", config_file, corpus = "builtin:41", checkpoint, teacher_path;
    std::string objective = "dense", levels = "50,40,30,20,15,10,5", k_list = "5,20,100";
    std::string metrics_path, metric_name = "recall@5", profile_path, mode = "de", events_path,
                spec_file;
    std::uint64_t seed = 7, corpus_seed = 1013;
    int steps = 0, epochs = 1, batch_size = 8, batches = 16, passages = 128, hard_negatives = 1;
    int k_top = 16, trials = 30, length = 64, level = 0, peak = 100, query_pool = 64;
    double lr = 3e-4, constraint_ms = 500.0, duration = 120.0, ramp = 50.0, pause_min = 1.0,
           pause_max = 3.0, bucket = 5.0;
    bool count_waiting_only = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--out-dir", out_dir, "run directory (created if absent)");
        sub->add_option("--config", config_file, "JSON config file; flags win");
        sub->add_option("--seed", seed, "rng seed");
    };

    auto* pre = app.add_subcommand("pretrain-teacher", "masked-LM pretraining of the full model");
    add_common(pre);
    pre->add_option("--corpus", corpus);
    pre->add_option("--steps", steps);
    pre->add_option("--epochs", epochs);
    pre->add_option("--batch-size", batch_size);
    pre->add_option("--lr", lr);

    auto* sc = app.add_subcommand("score", "record importance scores and derive the submap");
    add_common(sc);
    sc->add_option("--checkpoint", checkpoint)->required();
    sc->add_option("--corpus", corpus);
    sc->add_option("--batches", batches);
    sc->add_option("--batch-size", batch_size);
    sc->add_option("--levels", levels);

    auto* di = app.add_subcommand("distill", "elastic relation-alignment distillation");
    add_common(di);
    di->add_option("--teacher", teacher_path)->required();
    di->add_option("--corpus", corpus);
    di->add_option("--steps", steps);
    di->add_option("--epochs", epochs);
    di->add_option("--batch-size", batch_size);
    di->add_option("--lr", lr);

    auto* fi = app.add_subcommand("finetune", "elastic task-specific finetuning");
    add_common(fi);
    fi->add_option("--checkpoint", checkpoint)->required();
    fi->add_option("--objective", objective, "dense|rerank|classify");
    fi->add_option("--steps", steps);
    fi->add_option("--epochs", epochs);
    fi->add_option("--batch-size", batch_size);
    fi->add_option("--lr", lr);
    fi->add_option("--corpus-seed", corpus_seed);
    fi->add_option("--passages", passages);
    fi->add_option("--hard-negatives", hard_negatives);
    fi->add_option("--k-top", k_top);

    auto* ev = app.add_subcommand("eval-retrieval", "recall/MRR per preserving level");
    add_common(ev);
    ev->add_option("--checkpoint", checkpoint)->required();
    ev->add_option("--corpus-seed", corpus_seed);
    ev->add_option("--passages", passages);
    ev->add_option("--k-list", k_list);

    auto* ca = app.add_subcommand("calibrate", "per-level latency calibration");
    add_common(ca);
    ca->add_option("--checkpoint", checkpoint)->required();
    ca->add_option("--trials", trials);
    ca->add_option("--length", length);
    ca->add_option("--metrics", metrics_path, "metrics.json to read proxies from");
    ca->add_option("--metric", metric_name);

    auto* si = app.add_subcommand("simulate", "online serving simulation");
    add_common(si);
    si->add_option("--mode", mode, "de|wall");
    si->add_option("--profile", profile_path)->required();
    si->add_option("--constraint-ms", constraint_ms);
    si->add_option("--level", level, "pin to a static level (0 = elastic)");
    si->add_option("--spec", spec_file, "workload spec JSON");
    si->add_option("--duration", duration);
    si->add_option("--ramp", ramp);
    si->add_option("--peak", peak);
    si->add_option("--pause-min", pause_min);
    si->add_option("--pause-max", pause_max);
    si->add_option("--query-pool", query_pool);
    si->add_option("--bucket", bucket);
    si->add_option("--checkpoint", checkpoint, "model checkpoint (wall mode)");
    si->add_option("--corpus-seed", corpus_seed);
    si->add_flag("--count-waiting-only", count_waiting_only,
                 "queue counting excludes the request entering service");

    auto* re = app.add_subcommand("report", "recompute the tradeoff report from events");
    add_common(re);
    re->add_option("--events", events_path)->required();
    re->add_option("--profile", profile_path)->required();
    re->add_option("--constraint-ms", constraint_ms);
    re->add_option("--duration", duration);
    re->add_option("--ramp", ramp);
    re->add_option("--peak", peak);
    re->add_option("--pause-min", pause_min);
    re->add_option("--pause-max", pause_max);
    re->add_option("--query-pool", query_pool);
    re->add_option("--bucket", bucket);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitUsage;
    }

    try {
        json flags{{"out_dir", out_dir},
                   {"seed", seed},
                   {"corpus", corpus},
                   {"corpus_seed", corpus_seed},
                   {"steps", steps},
                   {"epochs", epochs},
                   {"batch_size", batch_size},
                   {"lr", lr}};
        std::string name;
        int rc = kExitUsage;
        if (app.got_subcommand(pre)) {
            name = "pretrain-teacher";
            json cfg = merge_config_file(config_file, flags);
            write_resolved_config(cfg.at("out_dir"), name, cfg);
            rc = cmd_pretrain_teacher(cfg);
        } else if (app.got_subcommand(sc)) {
            name = "score";
            flags["checkpoint"] = checkpoint;
            flags["batches"] = batches;
            flags["levels"] = levels;
            json cfg = merge_config_file(config_file, flags);
            write_resolved_config(cfg.at("out_dir"), name, cfg);
            rc = cmd_score(cfg);
        } else if (app.got_subcommand(di)) {
            name = "distill";
            flags["teacher"] = teacher_path;
            json cfg = merge_config_file(config_file, flags);
            write_resolved_config(cfg.at("out_dir"), name, cfg);
            rc = cmd_distill(cfg);
        } else if (app.got_subcommand(fi)) {
            name = "finetune";
            flags["checkpoint"] = checkpoint;
            flags["objective"] = objective;
            flags["passages"] = passages;
            flags["hard_negatives"] = hard_negatives;
            flags["k_top"] = k_top;
            json cfg = merge_config_file(config_file, flags);
            write_resolved_config(cfg.at("out_dir"), name, cfg);
            rc = cmd_finetune(cfg);
        } else if (app.got_subcommand(ev)) {
            name = "eval-retrieval";
            flags["checkpoint"] = checkpoint;
            flags["passages"] = passages;
            flags["k_list"] = k_list;
            json cfg = merge_config_file(config_file, flags);
            write_resolved_config(cfg.at("out_dir"), name, cfg);
            rc = cmd_eval_retrieval(cfg);
        } else if (app.got_subcommand(ca)) {
            name = "calibrate";
            flags["checkpoint"] = checkpoint;
            flags["trials"] = trials;
            flags["length"] = length;
            flags["metrics"] = metrics_path;
            flags["metric"] = metric_name;
            json cfg = merge_config_file(config_file, flags);
            write_resolved_config(cfg.at("out_dir"), name, cfg);
            rc = cmd_calibrate(cfg);
        } else if (app.got_subcommand(si)) {
            name = "simulate";
            flags["mode"] = mode;
            flags["profile"] = profile_path;
            flags["constraint_ms"] = constraint_ms;
            flags["level"] = level;
            flags["spec_file"] = spec_file;
            flags["duration"] = duration;
            flags["ramp"] = ramp;
            flags["peak"] = peak;
            flags["pause_min"] = pause_min;
            flags["pause_max"] = pause_max;
            flags["query_pool"] = query_pool;
            flags["bucket"] = bucket;
            flags["checkpoint"] = checkpoint;
            flags["count_waiting_only"] = count_waiting_only;
            json cfg = merge_config_file(config_file, flags);
            write_resolved_config(cfg.at("out_dir"), name, cfg);
            rc = cmd_simulate(cfg);
        } else if (app.got_subcommand(re)) {
            name = "report";
            flags["events"] = events_path;
            flags["profile"] = profile_path;
            flags["constraint_ms"] = constraint_ms;
            flags["duration"] = duration;
            flags["ramp"] = ramp;
            flags["peak"] = peak;
            flags["pause_min"] = pause_min;
            flags["pause_max"] = pause_max;
            flags["query_pool"] = query_pool;
            flags["bucket"] = bucket;
            json cfg = merge_config_file(config_file, flags);
            write_resolved_config(cfg.at("out_dir"), name, cfg);
            rc = cmd_report(cfg);
        }
        return rc;
    } catch (const IoError& e) {
        std::cerr << "error: io: " << e.what() << "\n";
        return kExitIo;
    } catch (const Error& e) {
        std::cerr << "error: contract: " << e.what() << "\n";
        return kExitContract;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitContract;
    }
}
