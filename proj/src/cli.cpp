#include "proagym/cli.hpp"

#include <filesystem>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "proagym/error.hpp"
#include "proagym/gym.hpp"
#include "proagym/ingest.hpp"
#include "proagym/metrics.hpp"
#include "proagym/runner.hpp"

namespace proagym {

namespace fs = std::filesystem;

std::unique_ptr<Gateway> make_gateway(const std::string& spec, const AppConfig& config) {
    if (spec == "live") {
        auto opts = LiveOptions::from_env();
        if (!config.api_base.empty()) opts.api_base = config.api_base;
        if (!config.api_key.empty()) opts.api_key = config.api_key;
        opts.embedding_model = config.models.embedding;
        opts.max_in_flight = config.max_in_flight;
        return std::make_unique<LiveGateway>(std::move(opts));
    }
    constexpr std::string_view prefix = "scripted:";
    if (spec.starts_with(prefix)) return ScriptedGateway::from_file(spec.substr(prefix.size()));
    throw ContractError("unknown backend '" + spec + "'");
}

namespace {

std::string check_backend(const std::string& s) {
    if (s == "live") return {};
    if (s.starts_with("scripted:") && s.size() > 9) return {};
    return "backend must be 'live' or 'scripted:<fixture>'";
}

void write_output(const std::string& path, std::string_view contents) {
    if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
    write_file(path, contents);
}

std::string jsonl(const std::vector<Json>& rows) {
    std::string out;
    for (const auto& r : rows) out += r.dump() + "\n";
    return out;
}

Json segment_json(const Segment& s) {
    Json j;
    j["start"] = s.start.to_string();
    j["end"] = s.end.to_string();
    j["app"] = s.app;
    j["records"] = s.records.size();
    j["action_summary"] = s.action_summary;
    return j;
}

struct Common {
    std::string config_path;
    AppConfig config;
    std::optional<PromptLibrary> prompts;

    const PromptLibrary* prompt_library() const { return prompts ? &*prompts : nullptr; }
};

struct IngestArgs {
    std::string in, out, segments, backend = "live", model;
    std::size_t concurrency = 1;
    std::optional<double> gap, max_span;
    bool no_render = false;
};

int run_ingest(const IngestArgs& a, const Common& c, std::ostream& out) {
    auto records = parse_raw_trace(read_file(a.in));
    MergeOptions mo{a.gap.value_or(c.config.gap_threshold_s), a.max_span.value_or(c.config.max_span_s)};
    auto segments = merge_segments(std::move(records), mo);
    if (!c.config.redact.empty()) segments = redact(std::move(segments), c.config.redact);
    if (!a.segments.empty()) {
        Json arr = Json::array();
        for (const auto& s : segments) arr.push_back(segment_json(s));
        write_output(a.segments, arr.dump(2) + "\n");
    }
    if (a.no_render) {
        out << segments.size() << " segments\n";
        return 0;
    }
    auto gw = make_gateway(a.backend, c.config);
    RenderOptions ro;
    ro.model_id = a.model.empty() ? c.config.models.gym : a.model;
    ro.concurrency = a.concurrency;
    ro.prompts = c.prompt_library();
    std::string lines;
    for (const auto& e : render_events(segments, *gw, ro)) lines += format_event_line(e) + "\n";
    write_output(a.out, lines);
    out << segments.size() << " events written to " << a.out << "\n";
    return 0;
}

struct ScenarioArgs {
    std::string seed_job, category, out_dir = "scenarios", backend = "live", model, reference;
};

int run_scenario_gen(const ScenarioArgs& a, const Common& c, std::ostream& out) {
    const auto category = parse_category(a.category);
    std::vector<Event> reference;
    if (!a.reference.empty())
        for (const auto& j : read_jsonl_file(a.reference)) reference.push_back(event_from_json(j));
    auto gw = make_gateway(a.backend, c.config);
    RunLog log;
    GymOptions go;
    go.model_id = a.model.empty() ? c.config.models.gym : a.model;
    go.prompts = c.prompt_library();
    go.log = &log;
    const auto scenario = generate_scenario(a.seed_job, category, *gw, reference, go);
    out << save_scenario(scenario, a.out_dir) << "\n";
    return 0;
}

struct RunArgs {
    std::string backend = "live", out, agent_model, judge_model, gym_model, user_model;
    std::size_t k = 1;
    bool feedback = false;
    std::uint64_t seed = 0;
    std::optional<std::size_t> window;
    std::size_t concurrency = 1;
    std::string memory = "carried";
};

RunConfig run_config(const RunArgs& a, const Common& c, RunMode mode) {
    RunConfig rc;
    rc.mode = mode;
    rc.agent_model = a.agent_model.empty() ? c.config.models.agent : a.agent_model;
    rc.judge_model = a.judge_model.empty() ? c.config.models.judge : a.judge_model;
    rc.gym_model = a.gym_model.empty() ? c.config.models.gym : a.gym_model;
    rc.user_model = a.user_model.empty() ? c.config.models.user : a.user_model;
    rc.k = a.k;
    rc.with_feedback = a.feedback;
    rc.seed = a.seed;
    rc.window = a.window.value_or(c.config.window);
    rc.memory = a.memory == "independent" ? MemoryMode::independent : MemoryMode::carried;
    rc.event_budget = c.config.event_budget;
    rc.max_execution_steps = c.config.max_execution_steps;
    rc.concurrency = a.concurrency;
    rc.out = a.out;
    return rc;
}

struct SimulateArgs {
    RunArgs run;
    std::vector<std::string> scenarios;
    std::string trace_out, records_out;
    std::optional<std::size_t> event_budget;
};

int run_simulate(const SimulateArgs& a, const Common& c, std::ostream& out, std::ostream& err) {
    auto rc = run_config(a.run, c, RunMode::simulate);
    if (a.event_budget) rc.event_budget = *a.event_budget;
    auto gw = make_gateway(a.run.backend, c.config);
    Json manifests = Json::array();
    std::string traces, records;
    bool ok = true;
    for (const auto& path : a.scenarios) {
        const auto scenario = load_scenario(path);
        const auto result = run_simulation(scenario, rc, *gw, c.prompt_library());
        if (!result.manifest.complete) {
            ok = false;
            err << "scenario " << scenario.id << ": " << result.manifest.error.value_or("incomplete") << "\n";
        }
        manifests.push_back(to_json(result.manifest));
        traces += to_json(result.trace).dump() + "\n";
        for (const auto& r : result.records) records += to_json(r).dump() + "\n";
        out << scenario.id << ": " << result.trace.events.size() << " events, " << result.records.size()
            << " predictions\n";
    }
    const Json body = a.scenarios.size() == 1 ? manifests.front() : Json{{"simulations", manifests}};
    write_output(a.run.out, body.dump(2) + "\n");
    if (!a.trace_out.empty()) write_output(a.trace_out, traces);
    if (!a.records_out.empty()) write_output(a.records_out, records);
    return ok ? 0 : 1;
}

struct EvaluateArgs {
    RunArgs run;
    std::string test, resume;
    bool matrix = false;
};

int run_evaluate(const EvaluateArgs& a, const Common& c, std::ostream& out) {
    const auto test_path = a.test.empty() ? c.config.test_set : a.test;
    const auto test_set = load_test_set(test_path);
    auto rc = run_config(a.run, c, RunMode::evaluate);
    if (a.matrix) {
        const auto results = settings_matrix(
            test_set, rc, [&] { return make_gateway(a.run.backend, c.config); }, c.prompt_library());
        Json settings = Json::array();
        for (const auto& r : results) settings.push_back(Json{{"label", r.label}, {"manifest", to_json(r.manifest)}});
        write_output(a.run.out, Json{{"settings", settings}}.dump(2) + "\n");
        out << format_settings(results);
        return 0;
    }
    std::optional<RunManifest> resume;
    if (!a.resume.empty()) resume = run_manifest_from_json(Json::parse(read_file(a.resume)));
    auto gw = make_gateway(a.run.backend, c.config);
    const auto m = run_evaluation(test_set, rc, *gw, resume ? &*resume : nullptr, c.prompt_library());
    write_output(a.run.out, dump_manifest(m));
    const std::string label = "pred@" + std::to_string(rc.k) + (rc.with_feedback ? ", w/ RM" : "");
    out << format_table({{label, m.summary.value_or(compute_metrics({}))}});
    if (!m.excluded.empty()) out << m.excluded.size() << " item(s) excluded after errors\n";
    out << "manifest written to " << a.run.out << "\n";
    return 0;
}

int run_report(const std::string& path, bool as_json, std::ostream& out) {
    Json j;
    try {
        j = Json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& ex) {
        throw ParseError(path + ": " + ex.what());
    }
    std::vector<std::pair<std::string, MetricsReport>> rows;
    if (j.contains("settings")) {
        for (const auto& s : j["settings"]) {
            const auto m = run_manifest_from_json(s.at("manifest"));
            rows.emplace_back(s.at("label").get<std::string>(), m.summary.value_or(compute_metrics({})));
        }
    } else {
        const auto m = run_manifest_from_json(j);
        if (!m.summary) throw Error(path + ": manifest has no metrics summary");
        rows.emplace_back("pred@" + std::to_string(m.config.k) + (m.config.with_feedback ? ", w/ RM" : ""), *m.summary);
    }
    if (as_json) {
        Json arr = Json::array();
        for (const auto& [label, r] : rows) arr.push_back(Json{{"label", label}, {"metrics", to_json(r)}});
        out << arr.dump(2) << "\n";
    } else {
        out << format_table(rows);
    }
    return 0;
}

struct AnnotateArgs {
    std::string store, ui_dir, host = "127.0.0.1", items;
    int port = 8080;
};

int run_serve(const AnnotateArgs& a, const Common& c, std::ostream& out) {
    AnnotationStore store(a.store.empty() ? c.config.store_path : a.store, c.config.votes_per_item,
                          c.config.ambiguous_need);
    AnnotationService service(store, a.ui_dir.empty() ? c.config.ui_dir : a.ui_dir);
    const int port = service.bind(a.host, a.port);
    out << "annotation service listening on http://" << a.host << ":" << port << "\n" << std::flush;
    service.run();
    return 0;
}

int run_import(const AnnotateArgs& a, const Common& c, std::ostream& out) {
    AnnotationStore store(a.store.empty() ? c.config.store_path : a.store, c.config.votes_per_item,
                          c.config.ambiguous_need);
    std::size_t n = 0;
    for (const auto& j : read_jsonl_file(a.items)) {
        store.add_item(annotation_item_from_json(j));
        ++n;
    }
    out << n << " items imported into " << store.path() << "\n";
    return 0;
}

struct DatasetArgs {
    std::string in, out_dir = "dataset", store, out, backend = "live";
    double fraction = 0.0;
    std::uint64_t seed = 0;
    bool explain = false;
};

int run_split(const DatasetArgs& a, std::ostream& out) {
    const auto bundle = dataset_split(read_jsonl_file(a.in), a.fraction, a.seed);
    const auto dir = fs::path(a.out_dir);
    write_output((dir / "train.jsonl").string(), jsonl(bundle.train));
    write_output((dir / "test.jsonl").string(), jsonl(bundle.test));
    write_output((dir / "split.json").string(), to_json(bundle.manifest).dump(2) + "\n");
    out << "train " << bundle.manifest.train << ", test " << bundle.manifest.test << "\n";
    return 0;
}

int run_export(const DatasetArgs& a, const Common& c, std::ostream& out) {
    AnnotationStore store(a.store.empty() ? c.config.store_path : a.store, c.config.votes_per_item,
                          c.config.ambiguous_need);
    auto rows = store.export_rows();
    if (a.explain) {
        auto gw = make_gateway(a.backend, c.config);
        JudgeOptions jo;
        jo.model_id = c.config.models.judge;
        jo.prompts = c.prompt_library();
        for (auto& r : rows) r = explain_row(r, *gw, jo);
    }
    write_output(a.out, jsonl(rows));
    out << rows.size() << " rows written to " << a.out << "\n";
    return 0;
}

void add_run_options(CLI::App* cmd, RunArgs& r) {
    cmd->add_option("--backend", r.backend, "live or scripted:<fixture.jsonl>")->check(check_backend);
    cmd->add_option("--pred-k", r.k, "Candidate tasks per prediction (1..3)")->check(CLI::Range(1, 3));
    cmd->add_flag("--with-reward-feedback", r.feedback, "Refine rejected drafts once using the judge's feedback");
    cmd->add_option("--agent-model", r.agent_model, "Agent model id");
    cmd->add_option("--judge-model", r.judge_model, "Judge (reward model) id");
    cmd->add_option("--seed", r.seed, "Seed recorded in the manifest and used for sampling");
    cmd->add_option("--window", r.window, "Agent memory window")->check(CLI::PositiveNumber);
}

}  // namespace

int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Proactive agent gym: ingest, simulate, evaluate and annotate.", "proagym"};
    app.failure_message(CLI::FailureMessage::help);
    app.require_subcommand(1);

    Common common;
    app.add_option("--config", common.config_path, "JSON config file (default: $PROAGYM_CONFIG)");

    IngestArgs ingest;
    auto* ingest_cmd = app.add_subcommand("ingest", "Raw activity log to natural-language events");
    ingest_cmd->add_option("--in", ingest.in, "Raw trace (JSON array or JSONL)")->required();
    ingest_cmd->add_option("--out", ingest.out, "Event JSONL output");
    ingest_cmd->add_option("--segments", ingest.segments, "Also write the merged segments as JSON");
    ingest_cmd->add_option("--backend", ingest.backend)->check(check_backend);
    ingest_cmd->add_option("--model", ingest.model);
    ingest_cmd->add_option("--concurrency", ingest.concurrency)->check(CLI::PositiveNumber);
    ingest_cmd->add_option("--gap", ingest.gap, "Merge gap threshold in seconds")->check(CLI::NonNegativeNumber);
    ingest_cmd->add_option("--max-span", ingest.max_span, "Longest segment in seconds")->check(CLI::NonNegativeNumber);
    ingest_cmd->add_flag("--no-render", ingest.no_render, "Merge only; skip the model");

    ScenarioArgs scen;
    auto* scenario_cmd = app.add_subcommand("scenario", "Scenario tools");
    scenario_cmd->require_subcommand(1);
    auto* gen_cmd = scenario_cmd->add_subcommand("gen", "Generate a scenario from a seed job");
    gen_cmd->add_option("--seed-job", scen.seed_job)->required();
    gen_cmd->add_option("--category", scen.category)->required()->check(CLI::IsMember({"coding", "writing", "daily_life"}));
    gen_cmd->add_option("--out-dir", scen.out_dir);
    gen_cmd->add_option("--backend", scen.backend)->check(check_backend);
    gen_cmd->add_option("--model", scen.model);
    gen_cmd->add_option("--reference", scen.reference, "Real events (JSONL) shown to the example stage");

    SimulateArgs sim;
    sim.run.out = "simulation.json";
    auto* sim_cmd = app.add_subcommand("simulate", "Simulate a user, the environment and the agent");
    sim_cmd->add_option("--scenario", sim.scenarios, "Scenario JSON file(s)")->required();
    add_run_options(sim_cmd, sim.run);
    sim_cmd->add_option("--gym-model", sim.run.gym_model);
    sim_cmd->add_option("--user-model", sim.run.user_model);
    sim_cmd->add_option("--event-budget", sim.event_budget);
    sim_cmd->add_option("--out", sim.run.out, "Manifest output");
    sim_cmd->add_option("--trace-out", sim.trace_out, "Trace JSONL output");
    sim_cmd->add_option("--records-out", sim.records_out, "Prediction record JSONL output");

    EvaluateArgs eval;
    eval.run.out = "manifest.json";
    auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate an agent on a labelled test set");
    add_run_options(eval_cmd, eval.run);
    eval_cmd->add_option("--test", eval.test, "Test set JSONL (default: config test_set)");
    eval_cmd->add_option("--out", eval.run.out, "Manifest output");
    eval_cmd->add_option("--memory", eval.run.memory)->check(CLI::IsMember({"carried", "independent"}));
    eval_cmd->add_option("--resume", eval.resume, "Earlier manifest whose items are reused");
    eval_cmd->add_option("--concurrency", eval.run.concurrency)->check(CLI::PositiveNumber);
    eval_cmd->add_flag("--matrix", eval.matrix, "Run pred@1/pred@3 with and without feedback");

    std::string report_path;
    bool report_json = false;
    auto* report_cmd = app.add_subcommand("report", "Metrics table from a manifest");
    report_cmd->add_option("manifest", report_path)->required();
    report_cmd->add_flag("--json", report_json);

    AnnotateArgs ann;
    auto* ann_cmd = app.add_subcommand("annotate", "Human annotation");
    ann_cmd->require_subcommand(1);
    auto* serve_cmd = ann_cmd->add_subcommand("serve", "Run the annotation HTTP service");
    serve_cmd->add_option("--port", ann.port)->check(CLI::Range(0, 65535));
    serve_cmd->add_option("--host", ann.host);
    serve_cmd->add_option("--store", ann.store);
    serve_cmd->add_option("--ui-dir", ann.ui_dir);
    auto* import_cmd = ann_cmd->add_subcommand("import", "Add annotation items to the store");
    import_cmd->add_option("--items", ann.items, "Annotation item JSONL")->required();
    import_cmd->add_option("--store", ann.store);

    DatasetArgs ds;
    auto* ds_cmd = app.add_subcommand("dataset", "Dataset tools");
    ds_cmd->require_subcommand(1);
    auto* split_cmd = ds_cmd->add_subcommand("split", "Seeded train/test split");
    split_cmd->add_option("--in", ds.in)->required();
    split_cmd->add_option("--test-fraction", ds.fraction)->required()->check(CLI::Range(0.0, 1.0));
    split_cmd->add_option("--seed", ds.seed);
    split_cmd->add_option("--out-dir", ds.out_dir);
    auto* export_cmd = ds_cmd->add_subcommand("export", "Reward-model training rows from the annotation store");
    export_cmd->add_option("--store", ds.store);
    export_cmd->add_option("--out", ds.out)->required();
    export_cmd->add_flag("--explain", ds.explain, "Add a first-person thought to every row");
    export_cmd->add_option("--backend", ds.backend)->check(check_backend);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }
    if (ingest_cmd->parsed() && !ingest.no_render && ingest.out.empty()) {
        err << "ingest: --out is required unless --no-render is given\n";
        return 2;
    }

    try {
        common.config = AppConfig::load(common.config_path);
        if (!common.config.prompts_dir.empty()) common.prompts = PromptLibrary::load(common.config.prompts_dir);

        if (ingest_cmd->parsed()) return run_ingest(ingest, common, out);
        if (gen_cmd->parsed()) return run_scenario_gen(scen, common, out);
        if (sim_cmd->parsed()) return run_simulate(sim, common, out, err);
        if (eval_cmd->parsed()) return run_evaluate(eval, common, out);
        if (report_cmd->parsed()) return run_report(report_path, report_json, out);
        if (serve_cmd->parsed()) return run_serve(ann, common, out);
        if (import_cmd->parsed()) return run_import(ann, common, out);
        if (split_cmd->parsed()) return run_split(ds, out);
        if (export_cmd->parsed()) return run_export(ds, common, out);
    } catch (const Error& ex) {
        err << "error: " << ex.what() << "\n";
        return 1;
    } catch (const nlohmann::json::exception& ex) {
        err << "error: " << ex.what() << "\n";
        return 1;
    } catch (const fs::filesystem_error& ex) {
        err << "error: " << ex.what() << "\n";
        return 1;
    }
    err << app.help();
    return 2;
}

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    std::vector<const char*> argv{"proagym"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return cli_dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace proagym
