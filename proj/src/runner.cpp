#include "proagym/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <map>
#include <set>
#include <thread>

#include "proagym/error.hpp"

namespace proagym {

std::string_view to_string(RunMode m) { return m == RunMode::simulate ? "simulate" : "evaluate"; }
std::string_view to_string(MemoryMode m) { return m == MemoryMode::carried ? "carried" : "independent"; }

void RunConfig::validate() const {
    if (k < 1 || k > kMaxCandidates) throw ContractError("k must be between 1 and 3");
    if (window < 1) throw ContractError("window must be >= 1");
    if (concurrency < 1) throw ContractError("concurrency must be >= 1");
}

Json to_json(const RunConfig& c) {
    Json j;
    j["mode"] = std::string(to_string(c.mode));
    j["agent_model"] = c.agent_model;
    j["judge_model"] = c.judge_model;
    j["gym_model"] = c.gym_model;
    j["user_model"] = c.user_model;
    j["k"] = c.k;
    j["with_feedback"] = c.with_feedback;
    j["seed"] = c.seed;
    j["window"] = c.window;
    j["memory"] = std::string(to_string(c.memory));
    j["event_budget"] = c.event_budget;
    j["max_activities"] = c.max_activities;
    j["max_execution_steps"] = c.max_execution_steps;
    j["example_events"] = c.example_events;
    j["start_time"] = c.start_time.to_string();
    j["concurrency"] = c.concurrency;
    j["categories"] = c.categories;
    j["scenarios"] = c.scenarios;
    j["out"] = c.out;
    return j;
}

RunConfig run_config_from_json(const Json& j) {
    if (!j.is_object()) throw ParseError("run config: expected an object");
    RunConfig c;
    try {
        if (j.contains("mode")) {
            const auto m = j["mode"].get<std::string>();
            if (m != "simulate" && m != "evaluate") throw ParseError("run config: unknown mode '" + m + "'");
            c.mode = m == "simulate" ? RunMode::simulate : RunMode::evaluate;
        }
        c.agent_model = j.value("agent_model", c.agent_model);
        c.judge_model = j.value("judge_model", c.judge_model);
        c.gym_model = j.value("gym_model", c.gym_model);
        c.user_model = j.value("user_model", c.user_model);
        c.k = j.value("k", c.k);
        c.with_feedback = j.value("with_feedback", c.with_feedback);
        c.seed = j.value("seed", c.seed);
        c.window = j.value("window", c.window);
        if (j.contains("memory")) {
            const auto m = j["memory"].get<std::string>();
            if (m != "carried" && m != "independent") throw ParseError("run config: unknown memory mode '" + m + "'");
            c.memory = m == "carried" ? MemoryMode::carried : MemoryMode::independent;
        }
        c.event_budget = j.value("event_budget", c.event_budget);
        c.max_activities = j.value("max_activities", c.max_activities);
        c.max_execution_steps = j.value("max_execution_steps", c.max_execution_steps);
        c.example_events = j.value("example_events", c.example_events);
        if (j.contains("start_time")) c.start_time = Timestamp::parse(j["start_time"].get<std::string>());
        c.concurrency = j.value("concurrency", c.concurrency);
        c.categories = j.value("categories", c.categories);
        c.scenarios = j.value("scenarios", c.scenarios);
        c.out = j.value("out", c.out);
    } catch (const nlohmann::json::exception& ex) {
        throw ParseError(std::string("run config: ") + ex.what());
    }
    return c;
}

namespace {

Json judgment_json_list(const std::vector<Judgment>& js) {
    Json arr = Json::array();
    for (const auto& j : js) arr.push_back(to_json(j));
    return arr;
}

Judgment judgment_from(const Json& j) {
    Judgment out;
    out.thought = j.value("thought", std::string{});
    const auto key = j.contains("judgment") ? "judgment" : "judgement";
    out.decision = normalize_decision(j.at(key).get<std::string>());
    return out;
}

Cell parse_cell(std::string_view s) {
    for (auto c : {Cell::tp, Cell::fp, Cell::tn, Cell::fn})
        if (to_string(c) == s) return c;
    throw ParseError("unknown confusion cell '" + std::string(s) + "'");
}

ScenarioCategory parse_scenario_category(std::string_view s) {
    for (auto c : {ScenarioCategory::MN, ScenarioCategory::NR, ScenarioCategory::CD, ScenarioCategory::FD,
                   ScenarioCategory::WD})
        if (to_string(c) == s) return c;
    throw ParseError("unknown scenario category '" + std::string(s) + "'");
}

Json counts_json(const CallCounts& c) { return Json{{"chat", c.chat}, {"embed", c.embed}}; }

}  // namespace

bool LedgerEntry::accepted() const {
    return std::any_of(judgments.begin(), judgments.end(), [](const Judgment& j) { return j.accepted(); });
}

Json to_json(const LedgerEntry& e) {
    Json j;
    j["item_id"] = e.item_id;
    j["observation"] = to_json(e.observation);
    if (e.feedback) {
        j["draft"] = to_json(e.draft);
        j["feedback"] = to_json(*e.feedback);
        j["refined"] = e.refined;
    }
    j["prediction"] = to_json(e.prediction);
    j["judgments"] = judgment_json_list(e.judgments);
    j["need"] = e.need ? Json(to_int(*e.need)) : Json(nullptr);
    j["outcome"] = e.outcome ? Json(*e.outcome) : Json(nullptr);
    j["cell"] = e.cell ? Json(std::string(to_string(*e.cell))) : Json(nullptr);
    j["category"] = e.category ? Json(std::string(to_string(*e.category))) : Json(nullptr);
    if (e.execution) j["execution"] = *e.execution;
    return j;
}

LedgerEntry ledger_entry_from_json(const Json& j) {
    try {
        LedgerEntry e;
        e.item_id = j.at("item_id").get<std::string>();
        e.observation = event_from_json(j.at("observation"));
        e.prediction = prediction_from_json(j.at("prediction"));
        e.draft = e.prediction;
        if (j.contains("feedback")) {
            e.draft = prediction_from_json(j.at("draft"));
            e.feedback = judgment_from(j["feedback"]);
            e.refined = j.value("refined", false);
        }
        for (const auto& x : j.at("judgments")) e.judgments.push_back(judgment_from(x));
        if (j.contains("need") && !j["need"].is_null()) e.need = need_from_int(j["need"].get<int>());
        if (j.contains("outcome") && !j["outcome"].is_null()) e.outcome = j["outcome"].get<int>();
        if (j.contains("cell") && !j["cell"].is_null()) e.cell = parse_cell(j["cell"].get<std::string>());
        if (j.contains("category") && !j["category"].is_null())
            e.category = parse_scenario_category(j["category"].get<std::string>());
        if (j.contains("execution")) e.execution = j["execution"];
        return e;
    } catch (const nlohmann::json::exception& ex) {
        throw ParseError(std::string("ledger entry: ") + ex.what());
    }
}

Json to_json(const RunManifest& m) {
    Json j;
    j["config"] = to_json(m.config);
    j["backend"] = m.backend;
    j["complete"] = m.complete;
    j["stop_reason"] = m.stop_reason;
    if (m.error) j["error"] = *m.error;
    j["processed"] = m.ledger.size();
    j["excluded_count"] = m.excluded.size();
    Json excluded = Json::array();
    for (const auto& x : m.excluded) excluded.push_back(Json{{"item_id", x.item_id}, {"error", x.error}});
    j["excluded"] = excluded;
    j["summary"] = m.summary ? to_json(*m.summary) : Json(nullptr);
    j["stats"] = m.stats;
    j["calls"] = counts_json(m.calls);
    j["refinement_calls"] = m.refinement_calls;
    j["warnings"] = m.warnings;
    if (m.wall_clock_ms) j["wall_clock_ms"] = *m.wall_clock_ms;
    Json ledger = Json::array();
    for (const auto& e : m.ledger) ledger.push_back(to_json(e));
    j["ledger"] = ledger;
    return j;
}

RunManifest run_manifest_from_json(const Json& j) {
    if (!j.is_object()) throw ParseError("manifest: expected an object");
    try {
        RunManifest m;
        m.config = run_config_from_json(j.at("config"));
        m.backend = j.value("backend", std::string{});
        m.complete = j.value("complete", true);
        m.stop_reason = j.value("stop_reason", std::string{});
        if (j.contains("error")) m.error = j["error"].get<std::string>();
        if (j.contains("excluded"))
            for (const auto& x : j["excluded"])
                m.excluded.push_back({x.at("item_id").get<std::string>(), x.value("error", std::string{})});
        if (j.contains("summary") && !j["summary"].is_null()) m.summary = metrics_report_from_json(j["summary"]);
        m.stats = j.value("stats", Json::object());
        if (j.contains("calls")) m.calls = {j["calls"].value("chat", std::size_t{0}), j["calls"].value("embed", std::size_t{0})};
        m.refinement_calls = j.value("refinement_calls", std::size_t{0});
        m.warnings = j.value("warnings", std::vector<std::string>{});
        if (j.contains("wall_clock_ms")) m.wall_clock_ms = j["wall_clock_ms"].get<std::int64_t>();
        for (const auto& e : j.at("ledger")) m.ledger.push_back(ledger_entry_from_json(e));
        return m;
    } catch (const nlohmann::json::exception& ex) {
        throw ParseError(std::string("manifest: ") + ex.what());
    }
}

std::string dump_manifest(const RunManifest& m) { return to_json(m).dump(2) + "\n"; }

std::optional<Event> user_activity(const Scenario& scenario, const EnvironmentState& state, const Trace& trace,
                                   Gateway& gw, const RunConfig& config, RunLog* log,
                                   const PromptLibrary* prompts_in) {
    Json info;
    info["Job"] = scenario.job;
    info["Background"] = scenario.background;
    Json events = Json::array();
    for (const auto& e : tail(trace.events, config.window)) {
        auto j = to_json(e);
        j["source"] = std::string(to_string(e.source));
        events.push_back(j);
    }
    Json input;
    input["User Info"] = info;
    input["Current Time"] = state.clock.to_string();
    input["Received Events"] = events;

    const auto& prompts = prompts_in ? *prompts_in : PromptLibrary::defaults();
    ChatRequest req;
    req.model_id = config.user_model;
    req.messages = {{Role::system, prompts.render("user_agent", {{"sentinel", std::string(kNoMoreEvents)}})},
                    {Role::user, input.dump(4)}};

    std::string reason;
    for (int attempt = 0; attempt < 2; ++attempt) {
        const auto reply = gw.chat(req);
        if (reply.find(kNoMoreEvents) != std::string::npos) return std::nullopt;
        try {
            const auto j = extract_json(reply);
            if (!j.contains("activity") || !j["activity"].is_string()) throw ParseError("missing 'activity'");
            Event e{state.clock, j["activity"].get<std::string>(), Source::user};
            if (j.contains("time") && !j["time"].is_null())
                e.time = j["time"].is_string() ? Timestamp::parse(j["time"].get<std::string>())
                                               : Timestamp::from_seconds(j["time"].get<double>());
            if (e.time < state.clock) {
                if (log) log->warn("activity time " + e.time.to_string() + " earlier than clock; clamped");
                e.time = state.clock;
            }
            validate_event(e);
            return e;
        } catch (const Error& ex) {
            reason = ex.what();
        } catch (const nlohmann::json::exception& ex) {
            reason = ex.what();
        }
        req.messages.push_back({Role::assistant, reply});
        req.messages.push_back({Role::user, "Your previous reply could not be used (" + reason +
                                                "). Reply again with only the JSON object, or " +
                                                std::string(kNoMoreEvents) + "."});
    }
    throw StageError("user_activity", reason);
}

bool state_closed(const EnvironmentState& state, const Scenario& scenario) {
    if (state.scenario_id != scenario.id) return false;
    for (const auto& [id, st] : state.entity_states)
        if (!scenario.find_entity(id)) return false;
    for (std::size_t i = 0; i < state.changes.size(); ++i) {
        const auto& c = state.changes[i];
        if (!state.entity_states.contains(c.entity_id)) return false;
        if (c.time > state.clock) return false;
        if (i > 0 && c.time < state.changes[i - 1].time) return false;
    }
    return true;
}

namespace {

struct Context {
    Gateway& gw;
    const RunConfig& config;
    const PromptLibrary* prompts;
    RunLog* log;
};

AgentOptions agent_options(const Context& cx) {
    AgentOptions o;
    o.model_id = cx.config.agent_model;
    o.temperature = 0.0;
    o.prompts = cx.prompts;
    o.log = cx.log;
    return o;
}

JudgeOptions judge_options(const Context& cx) {
    JudgeOptions o;
    o.model_id = cx.config.judge_model;
    o.window = cx.config.window;
    o.prompts = cx.prompts;
    return o;
}

GymOptions gym_options(const Context& cx) {
    GymOptions o;
    o.model_id = cx.config.gym_model;
    o.history_window = cx.config.window;
    o.prompts = cx.prompts;
    o.log = cx.log;
    return o;
}

// Candidates are judged in order; the first accept ends the round.
std::vector<Judgment> judge_candidates(const Trace& window, const Prediction& p, const Context& cx) {
    std::vector<Judgment> out;
    const auto opts = judge_options(cx);
    for (const auto& c : p.candidates) {
        out.push_back(judge_task(window, c, cx.gw, opts));
        if (out.back().accepted()) break;
    }
    return out;
}

Judgment combine_feedback(const std::vector<Judgment>& js) {
    for (const auto& j : js)
        if (j.accepted()) return j;
    Judgment combined;
    combined.decision = Decision::rejected;
    for (const auto& j : js) {
        if (j.thought.empty()) continue;
        if (!combined.thought.empty()) combined.thought += " ";
        combined.thought += j.thought;
    }
    return combined;
}

/// Predict (and optionally refine) at one observation, then judge.
LedgerEntry predict_point(const AgentMemory& memory, const Event& observation, const Context& cx,
                          std::size_t& refinement_calls) {
    LedgerEntry e;
    e.observation = observation;
    const auto ao = agent_options(cx);
    Trace window;
    window.events.assign(memory.events().begin(), memory.events().end());

    e.draft = predict(memory, cx.gw, cx.config.k, ao);
    e.prediction = e.draft;
    if (cx.config.with_feedback && !e.draft.silent()) {
        auto first = judge_candidates(window, e.draft, cx);
        e.feedback = combine_feedback(first);
        if (e.feedback->accepted()) {
            e.judgments = std::move(first);
        } else {
            e.prediction = refine_with_feedback(memory, e.draft, *e.feedback, cx.gw, cx.config.k, ao);
            e.refined = true;
            ++refinement_calls;
            if (!e.prediction.silent()) e.judgments = judge_candidates(window, e.prediction, cx);
        }
    } else if (!e.draft.silent()) {
        e.judgments = judge_candidates(window, e.draft, cx);
    }
    return e;
}

void score(LedgerEntry& e) {
    const bool predicted = !e.prediction.silent();
    if (predicted) e.outcome = e.accepted() ? 1 : 0;
    if (!e.need) return;
    std::optional<Decision> d;
    if (predicted) d = e.accepted() ? Decision::accepted : Decision::rejected;
    const auto c = classify(predicted, d, *e.need);
    e.cell = c.cell;
    e.category = c.category;
    e.outcome = (c.cell == Cell::tp || c.cell == Cell::tn) ? 1 : 0;
}

CallCounts diff(const CallCounts& after, const CallCounts& before) {
    return {after.chat - before.chat, after.embed - before.embed};
}

Json execution_json(const TaskCandidate& task, const ExecutionResult& r) {
    Json j;
    j["task"] = task.description();
    j["terminal"] = std::string(to_string(r.terminal));
    Json steps = Json::array();
    for (const auto& s : r.steps) {
        Json st;
        st["tool"] = s.action.tool;
        st["arguments"] = s.action.arguments;
        st["result"] = to_json(s.resulting_event);
        steps.push_back(st);
    }
    j["steps"] = steps;
    j["errors"] = r.errors;
    return j;
}

}  // namespace

SimulationResult run_simulation(const Scenario& scenario, const RunConfig& config, Gateway& gw,
                                const PromptLibrary* prompts) {
    config.validate();
    validate_scenario(scenario);
    const auto started = std::chrono::steady_clock::now();
    const auto calls_before = gw.counts();

    RunLog log;
    Context cx{gw, config, prompts, &log};
    SimulationResult out;
    out.manifest.config = config;
    out.manifest.config.mode = RunMode::simulate;
    out.manifest.backend = gw.identity();
    out.trace.scenario_id = scenario.id;

    auto state = initial_state(scenario, config.start_time);
    AgentMemory memory(config.window);
    const auto examples = sample_examples(scenario, config.seed, config.example_events);
    const auto gym = gym_options(cx);

    std::size_t activities = 0, accepted = 0, executions = 0, execution_steps = 0;
    auto room = [&](std::size_t n) { return out.trace.events.size() + n <= config.event_budget; };
    auto push = [&](const Event& e) {
        out.trace.events.push_back(e);
        memory = memory.observe(e);
    };

    out.manifest.stop_reason = "event_budget";
    try {
        while (room(2)) {
            if (activities >= config.max_activities) {
                out.manifest.stop_reason = "max_activities";
                break;
            }
            const auto act = user_activity(scenario, state, out.trace, gw, config, &log, prompts);
            if (!act) {
                out.manifest.stop_reason = "user_finished";
                break;
            }
            ++activities;
            const auto ev = generate_event(state, out.trace, *act, examples, gw, gym);
            if (!ev) {
                out.manifest.stop_reason = "events_exhausted";
                break;
            }
            push(*act);
            push(*ev);
            state = update_state(state, scenario, *ev, gw, gym);

            auto entry = predict_point(memory, *ev, cx, out.manifest.refinement_calls);
            entry.item_id = scenario.id + "#" + std::to_string(out.trace.events.size() - 1);
            score(entry);
            out.records.push_back(make_record(*ev, entry.prediction, entry.judgments));

            if (entry.accepted()) {
                ++accepted;
                const auto& task = entry.prediction.candidates[entry.judgments.size() - 1];
                ExecuteOptions eo;
                eo.max_steps = config.max_execution_steps;
                eo.agent = agent_options(cx);
                eo.gym = gym;
                eo.history = out.trace;
                const auto result = execute_task(task, state, scenario, gw, eo);
                ++executions;
                for (const auto& step : result.steps) {
                    if (!room(2)) break;
                    push(step.activity);
                    push(step.resulting_event);
                    ++execution_steps;
                }
                state = result.final_state;
                entry.execution = execution_json(task, result);
            }
            out.manifest.ledger.push_back(std::move(entry));
        }
    } catch (const Error& ex) {
        out.manifest.complete = false;
        out.manifest.stop_reason = "error";
        out.manifest.error = ex.what();
    }

    out.final_state = state;
    out.manifest.stats = Json{{"scenario_id", scenario.id},
                              {"events", out.trace.events.size()},
                              {"activities", activities},
                              {"predictions", out.records.size()},
                              {"accepted", accepted},
                              {"executions", executions},
                              {"execution_steps", execution_steps},
                              {"final_clock", state.clock.to_string()}};
    out.manifest.calls = diff(gw.counts(), calls_before);
    out.manifest.warnings = log.warnings();
    if (!gw.deterministic())
        out.manifest.wall_clock_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                         std::chrono::steady_clock::now() - started)
                                         .count();
    return out;
}

std::vector<std::string> eval_item_ids(const EvalTrace& t) {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < t.needs.size(); ++i)
        if (t.needs[i]) ids.push_back(t.id + "#" + std::to_string(i));
    return ids;
}

Json to_json(const EvalTrace& t) {
    Json j;
    j["id"] = t.id;
    Json events = Json::array();
    for (std::size_t i = 0; i < t.trace.events.size(); ++i) {
        const auto& e = t.trace.events[i];
        auto ej = to_json(e);
        if (i < t.needs.size() && t.needs[i]) ej["need"] = to_int(*t.needs[i]);
        events.push_back(ej);
    }
    j["events"] = events;
    return j;
}

EvalTrace eval_trace_from_json(const Json& j) {
    if (!j.is_object() || !j.contains("id") || !j["id"].is_string())
        throw ParseError("test trace: missing string 'id'");
    if (!j.contains("events") || !j["events"].is_array()) throw ParseError("test trace: missing 'events' array");
    EvalTrace t;
    t.id = j["id"].get<std::string>();
    t.trace.scenario_id = t.id;
    for (const auto& ej : j["events"]) {
        t.trace.events.push_back(event_from_json(ej));
        if (ej.contains("need") && !ej["need"].is_null()) {
            if (!ej["need"].is_number_integer()) throw ParseError("test trace '" + t.id + "': need must be 0 or 1");
            t.needs.push_back(need_from_int(ej["need"].get<int>()));
        } else {
            t.needs.emplace_back();
        }
    }
    if (auto report = validate_trace(t.trace); !report.ok)
        throw ParseError("test trace '" + t.id + "': event " + std::to_string(report.index) + ": " + report.reason);
    return t;
}

std::vector<EvalTrace> load_test_set(const std::string& path) {
    std::vector<EvalTrace> out;
    std::set<std::string> seen;
    for (const auto& j : read_jsonl_file(path)) {
        auto t = eval_trace_from_json(j);
        if (!seen.insert(t.id).second) throw ParseError("test set: duplicate trace id '" + t.id + "'");
        out.push_back(std::move(t));
    }
    return out;
}

namespace {

struct TraceOutcome {
    std::vector<LedgerEntry> ledger;
    std::vector<ExcludedItem> excluded;
    std::size_t refinement_calls = 0;
};

TraceOutcome evaluate_trace(const EvalTrace& t, const Context& cx, const std::map<std::string, LedgerEntry>& done) {
    TraceOutcome out;
    AgentMemory memory(cx.config.window);
    for (std::size_t i = 0; i < t.trace.events.size(); ++i) {
        const auto& ev = t.trace.events[i];
        memory = cx.config.memory == MemoryMode::carried ? memory.observe(ev)
                                                         : AgentMemory(cx.config.window).observe(ev);
        if (i >= t.needs.size() || !t.needs[i]) continue;
        const auto id = t.id + "#" + std::to_string(i);
        if (auto it = done.find(id); it != done.end()) {
            out.ledger.push_back(it->second);
            continue;
        }
        try {
            std::size_t refinements = 0;
            auto entry = predict_point(memory, ev, cx, refinements);
            entry.item_id = id;
            entry.need = t.needs[i];
            score(entry);
            out.ledger.push_back(std::move(entry));
            out.refinement_calls += refinements;
        } catch (const Error& ex) {
            out.excluded.push_back({id, ex.what()});
        } catch (const nlohmann::json::exception& ex) {
            out.excluded.push_back({id, ex.what()});
        }
    }
    return out;
}

}  // namespace

RunManifest run_evaluation(std::span<const EvalTrace> test_set, const RunConfig& config, Gateway& gw,
                           const RunManifest* resume, const PromptLibrary* prompts) {
    config.validate();
    const auto started = std::chrono::steady_clock::now();
    const auto calls_before = gw.counts();
    RunLog log;
    Context cx{gw, config, prompts, &log};

    RunManifest m;
    m.config = config;
    m.config.mode = RunMode::evaluate;
    m.backend = gw.identity();

    std::map<std::string, LedgerEntry> done;
    if (resume) {
        for (const auto& e : resume->ledger) done.emplace(e.item_id, e);
        m.refinement_calls = resume->refinement_calls;
    }

    std::vector<TraceOutcome> results(test_set.size());
    if (config.concurrency <= 1 || test_set.size() <= 1) {
        for (std::size_t i = 0; i < test_set.size(); ++i) results[i] = evaluate_trace(test_set[i], cx, done);
    } else {
        std::atomic<std::size_t> next{0};
        {
            std::vector<std::jthread> workers;
            const auto n = std::min(config.concurrency, test_set.size());
            for (std::size_t w = 0; w < n; ++w)
                workers.emplace_back([&] {
                    for (std::size_t i = next++; i < test_set.size(); i = next++)
                        results[i] = evaluate_trace(test_set[i], cx, done);
                });
        }
    }

    ConfusionCounts counts;
    for (auto& r : results) {
        for (auto& e : r.ledger) {
            if (e.cell) counts.add(*e.cell);
            m.ledger.push_back(std::move(e));
        }
        for (auto& x : r.excluded) m.excluded.push_back(std::move(x));
        m.refinement_calls += r.refinement_calls;
    }
    m.summary = compute_metrics(counts);
    std::size_t items = 0;
    for (const auto& t : test_set) items += eval_item_ids(t).size();
    m.stats = Json{{"traces", test_set.size()},
                   {"items", items},
                   {"processed", m.ledger.size()},
                   {"excluded", m.excluded.size()},
                   {"resumed", done.size()}};
    m.complete = m.excluded.empty();
    m.stop_reason = m.complete ? "done" : "items_excluded";
    m.calls = diff(gw.counts(), calls_before);
    m.warnings = log.warnings();
    if (!gw.deterministic())
        m.wall_clock_ms =
            std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started).count();
    return m;
}

std::vector<SettingResult> settings_matrix(std::span<const EvalTrace> test_set, const RunConfig& base,
                                           const GatewayFactory& make_gateway, const PromptLibrary* prompts) {
    struct Setting {
        const char* label;
        std::size_t k;
        bool feedback;
    };
    const Setting settings[] = {
        {"pred@1", 1, false}, {"pred@3", 3, false}, {"pred@1, w/ RM", 1, true}, {"pred@3, w/ RM", 3, true}};
    std::vector<SettingResult> out;
    for (const auto& s : settings) {
        auto cfg = base;
        cfg.k = s.k;
        cfg.with_feedback = s.feedback;
        auto gw = make_gateway();
        out.push_back({s.label, run_evaluation(test_set, cfg, *gw, nullptr, prompts)});
    }
    return out;
}

std::string format_settings(const std::vector<SettingResult>& results) {
    std::vector<std::pair<std::string, MetricsReport>> rows;
    for (const auto& r : results) rows.emplace_back(r.label, r.manifest.summary.value_or(compute_metrics({})));
    return format_table(rows, "Setting");
}

}  // namespace proagym
