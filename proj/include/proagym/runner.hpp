#pragma once

// End-to-end flows: user/environment simulation with a proactive agent in
// the loop, evaluation over labelled test traces, and the pred@k x feedback
// settings matrix.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "proagym/agent.hpp"
#include "proagym/gateway.hpp"
#include "proagym/gym.hpp"
#include "proagym/judge.hpp"
#include "proagym/metrics.hpp"
#include "proagym/trace.hpp"

namespace proagym {

enum class RunMode { simulate, evaluate };
/// carried: the agent remembers every earlier event of the trace.
/// independent: each item is predicted from its own event only.
enum class MemoryMode { carried, independent };

std::string_view to_string(RunMode m);
std::string_view to_string(MemoryMode m);

struct RunConfig {
    RunMode mode = RunMode::evaluate;
    std::string agent_model = "gpt-4o";
    std::string judge_model = "reward-model";
    std::string gym_model = "gpt-4o";
    std::string user_model = "gpt-4o";
    std::size_t k = 1;
    bool with_feedback = false;
    std::uint64_t seed = 0;
    std::size_t window = 30;
    MemoryMode memory = MemoryMode::carried;

    // simulation
    std::size_t event_budget = 200;
    std::size_t max_activities = 100;
    std::size_t max_execution_steps = 20;
    std::size_t example_events = 3;
    Timestamp start_time = Timestamp::from_seconds(1717335890.0);

    // evaluation
    std::size_t concurrency = 1;

    std::vector<std::string> categories;  // scenario category filter, empty = all
    std::vector<std::string> scenarios;   // scenario id filter, empty = all
    std::string out;

    /// Throws ContractError unless 1 <= k <= 3 and window >= 1.
    void validate() const;
};

Json to_json(const RunConfig& c);
RunConfig run_config_from_json(const Json& j);

/// One processed prediction point.
struct LedgerEntry {
    std::string item_id;
    Event observation;
    Prediction draft;
    std::optional<Judgment> feedback;
    bool refined = false;
    Prediction prediction;
    /// One per judged candidate, in order, stopping at the first accept.
    std::vector<Judgment> judgments;
    std::optional<NeedFlag> need;
    std::optional<int> outcome;
    std::optional<Cell> cell;
    std::optional<ScenarioCategory> category;
    std::optional<Json> execution;

    bool accepted() const;
};

Json to_json(const LedgerEntry& e);
LedgerEntry ledger_entry_from_json(const Json& j);

struct ExcludedItem {
    std::string item_id;
    std::string error;
};

struct RunManifest {
    RunConfig config;
    std::string backend;
    bool complete = true;
    std::string stop_reason;
    std::optional<std::string> error;
    std::vector<LedgerEntry> ledger;
    std::vector<ExcludedItem> excluded;
    std::optional<MetricsReport> summary;
    Json stats = Json::object();
    CallCounts calls;
    std::size_t refinement_calls = 0;
    std::vector<std::string> warnings;
    /// Omitted for deterministic backends so manifests stay byte-identical.
    std::optional<std::int64_t> wall_clock_ms;
};

Json to_json(const RunManifest& m);
RunManifest run_manifest_from_json(const Json& j);
/// Pretty JSON with a trailing newline.
std::string dump_manifest(const RunManifest& m);

/// Next simulated user activity, or nullopt when the user agent says it is
/// done. The reply may carry a "time", which is clamped to the clock.
std::optional<Event> user_activity(const Scenario& scenario, const EnvironmentState& state, const Trace& trace,
                                   Gateway& gw, const RunConfig& config, RunLog* log = nullptr,
                                   const PromptLibrary* prompts = nullptr);

/// Every entity state and change refers to a scenario entity, and the change
/// log is time-ordered and not later than the clock.
bool state_closed(const EnvironmentState& state, const Scenario& scenario);

struct SimulationResult {
    Trace trace;
    std::vector<PredictionRecord> records;
    RunManifest manifest;
    EnvironmentState final_state;
};

/// Any component error stops the scenario and returns what was produced so
/// far with the manifest marked incomplete.
SimulationResult run_simulation(const Scenario& scenario, const RunConfig& config, Gateway& gw,
                                const PromptLibrary* prompts = nullptr);

/// A test trace; events with a need flag are the evaluated items.
struct EvalTrace {
    std::string id;
    Trace trace;
    std::vector<std::optional<NeedFlag>> needs;
};

/// Items are `<trace id>#<event index>`.
std::vector<std::string> eval_item_ids(const EvalTrace& t);

Json to_json(const EvalTrace& t);
/// {"id": ..., "events": [{"time", "event", "source"?, "need"?}, ...]}
EvalTrace eval_trace_from_json(const Json& j);
std::vector<EvalTrace> load_test_set(const std::string& path);

/// Temperature is forced to 0. Items whose calls fail are excluded and
/// listed; items already in `resume` are copied instead of re-run.
RunManifest run_evaluation(std::span<const EvalTrace> test_set, const RunConfig& config, Gateway& gw,
                           const RunManifest* resume = nullptr, const PromptLibrary* prompts = nullptr);

using GatewayFactory = std::function<std::unique_ptr<Gateway>()>;

struct SettingResult {
    std::string label;
    RunManifest manifest;
};

/// pred@1, pred@3, pred@1 w/ RM, pred@3 w/ RM; each with a fresh gateway.
std::vector<SettingResult> settings_matrix(std::span<const EvalTrace> test_set, const RunConfig& base,
                                           const GatewayFactory& make_gateway, const PromptLibrary* prompts = nullptr);

std::string format_settings(const std::vector<SettingResult>& results);

}  // namespace proagym
