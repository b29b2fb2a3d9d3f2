#pragma once

// Environment gym: scenario generation, event generation and entity-state
// maintenance for simulated users.

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "proagym/gateway.hpp"
#include "proagym/prompts.hpp"
#include "proagym/trace.hpp"

namespace proagym {

enum class Category { coding, writing, daily_life };

std::string_view to_string(Category c);
Category parse_category(std::string_view s);

struct Entity {
    std::string id;
    std::string name;
    std::string kind;
    std::map<std::string, std::string> properties;
    std::string status;

    friend bool operator==(const Entity&, const Entity&) = default;
};

struct ToolSpec {
    std::string name;
    std::string description;
    std::map<std::string, std::string> arguments;  // argument name -> type tag

    friend bool operator==(const ToolSpec&, const ToolSpec&) = default;
};

struct Scenario {
    std::string id;
    Category category = Category::coding;
    std::string job;
    std::string background;
    std::vector<Entity> entities;
    std::vector<ToolSpec> tools;
    std::vector<Event> example_events;

    const Entity* find_entity(std::string_view id) const;
    friend bool operator==(const Scenario&, const Scenario&) = default;
};

/// Throws ParseError on: no entities, duplicate entity ids, duplicate tool names.
void validate_scenario(const Scenario& s);

Json to_json(const Scenario& s);
Scenario scenario_from_json(const Json& j);
/// Writes `<root>/<category>/<id>.json` and returns the path.
std::string save_scenario(const Scenario& s, const std::string& root);
Scenario load_scenario(const std::string& path);

struct EntityState {
    std::map<std::string, std::string> properties;
    std::string status;

    friend bool operator==(const EntityState&, const EntityState&) = default;
};

struct StateChange {
    Timestamp time;
    std::string entity_id;
    std::string status;
    std::map<std::string, std::string> properties;

    friend bool operator==(const StateChange&, const StateChange&) = default;
};

struct EnvironmentState {
    std::string scenario_id;
    std::map<std::string, EntityState> entity_states;
    Timestamp clock;
    /// Every applied entity change, oldest first.
    std::vector<StateChange> changes;

    friend bool operator==(const EnvironmentState&, const EnvironmentState&) = default;
};

EnvironmentState initial_state(const Scenario& s, Timestamp start);
Json to_json(const EnvironmentState& s);

/// Warnings raised while a run progresses (clamped times, truncated replies).
class RunLog {
public:
    void warn(std::string message);
    std::vector<std::string> warnings() const;

private:
    mutable std::mutex mu_;
    std::vector<std::string> warnings_;
};

struct GymOptions {
    std::string model_id = "gpt-4o";
    std::size_t history_window = 30;
    const PromptLibrary* prompts = nullptr;
    RunLog* log = nullptr;

    const PromptLibrary& prompt_library() const { return prompts ? *prompts : PromptLibrary::defaults(); }
};

/// Job elaboration, entity enumeration, detail refinement and example-event
/// drafting, one model call each (plus at most one re-prompt per stage).
/// `reference_events` are real collected events shown to the last stage.
Scenario generate_scenario(const std::string& seed_job, Category category, Gateway& gw,
                           std::span<const Event> reference_events = {}, const GymOptions& opts = {});

/// k example events without replacement, in their original order.
std::vector<Event> sample_examples(const Scenario& s, std::uint64_t seed, std::size_t k);

/// Next environment event caused by `activity` (a user or agent event), or
/// nullopt once the model reports that nothing further follows. Times earlier
/// than the clock are clamped to it and logged.
std::optional<Event> generate_event(const EnvironmentState& state, const Trace& history, const Event& activity,
                                    std::span<const Event> examples, Gateway& gw, const GymOptions& opts = {});

/// Applies the model's entity patches for `event` atomically and advances the
/// clock to max(clock, event.time). Unknown entity ids raise StageError.
EnvironmentState update_state(const EnvironmentState& state, const Scenario& scenario, const Event& event,
                              Gateway& gw, const GymOptions& opts = {});

}  // namespace proagym
