#pragma once

// Proactive agent: event memory, null-or-task prediction with optional top-k
// and one feedback-driven refinement, and tool-based task execution.

#include <deque>
#include <string>
#include <utility>
#include <vector>

#include "proagym/gateway.hpp"
#include "proagym/gym.hpp"
#include "proagym/trace.hpp"

namespace proagym {

class AgentMemory {
public:
    explicit AgentMemory(std::size_t window = 30, std::string user_profile = {});

    const std::deque<Event>& events() const noexcept { return events_; }
    const std::vector<std::pair<std::string, std::string>>& conversation() const noexcept { return conversation_; }
    const std::string& user_profile() const noexcept { return user_profile_; }
    std::size_t window() const noexcept { return window_; }

    /// Copy with `e` appended and the oldest events evicted past the window.
    AgentMemory observe(const Event& e) const;
    AgentMemory say(std::string speaker, std::string text) const;

private:
    std::size_t window_;
    std::deque<Event> events_;
    std::vector<std::pair<std::string, std::string>> conversation_;
    std::string user_profile_;
};

/// Free-function form of AgentMemory::observe.
inline AgentMemory observe(const AgentMemory& m, const Event& e) { return m.observe(e); }

struct AgentOptions {
    std::string model_id = "gpt-4o";
    double temperature = 0.0;
    const PromptLibrary* prompts = nullptr;
    RunLog* log = nullptr;

    const PromptLibrary& prompt_library() const { return prompts ? *prompts : PromptLibrary::defaults(); }
};

/// Up to k (1..3) candidates from one model call; replies with more are
/// truncated to k and logged.
Prediction predict(const AgentMemory& m, Gateway& gw, std::size_t k = 1, const AgentOptions& opts = {});

/// Accepted feedback returns the draft without a model call. Otherwise one
/// call shows the draft and the judge's thought and returns the refined
/// prediction, which may be empty.
Prediction refine_with_feedback(const AgentMemory& m, const Prediction& draft, const Judgment& feedback,
                                Gateway& gw, std::size_t k = 1, const AgentOptions& opts = {});

inline constexpr std::string_view kFinishTool = "finish";

struct ToolAction {
    std::string tool;
    Json arguments = Json::object();
};

struct ExecutionStep {
    ToolAction action;
    Event activity;          // the agent-source action event
    Event resulting_event;   // environment response from the gym
};

enum class Terminal { finished, interrupted, step_limit };

std::string_view to_string(Terminal t);

struct ExecutionResult {
    std::vector<ExecutionStep> steps;
    EnvironmentState final_state;
    Terminal terminal = Terminal::finished;
    std::vector<std::string> errors;
};

struct ExecuteOptions {
    std::size_t max_steps = 20;
    std::size_t max_consecutive_errors = 3;
    AgentOptions agent;
    GymOptions gym;
    /// Events preceding the task, used as history for the gym.
    Trace history;
};

/// Loop: the agent picks a tool (or "finish"), the gym turns the action into
/// one environment event and updates the state. Unknown tools are fed back as
/// errors; too many in a row ends the loop as interrupted.
ExecutionResult execute_task(const TaskCandidate& task, const EnvironmentState& state, const Scenario& scenario,
                             Gateway& gw, const ExecuteOptions& opts = {});

}  // namespace proagym
