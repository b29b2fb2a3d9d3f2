#include "proagym/agent.hpp"

#include <algorithm>

#include "proagym/error.hpp"

namespace proagym {

AgentMemory::AgentMemory(std::size_t window, std::string user_profile)
    : window_(std::max<std::size_t>(1, window)), user_profile_(std::move(user_profile)) {}

AgentMemory AgentMemory::observe(const Event& e) const {
    validate_event(e);
    AgentMemory next = *this;
    next.events_.push_back(e);
    while (next.events_.size() > next.window_) next.events_.pop_front();
    return next;
}

AgentMemory AgentMemory::say(std::string speaker, std::string text) const {
    AgentMemory next = *this;
    next.conversation_.emplace_back(std::move(speaker), std::move(text));
    return next;
}

std::string_view to_string(Terminal t) {
    switch (t) {
        case Terminal::finished: return "finished";
        case Terminal::interrupted: return "interrupted";
        case Terminal::step_limit: return "step_limit";
    }
    return "finished";
}

namespace {

Json memory_input(const AgentMemory& m, std::size_t k) {
    Json input;
    Json events = Json::array();
    for (const auto& e : m.events()) {
        auto j = to_json(e);
        j["source"] = std::string(to_string(e.source));
        events.push_back(j);
    }
    input["Events (Time Ascending)"] = events;
    if (!m.conversation().empty()) {
        Json conv = Json::array();
        for (const auto& [who, text] : m.conversation()) conv.push_back(Json{{"speaker", who}, {"text", text}});
        input["Conversation"] = conv;
    }
    if (!m.user_profile().empty()) input["User Profile"] = m.user_profile();
    if (k > 1) {
        input["Candidate Limit"] = "You may propose no more than " + std::to_string(k) +
                                   " candidate tasks at once: set `Proactive Task` to a list of at most " +
                                   std::to_string(k) + " task descriptions, or to `null` if no assistance is needed.";
    }
    return input;
}

Prediction ask(ChatRequest req, Gateway& gw, std::size_t k, const AgentOptions& opts, const std::string& stage) {
    const auto reply = chat_structured(gw, std::move(req), stage, [](const Json& j) { prediction_from_json(j); });
    auto p = prediction_from_json(reply);
    if (p.candidates.size() > k) {
        if (opts.log)
            opts.log->warn("agent proposed " + std::to_string(p.candidates.size()) + " tasks; truncated to " +
                           std::to_string(k));
        p.candidates.erase(p.candidates.begin() + static_cast<std::ptrdiff_t>(k), p.candidates.end());
    }
    return p;
}

void check_k(std::size_t k) {
    if (k < 1 || k > kMaxCandidates) throw ContractError("predict: k must be between 1 and 3");
}

}  // namespace

Prediction predict(const AgentMemory& m, Gateway& gw, std::size_t k, const AgentOptions& opts) {
    check_k(k);
    ChatRequest req;
    req.model_id = opts.model_id;
    req.temperature = opts.temperature;
    req.messages = {{Role::system, opts.prompt_library().raw("agent")}, {Role::user, memory_input(m, k).dump(4)}};
    return ask(std::move(req), gw, k, opts, "prediction");
}

Prediction refine_with_feedback(const AgentMemory& m, const Prediction& draft, const Judgment& feedback,
                                Gateway& gw, std::size_t k, const AgentOptions& opts) {
    check_k(k);
    if (feedback.accepted()) return draft;
    auto input = memory_input(m, k);
    input["Draft Prediction"] = to_json(draft);
    input["Feedback"] = to_json(feedback);
    input["Instruction"] = "The user rejected your draft prediction. Refine it using the feedback and respond in the "
                           "same JSON format. Set `Proactive Task` to `null` to withdraw the proposal.";
    ChatRequest req;
    req.model_id = opts.model_id;
    req.temperature = opts.temperature;
    req.messages = {{Role::system, opts.prompt_library().raw("agent")}, {Role::user, input.dump(4)}};
    return ask(std::move(req), gw, k, opts, "refinement");
}

ExecutionResult execute_task(const TaskCandidate& task, const EnvironmentState& state, const Scenario& scenario,
                             Gateway& gw, const ExecuteOptions& opts) {
    if (opts.max_steps < 1) throw ContractError("execute_task: max_steps must be >= 1");
    if (scenario.tools.empty()) throw ContractError("execute_task: scenario has no tools");

    ExecutionResult result;
    result.final_state = state;
    result.terminal = Terminal::step_limit;
    Trace history = opts.history;
    const auto& prompts = opts.agent.prompt_library();

    Json tools = Json::array();
    for (const auto& t : scenario.tools) {
        Json j;
        j["name"] = t.name;
        j["description"] = t.description;
        Json args = Json::object();
        for (const auto& [k, v] : t.arguments) args[k] = v;
        j["arguments"] = args;
        tools.push_back(j);
    }

    std::size_t consecutive_errors = 0;
    std::string last_error;
    auto record_error = [&](std::string msg) {
        result.errors.push_back(msg);
        last_error = std::move(msg);
        return ++consecutive_errors >= opts.max_consecutive_errors;
    };

    while (result.steps.size() < opts.max_steps) {
        Json input;
        input["Task"] = task.description();
        input["Tools"] = tools;
        Json st = Json::object();
        for (const auto& [id, es] : result.final_state.entity_states) {
            Json e;
            e["status"] = es.status;
            Json props = Json::object();
            for (const auto& [k, v] : es.properties) props[k] = v;
            e["properties"] = props;
            st[id] = e;
        }
        input["Environment State"] = st;
        Json prev = Json::array();
        for (const auto& s : result.steps) {
            Json j;
            j["tool"] = s.action.tool;
            j["arguments"] = s.action.arguments;
            j["result"] = s.resulting_event.text;
            prev.push_back(j);
        }
        input["Previous Steps"] = prev;
        if (!last_error.empty()) input["Last Error"] = last_error;

        ChatRequest req;
        req.model_id = opts.agent.model_id;
        req.temperature = opts.agent.temperature;
        req.messages = {{Role::system, prompts.render("agent_execute", {{"finish", "\"" + std::string(kFinishTool) + "\""}})},
                        {Role::user, input.dump(4)}};

        Json reply;
        try {
            reply = chat_structured(gw, req, "execution", [](const Json& j) {
                if (!j.contains("tool") || !j["tool"].is_string() || j["tool"].get<std::string>().empty())
                    throw ParseError("missing 'tool'");
                if (j.contains("arguments") && !j["arguments"].is_null() && !j["arguments"].is_object())
                    throw ParseError("'arguments' must be an object");
            });
        } catch (const StageError& ex) {
            if (record_error(ex.what())) {
                result.terminal = Terminal::interrupted;
                return result;
            }
            continue;
        }

        ToolAction action;
        action.tool = reply["tool"].get<std::string>();
        if (reply.contains("arguments") && reply["arguments"].is_object()) action.arguments = reply["arguments"];
        if (action.tool == kFinishTool) {
            result.terminal = Terminal::finished;
            return result;
        }
        const bool known = std::any_of(scenario.tools.begin(), scenario.tools.end(),
                                       [&](const ToolSpec& t) { return t.name == action.tool; });
        if (!known) {
            if (record_error("unknown tool '" + action.tool + "'")) {
                result.terminal = Terminal::interrupted;
                return result;
            }
            continue;
        }
        consecutive_errors = 0;
        last_error.clear();

        const auto& current = result.final_state;
        Event activity{current.clock,
                       "The assistant uses the tool '" + action.tool + "' with arguments " + action.arguments.dump() + ".",
                       Source::agent};
        auto produced = generate_event(current, history, activity, {}, gw, opts.gym);
        Event resulting = produced ? *produced
                                   : Event{current.clock,
                                           "The tool '" + action.tool + "' finished without a visible change.",
                                           Source::environment};
        history.events.push_back(activity);
        history.events.push_back(resulting);
        result.final_state = update_state(current, scenario, resulting, gw, opts.gym);
        result.steps.push_back({std::move(action), std::move(activity), std::move(resulting)});
    }
    return result;
}

}  // namespace proagym
