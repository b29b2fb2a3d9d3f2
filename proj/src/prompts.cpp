#include "proagym/prompts.hpp"

#include <filesystem>

#include "proagym/error.hpp"
#include "proagym/trace.hpp"

namespace proagym {

namespace {

// Reward-model judgment.
constexpr const char* kJudge = R"(<Task>
Evaluate the task proposed by the proactive assistant as the user.
</Task>

<Rule>
0. Analyze the current observation to understand your current situation and requirements.
1. If the proposed task is `null` (indicating no task is proposed under the current observation), follow these steps:
   - Accept the `null` task if you believe there is no need for a task.
   - Reject the `null` task if you believe a task is needed.
2. Minimize interruptions from the assistant by only accepting tasks that are valuable.
3. Evaluate the current observation and make a judgment on the proposed task accordingly.
</Rule>

<Format>
You should answer with the following JSON format:
{
    "thought": "Give your thoughts first, then provide the judgment of the task.",
    "judgment": "accepted or rejected"
}
</Format>
)";

// Proactive agent; shared by every agent model.
constexpr const char* kAgent = R"(<Role> You are a helpful assistant that provides proactive suggestions to the user. </Role>

<Task> Understand what the user is doing and anticipate their needs based on events. Only propose assistance when you fully understand the user's actions. Use available operations to ensure the task is feasible. Execute the task if the user accepts your proposal. </Task>

<Format> Respond in the following JSON format:
{
    "Purpose": "The purpose of the user's last action.",
    "Thoughts": "Your thoughts on the user's actions.",
    "Proactive Task": "Describe your proposed task, or set to `null` if no assistance is needed.",
    "Response": "Inform the user about your assistance if proposing a task."
}
</Format>

<Rules>
- Ensure the proposed task is relevant to the events. - Focus on the user's current needs and predict helpful tasks.
- Consider the timing of events.
- Only offer proactive assistance when necessary.
- Deduce the user's purpose and whether they need help based on event history.
- Set `Proactive Task` to `null` if the user doesn't need help.
</Rules>
)";

constexpr const char* kSeedJobs = R"(<Task>
You are tasked to generate realistic scenarios where a user might need assistance from an AI assistant. Always remember to keep the scene realistic and believable by including as much details as possible.
</Task>

<Rule>
- You will iteratively generate more information about the scene. Make sure each time you add a new detail, it is consistent with the previous details. Always generate new content based on the previous generated content.
- You can add as many details as you want, but make sure they are consistent with the previous details.
- Try to generate diverse details about the scene. You will be tasked to simulate events in the scene later.
</Rule>
)";

constexpr const char* kEventGeneration = R"(<Role>
You are tasked with simulating an environment within a system. The content labeled `Source: environment` reflects your past actions and decisions.
</Role>

<Task>
Generate and refine detailed environment settings. Based on the latest activities, create multiple events to describe changes in the environment.
</Task>

<Rules>
- Ensure the subject of the generated content aligns with the latest activities's source.
- Avoid subjective opinions or emotions; focus on objective changes.
- Ensure events are consistent with historical events labeled `[events]` and include all - changes from the activities.
- Introduce occasional failures or unexpected events for realism.
- Ensure each event is logically connected to the previous one and does not include nonexistent elements.
- Pay close attention to entity operations; if an operation is not allowed or impractical in the real or simulated environment, raise an error and explain the issue.
</Rules>

<Format>
Generate only the next event, as one JSON object:
{
    "time": "Unix epoch seconds with millisecond precision, never earlier than the current time.",
    "event": "One objective sentence describing the change in the environment."
}
If no further events can be generated with the provided user activities, reply with exactly {{sentinel}} and nothing else.
</Format>
)";

constexpr const char* kUserAgent = R"(<Role>
You are tasked with simulating a user within a system. The content labeled `Source: user` reflects your past actions and decisions.
</Role>

<Task>
Generate human-like activities with distinct characteristics and identities. You will receive events and observations from the environment; analyze these closely to decide your actions.
</Task>

<Rules>
- Respond like a real user; don't be overly predictable.
- Refer to # User Info to understand your identity.
- Critically evaluate the received information, as it may not always be accurate.
- Stay aware of environmental changes, which can occur at any time.
</Rules>

<Format>
Describe your next activity as one JSON object:
{
    "activity": "What you do next, in one sentence."
}
If your job is finished and you have nothing more to do, reply with exactly {{sentinel}} and nothing else.
</Format>
)";

constexpr const char* kStatusUpdate = R"(<Role>
You are maintaining the state of a simulated environment.
</Role>

<Task>
A new event has happened. Given the current states of the related entities and their historical state changes, decide which entities changed and what their new status and properties are.
</Task>

<Rules>
- Only change entities that the event actually affects.
- Only use entity ids listed in the input.
- Keep properties you do not change out of your answer.
</Rules>

<Format>
Respond with one JSON object:
{
    "updates": {
        "<entity id>": {"status": "new status", "properties": {"name": "value"}}
    }
}
Use an empty "updates" object when no entity changes.
</Format>
)";

constexpr const char* kSegmentRender = R"(<Task>
Translate a segment of recorded computer activity into one natural sentence describing what the user did.
</Task>

<Rules>
- Write one objective sentence in the third person, starting with "The user".
- Mention the application and the meaningful inputs (searches, typed text, key presses, clicks).
- Do not invent actions that are not in the record.
</Rules>
)";

constexpr const char* kAgentExecute = R"(<Role> You are a helpful assistant executing a task the user accepted, inside a simulated environment. </Role>

<Task> Choose the next tool action that moves the task forward, based on the environment state and the results of your previous actions. Use only the tools listed. </Task>

<Format> Respond in the following JSON format:
{
    "thought": "Your reasoning about the next step.",
    "tool": "The tool name, or {{finish}} when the task is complete.",
    "arguments": {"argument name": "value"}
}
</Format>
)";

constexpr const char* kJudgeExplanation = R"(<Task>
You are given observations, a task proposed by a proactive assistant and the user's final decision on it. Explain, in the first person as the user, why the decision was made.
</Task>

<Format>
{
    "thought": "Your first-person explanation."
}
</Format>
)";

}  // namespace

const PromptLibrary& PromptLibrary::defaults() {
    static const PromptLibrary lib = [] {
        PromptLibrary l;
        l.set("judge", kJudge);
        l.set("agent", kAgent);
        l.set("seed_jobs", kSeedJobs);
        l.set("event_generation", kEventGeneration);
        l.set("user_agent", kUserAgent);
        l.set("status_update", kStatusUpdate);
        l.set("segment_render", kSegmentRender);
        l.set("agent_execute", kAgentExecute);
        l.set("judge_explanation", kJudgeExplanation);
        return l;
    }();
    return lib;
}

PromptLibrary PromptLibrary::load(const std::string& dir) {
    namespace fs = std::filesystem;
    PromptLibrary lib = defaults();
    if (!fs::is_directory(dir)) throw Error("prompts directory not found: " + dir);
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
        lib.set(entry.path().stem().string(), read_file(entry.path().string()));
    }
    return lib;
}

const std::string& PromptLibrary::raw(std::string_view name) const {
    auto it = templates_.find(name);
    if (it == templates_.end()) throw ContractError("unknown prompt template: " + std::string(name));
    return it->second;
}

std::string PromptLibrary::render(std::string_view name, const std::map<std::string, std::string>& vars) const {
    const auto& text = raw(name);
    std::string out;
    out.reserve(text.size());
    std::size_t pos = 0;
    while (true) {
        auto open = text.find("{{", pos);
        if (open == std::string::npos) break;
        auto close = text.find("}}", open + 2);
        if (close == std::string::npos) break;
        const auto key = text.substr(open + 2, close - open - 2);
        auto it = vars.find(key);
        if (it == vars.end())
            throw ContractError("prompt '" + std::string(name) + "': no value for placeholder '" + key + "'");
        out.append(text, pos, open - pos);
        out += it->second;
        pos = close + 2;
    }
    out.append(text, pos, std::string::npos);
    return out;
}

std::vector<std::string> PromptLibrary::names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : templates_) out.push_back(k);
    return out;
}

}  // namespace proagym
