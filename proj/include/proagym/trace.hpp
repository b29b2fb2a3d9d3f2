#pragma once

// Core domain values shared by every module: events, traces, predictions,
// judgments and the JSONL record formats they travel in.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace proagym {

using Json = nlohmann::ordered_json;

/// Unix epoch time at millisecond resolution.
struct Timestamp {
    std::int64_t millis = 0;

    static Timestamp from_seconds(double seconds);
    /// Parses a non-negative decimal string of any precision; digits past the
    /// third decimal are rounded half-up.
    static Timestamp parse(std::string_view decimal);

    /// Always exactly three decimals, e.g. "1717378975.290".
    std::string to_string() const;
    double seconds() const { return static_cast<double>(millis) / 1000.0; }

    friend auto operator<=>(const Timestamp&, const Timestamp&) = default;
};

enum class Source { user, environment, agent };

std::string_view to_string(Source s);
Source parse_source(std::string_view s);

struct Event {
    Timestamp time;
    std::string text;
    Source source = Source::environment;

    friend bool operator==(const Event&, const Event&) = default;
};

/// Throws ParseError when time <= 0 or text is empty.
void validate_event(const Event& e);

Json to_json(const Event& e);
/// Accepts "time" as a decimal string or a JSON number.
Event event_from_json(const Json& j);

Event parse_event_line(std::string_view line);
std::string format_event_line(const Event& e);

struct Trace {
    std::vector<Event> events;
    std::optional<std::string> scenario_id;

    friend bool operator==(const Trace&, const Trace&) = default;
};

struct ValidationReport {
    bool ok = true;
    std::size_t index = 0;  // first offending event when !ok
    std::string reason;
};

ValidationReport validate_trace(const Trace& t);

Json to_json(const Trace& t);
Trace trace_from_json(const Json& j);

/// Last `window` events of a trace.
std::vector<Event> tail(const std::vector<Event>& events, std::size_t window);

class TaskCandidate {
public:
    /// Throws ContractError when the description is blank.
    explicit TaskCandidate(std::string description);

    const std::string& description() const noexcept { return description_; }
    friend bool operator==(const TaskCandidate&, const TaskCandidate&) = default;

private:
    std::string description_;
};

inline constexpr std::size_t kMaxCandidates = 3;

struct Prediction {
    std::vector<TaskCandidate> candidates;
    std::string purpose;
    std::string thoughts;
    std::string response;

    bool silent() const noexcept { return candidates.empty(); }
    friend bool operator==(const Prediction&, const Prediction&) = default;
};

/// Agent reply schema: "Purpose", "Thoughts", "Proactive Task", "Response".
/// An empty prediction is written with "Proactive Task": null; more than one
/// candidate is written as an array.
Json to_json(const Prediction& p);
Prediction prediction_from_json(const Json& j);

enum class Decision { accepted, rejected };

std::string_view to_string(Decision d);

struct Judgment {
    Decision decision = Decision::rejected;
    std::string thought;

    bool accepted() const noexcept { return decision == Decision::accepted; }
    friend bool operator==(const Judgment&, const Judgment&) = default;
};

Json to_json(const Judgment& j);

enum class NeedFlag : int { not_needed = 0, needed = 1 };

inline int to_int(NeedFlag n) { return static_cast<int>(n); }
NeedFlag need_from_int(int v);

/// One line of the prediction log. `task_status` is derived from the
/// judgments (any accepted candidate means the task was executed) and is
/// never taken from input.
struct PredictionRecord {
    Event observation;
    std::vector<std::string> agent_response;
    std::map<std::string, std::string> other_information;
    std::vector<bool> judgment;

    bool task_status() const;
    bool predicted() const noexcept { return !agent_response.empty(); }
    friend bool operator==(const PredictionRecord&, const PredictionRecord&) = default;
};

PredictionRecord make_record(const Event& observation, const Prediction& p,
                             const std::vector<Judgment>& judgments);

/// Writes "other_information"; reads either that or the legacy
/// "other_infomation" spelling. An empty response list is written as null.
Json to_json(const PredictionRecord& r);
PredictionRecord prediction_record_from_json(const Json& j);

/// Parses every non-blank line of a JSONL document.
std::vector<Json> read_jsonl(std::string_view text);
std::vector<Json> read_jsonl_file(const std::string& path);
std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

}  // namespace proagym
