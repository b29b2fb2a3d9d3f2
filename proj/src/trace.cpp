#include "proagym/trace.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "proagym/error.hpp"

namespace proagym {

namespace {

bool is_blank(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

}  // namespace

Timestamp Timestamp::from_seconds(double seconds) {
    if (!std::isfinite(seconds)) throw ParseError("time: not a finite number");
    return Timestamp{std::llround(seconds * 1000.0)};
}

Timestamp Timestamp::parse(std::string_view s) {
    if (s.empty()) throw ParseError("time: empty string");
    std::int64_t whole = 0;
    std::size_t i = 0;
    bool any_digit = false;
    for (; i < s.size() && std::isdigit(static_cast<unsigned char>(s[i])); ++i) {
        whole = whole * 10 + (s[i] - '0');
        any_digit = true;
        if (whole > 9'000'000'000'000LL) throw ParseError("time: out of range");
    }
    std::int64_t frac = 0;
    int frac_digits = 0;
    bool round_up = false;
    if (i < s.size() && s[i] == '.') {
        ++i;
        for (; i < s.size() && std::isdigit(static_cast<unsigned char>(s[i])); ++i) {
            any_digit = true;
            if (frac_digits < 3) {
                frac = frac * 10 + (s[i] - '0');
                ++frac_digits;
            } else if (frac_digits == 3) {
                round_up = s[i] >= '5';
                ++frac_digits;
            }
        }
    }
    if (i != s.size() || !any_digit) throw ParseError("time: not a decimal number: '" + std::string(s) + "'");
    for (int d = std::min(frac_digits, 3); d < 3; ++d) frac *= 10;
    return Timestamp{whole * 1000 + frac + (round_up ? 1 : 0)};
}

std::string Timestamp::to_string() const {
    const std::int64_t whole = millis / 1000;
    const std::int64_t frac = millis % 1000;
    char buf[48];
    if (millis < 0) {
        std::snprintf(buf, sizeof buf, "-%lld.%03lld", static_cast<long long>(-whole),
                      static_cast<long long>(-frac));
    } else {
        std::snprintf(buf, sizeof buf, "%lld.%03lld", static_cast<long long>(whole),
                      static_cast<long long>(frac));
    }
    return buf;
}

std::string_view to_string(Source s) {
    switch (s) {
        case Source::user: return "user";
        case Source::environment: return "environment";
        case Source::agent: return "agent";
    }
    return "environment";
}

Source parse_source(std::string_view s) {
    if (s == "user") return Source::user;
    if (s == "environment") return Source::environment;
    if (s == "agent") return Source::agent;
    throw ParseError("source: unknown value '" + std::string(s) + "'");
}

void validate_event(const Event& e) {
    if (e.time.millis <= 0) throw ParseError("time: must be > 0");
    if (e.text.empty()) throw ParseError("event: empty text");
}

Json to_json(const Event& e) {
    Json j;
    j["time"] = e.time.to_string();
    j["event"] = e.text;
    if (e.source != Source::environment) j["source"] = std::string(to_string(e.source));
    return j;
}

Event event_from_json(const Json& j) {
    if (!j.is_object()) throw ParseError("event: expected a JSON object");
    if (!j.contains("time")) throw ParseError("time: missing field");
    if (!j.contains("event")) throw ParseError("event: missing field");
    Event e;
    const auto& t = j["time"];
    if (t.is_string()) {
        e.time = Timestamp::parse(t.get<std::string>());
    } else if (t.is_number()) {
        e.time = Timestamp::from_seconds(t.get<double>());
    } else {
        throw ParseError("time: expected a decimal string");
    }
    if (!j["event"].is_string()) throw ParseError("event: expected a string");
    e.text = j["event"].get<std::string>();
    if (j.contains("source")) {
        if (!j["source"].is_string()) throw ParseError("source: expected a string");
        e.source = parse_source(j["source"].get<std::string>());
    }
    validate_event(e);
    return e;
}

Event parse_event_line(std::string_view line) {
    Json j;
    try {
        j = Json::parse(line);
    } catch (const nlohmann::json::parse_error& ex) {
        throw ParseError(std::string("event line: malformed JSON: ") + ex.what());
    }
    return event_from_json(j);
}

std::string format_event_line(const Event& e) { return to_json(e).dump(); }

ValidationReport validate_trace(const Trace& t) {
    for (std::size_t i = 0; i < t.events.size(); ++i) {
        const auto& e = t.events[i];
        if (e.text.empty()) return {false, i, "empty text"};
        if (e.time.millis <= 0) return {false, i, "non-positive time"};
        if (i > 0 && e.time < t.events[i - 1].time) return {false, i, "time regression"};
    }
    return {};
}

Json to_json(const Trace& t) {
    Json j;
    j["scenario_id"] = t.scenario_id ? Json(*t.scenario_id) : Json(nullptr);
    j["events"] = Json::array();
    for (const auto& e : t.events) j["events"].push_back(to_json(e));
    return j;
}

Trace trace_from_json(const Json& j) {
    if (!j.is_object() || !j.contains("events") || !j["events"].is_array())
        throw ParseError("trace: expected an object with an 'events' array");
    Trace t;
    if (j.contains("scenario_id") && j["scenario_id"].is_string())
        t.scenario_id = j["scenario_id"].get<std::string>();
    for (const auto& e : j["events"]) t.events.push_back(event_from_json(e));
    return t;
}

std::vector<Event> tail(const std::vector<Event>& events, std::size_t window) {
    if (events.size() <= window) return events;
    return {events.end() - static_cast<std::ptrdiff_t>(window), events.end()};
}

TaskCandidate::TaskCandidate(std::string description) : description_(trim(description)) {
    if (description_.empty()) throw ContractError("task candidate: blank description");
}

Json to_json(const Prediction& p) {
    Json j;
    j["Purpose"] = p.purpose;
    j["Thoughts"] = p.thoughts;
    if (p.candidates.empty()) {
        j["Proactive Task"] = nullptr;
    } else if (p.candidates.size() == 1) {
        j["Proactive Task"] = p.candidates.front().description();
    } else {
        j["Proactive Task"] = Json::array();
        for (const auto& c : p.candidates) j["Proactive Task"].push_back(c.description());
    }
    j["Response"] = p.response;
    return j;
}

namespace {

std::string string_field(const Json& j, const char* key) {
    if (!j.contains(key) || j[key].is_null()) return {};
    if (j[key].is_string()) return j[key].get<std::string>();
    return j[key].dump();
}

}  // namespace

Prediction prediction_from_json(const Json& j) {
    if (!j.is_object()) throw ParseError("prediction: expected a JSON object");
    if (!j.contains("Proactive Task")) throw ParseError("prediction: missing 'Proactive Task'");
    Prediction p;
    p.purpose = string_field(j, "Purpose");
    p.thoughts = string_field(j, "Thoughts");
    p.response = string_field(j, "Response");
    const auto& task = j["Proactive Task"];
    auto add = [&](const Json& v) {
        if (v.is_null()) return;
        if (!v.is_string()) throw ParseError("prediction: task must be a string");
        const auto text = v.get<std::string>();
        if (is_blank(text) || text == "null") return;
        p.candidates.emplace_back(text);
    };
    if (task.is_array()) {
        for (const auto& v : task) add(v);
    } else {
        add(task);
    }
    if (p.candidates.empty()) p.response.clear();
    return p;
}

std::string_view to_string(Decision d) {
    return d == Decision::accepted ? "accepted" : "rejected";
}

Json to_json(const Judgment& j) {
    Json out;
    out["thought"] = j.thought;
    out["judgment"] = std::string(to_string(j.decision));
    return out;
}

NeedFlag need_from_int(int v) {
    if (v == 0) return NeedFlag::not_needed;
    if (v == 1) return NeedFlag::needed;
    throw ParseError("need: must be 0 or 1");
}

bool PredictionRecord::task_status() const {
    return std::any_of(judgment.begin(), judgment.end(), [](bool b) { return b; });
}

PredictionRecord make_record(const Event& observation, const Prediction& p,
                             const std::vector<Judgment>& judgments) {
    if (judgments.size() > p.candidates.size())
        throw ContractError("prediction record: more judgments than candidates");
    PredictionRecord r;
    r.observation = observation;
    for (const auto& c : p.candidates) r.agent_response.push_back(c.description());
    r.other_information = {{"Purpose", p.purpose}, {"Thoughts", p.thoughts}, {"Response", p.response}};
    // Candidates left unjudged after a short-circuiting accept were not accepted.
    if (!p.candidates.empty()) {
        r.judgment.assign(p.candidates.size(), false);
        for (std::size_t i = 0; i < judgments.size(); ++i) r.judgment[i] = judgments[i].accepted();
    }
    return r;
}

Json to_json(const PredictionRecord& r) {
    Json j;
    j["observation"] = to_json(r.observation);
    if (r.agent_response.empty()) {
        j["agent_response"] = nullptr;
    } else {
        j["agent_response"] = r.agent_response;
    }
    j["task_status"] = r.task_status();
    j["other_information"] = Json::object();
    for (const auto& [k, v] : r.other_information) j["other_information"][k] = v;
    j["judgment"] = Json::array();
    for (bool b : r.judgment) j["judgment"].push_back(b);
    return j;
}

PredictionRecord prediction_record_from_json(const Json& j) {
    if (!j.is_object()) throw ParseError("prediction record: expected a JSON object");
    if (!j.contains("observation")) throw ParseError("observation: missing field");
    PredictionRecord r;
    r.observation = event_from_json(j["observation"]);
    if (j.contains("agent_response") && !j["agent_response"].is_null()) {
        if (!j["agent_response"].is_array()) throw ParseError("agent_response: expected an array");
        for (const auto& v : j["agent_response"]) {
            if (!v.is_string()) throw ParseError("agent_response: expected strings");
            r.agent_response.push_back(v.get<std::string>());
        }
    }
    const char* info_key = j.contains("other_information") ? "other_information" : "other_infomation";
    if (j.contains(info_key) && j[info_key].is_object()) {
        for (const auto& [k, v] : j[info_key].items())
            r.other_information[k] = v.is_string() ? v.get<std::string>() : v.dump();
    }
    if (j.contains("judgment") && !j["judgment"].is_null()) {
        if (!j["judgment"].is_array()) throw ParseError("judgment: expected an array");
        for (const auto& v : j["judgment"]) {
            if (!v.is_boolean()) throw ParseError("judgment: expected booleans");
            r.judgment.push_back(v.get<bool>());
        }
    }
    if (!r.agent_response.empty() && !r.judgment.empty() && r.agent_response.size() != r.judgment.size())
        throw ParseError("judgment: length differs from agent_response");
    return r;
}

std::vector<Json> read_jsonl(std::string_view text) {
    std::vector<Json> out;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        auto line = text.substr(pos, nl - pos);
        ++line_no;
        if (!is_blank(line)) {
            try {
                out.push_back(Json::parse(line));
            } catch (const nlohmann::json::parse_error& ex) {
                throw ParseError("line " + std::to_string(line_no) + ": " + ex.what());
            }
        }
        pos = nl + 1;
    }
    return out;
}

std::string read_file(const std::string& path) {
    if (!std::filesystem::exists(path)) throw Error("file not found: " + path);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<Json> read_jsonl_file(const std::string& path) { return read_jsonl(read_file(path)); }

void write_file(const std::string& path, std::string_view contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write file: " + path);
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error("write failed: " + path);
}

}  // namespace proagym
