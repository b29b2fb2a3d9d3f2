#include "proagym/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <atomic>
#include <cctype>
#include <exception>
#include <optional>
#include <regex>
#include <thread>

#include "proagym/error.hpp"

namespace proagym {

std::string_view to_string(InputFrom f) { return f == InputFrom::mouse ? "mouse" : "keyboard"; }

std::string_view to_string(InputKind k) {
    switch (k) {
        case InputKind::click: return "click";
        case InputKind::input: return "input";
        case InputKind::pressAndRelease: return "pressAndRelease";
        case InputKind::scroll: return "scroll";
        case InputKind::other: return "other";
    }
    return "other";
}

namespace {

std::string scalar_text(const Json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

InputAction parse_action(const Json& j) {
    if (!j.is_object()) throw ParseError("user_input: expected objects");
    InputAction a;
    const auto from = j.value("from", std::string{});
    if (from == "mouse") {
        a.from = InputFrom::mouse;
    } else if (from == "keyboard") {
        a.from = InputFrom::keyboard;
    } else {
        throw ParseError("user_input: unknown 'from' value '" + from + "'");
    }
    std::string type;
    if (j.contains("type") && j["type"].is_string()) type = j["type"].get<std::string>();
    std::vector<std::string> parts;
    if (j.contains("data")) {
        const auto& data = j["data"];
        if (data.is_object()) {
            if (type.empty() && data.contains("type") && data["type"].is_string()) type = data["type"].get<std::string>();
            for (const auto& [k, v] : data.items())
                if (k != "type") parts.push_back(k + "=" + scalar_text(v));
        } else if (!data.is_null()) {
            parts.push_back(scalar_text(data));
        }
    }
    if (type == "click") {
        a.kind = InputKind::click;
    } else if (type == "input") {
        a.kind = InputKind::input;
    } else if (type == "pressAndRelease") {
        a.kind = InputKind::pressAndRelease;
    } else if (type == "scroll") {
        a.kind = InputKind::scroll;
    } else {
        a.kind = InputKind::other;
        if (!type.empty()) parts.insert(parts.begin(), "type=" + type);
    }
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) a.payload += ", ";
        a.payload += parts[i];
    }
    return a;
}

RawRecord parse_record(const Json& j) {
    if (!j.is_object()) throw ParseError("expected a JSON object");
    if (!j.contains("timestamp") || !j["timestamp"].is_number()) throw ParseError("timestamp: missing or not a number");
    RawRecord r;
    r.timestamp = Timestamp::from_seconds(j["timestamp"].get<double>());
    if (r.timestamp.millis <= 0) throw ParseError("timestamp: must be > 0");
    if (j.contains("duration")) {
        if (!j["duration"].is_number()) throw ParseError("duration: not a number");
        const double d = j["duration"].get<double>();
        if (d < 0) throw ParseError("duration: negative");
        r.duration_ms = Timestamp::from_seconds(d).millis;
    }
    if (j.contains("user_input") && !j["user_input"].is_null()) {
        if (!j["user_input"].is_array()) throw ParseError("user_input: expected an array");
        for (const auto& a : j["user_input"]) r.user_input.push_back(parse_action(a));
    }
    const auto status = j.value("status", std::string{"not-afk"});
    if (status == "afk") {
        r.status = ActivityStatus::afk;
    } else if (status == "not-afk") {
        r.status = ActivityStatus::not_afk;
    } else {
        throw ParseError("status: unknown value '" + status + "'");
    }
    if (!j.contains("app") || !j["app"].is_string()) throw ParseError("app: missing or not a string");
    r.app = j["app"].get<std::string>();
    if (j.contains("events") && j["events"].is_array())
        for (const auto& e : j["events"]) r.events.push_back(scalar_text(e));
    for (const auto& [k, v] : j.items()) {
        if (k != "timestamp" && k != "duration" && k != "user_input" && k != "status" && k != "app" && k != "events")
            r.extra[k] = v;
    }
    return r;
}

}  // namespace

std::vector<RawRecord> parse_raw_trace(std::string_view input) {
    const auto first = input.find_first_not_of(" \t\r\n");
    std::vector<Json> items;
    if (first == std::string_view::npos) return {};
    if (input[first] == '[') {
        Json arr;
        try {
            arr = Json::parse(input);
        } catch (const nlohmann::json::parse_error& ex) {
            throw ParseError(std::string("raw trace: malformed JSON array: ") + ex.what());
        }
        for (auto& j : arr) items.push_back(std::move(j));
    } else {
        items = read_jsonl(input);
    }
    std::vector<RawRecord> out;
    out.reserve(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
        try {
            out.push_back(parse_record(items[i]));
        } catch (const ParseError& ex) {
            throw ParseError("raw record " + std::to_string(i) + ": " + ex.what());
        }
    }
    return out;
}

std::string summarize_actions(const std::vector<RawRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        for (const auto& a : r.user_input) {
            if (!out.empty()) out += "; ";
            out += to_string(a.from);
            out += ' ';
            out += to_string(a.kind);
            if (!a.payload.empty()) {
                out += a.kind == InputKind::input ? " \"" : " (";
                out += a.payload;
                out += a.kind == InputKind::input ? "\"" : ")";
            }
        }
    }
    return out.empty() ? "no input" : out;
}

std::vector<Segment> merge_segments(std::vector<RawRecord> records, const MergeOptions& opts) {
    std::erase_if(records, [](const RawRecord& r) { return r.status == ActivityStatus::afk; });
    std::stable_sort(records.begin(), records.end(),
                     [](const RawRecord& a, const RawRecord& b) { return a.timestamp < b.timestamp; });
    const auto gap_ms = static_cast<std::int64_t>(std::llround(opts.gap_threshold_s * 1000.0));
    const auto span_ms = static_cast<std::int64_t>(std::llround(opts.max_span_s * 1000.0));

    std::vector<Segment> segments;
    for (auto& r : records) {
        if (!segments.empty()) {
            auto& seg = segments.back();
            const auto& prev = seg.records.back();
            const auto gap = r.timestamp.millis - prev.end().millis;
            const auto new_end = std::max(seg.end, r.end());
            if (r.app == seg.app && gap < gap_ms && new_end.millis - seg.start.millis <= span_ms) {
                seg.end = new_end;
                seg.records.push_back(std::move(r));
                continue;
            }
        }
        Segment seg;
        seg.start = r.timestamp;
        seg.end = r.end();
        seg.app = r.app;
        seg.records.push_back(std::move(r));
        segments.push_back(std::move(seg));
    }
    for (auto& seg : segments) seg.action_summary = summarize_actions(seg.records);
    return segments;
}

std::vector<Segment> redact(std::vector<Segment> segments, const std::vector<std::string>& patterns) {
    std::vector<std::regex> res;
    for (const auto& p : patterns) {
        try {
            res.emplace_back(p);
        } catch (const std::regex_error& ex) {
            throw ContractError("redaction pattern '" + p + "': " + ex.what());
        }
    }
    for (auto& seg : segments) {
        for (auto& rec : seg.records)
            for (auto& a : rec.user_input)
                if (a.from == InputFrom::keyboard)
                    for (const auto& re : res) a.payload = std::regex_replace(a.payload, re, "[REDACTED]");
        seg.action_summary = summarize_actions(seg.records);
    }
    return segments;
}

namespace {

std::string trim_reply(std::string s) {
    auto b = s.find_first_not_of(" \t\r\n\"");
    if (b == std::string::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n\"");
    return s.substr(b, e - b + 1);
}

Event render_one(const Segment& seg, std::size_t index, Gateway& gw, const RenderOptions& opts) {
    const auto& prompts = opts.prompts ? *opts.prompts : PromptLibrary::defaults();
    Json payload;
    payload["Application"] = seg.app;
    payload["Start Time"] = seg.start.to_string();
    payload["Duration (s)"] = Timestamp{seg.end.millis - seg.start.millis}.to_string();
    payload["Input Actions"] = seg.action_summary;
    ChatRequest req;
    req.model_id = opts.model_id;
    req.messages = {{Role::system, prompts.render("segment_render")}, {Role::user, payload.dump(4)}};
    std::string text;
    try {
        text = trim_reply(gw.chat(req));
    } catch (const Error& ex) {
        throw Error("segment " + std::to_string(index) + ": " + ex.what());
    }
    if (text.empty()) throw StageError("render", "segment " + std::to_string(index) + ": empty model output");
    return Event{seg.start, std::move(text), Source::environment};
}

}  // namespace

std::vector<Event> render_events(const std::vector<Segment>& segments, Gateway& gw, const RenderOptions& opts) {
    std::vector<std::optional<Event>> results(segments.size());
    std::vector<std::exception_ptr> errors(segments.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (auto i = next++; i < segments.size(); i = next++) {
            try {
                results[i] = render_one(segments[i], i, gw, opts);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const auto threads = std::min(std::max<std::size_t>(1, opts.concurrency), segments.size());
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
    std::vector<Event> out;
    out.reserve(results.size());
    for (auto& r : results) out.push_back(std::move(*r));
    return out;
}

}  // namespace proagym
