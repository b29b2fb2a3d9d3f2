#pragma once

// Activity-monitor logs to natural-language events: parse raw records, merge
// them into per-application segments, then have a model describe each one.

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "proagym/gateway.hpp"
#include "proagym/prompts.hpp"
#include "proagym/trace.hpp"

namespace proagym {

enum class InputFrom { mouse, keyboard };
enum class InputKind { click, input, pressAndRelease, scroll, other };

std::string_view to_string(InputFrom f);
std::string_view to_string(InputKind k);

struct InputAction {
    InputFrom from = InputFrom::mouse;
    InputKind kind = InputKind::other;
    /// Text for "input" actions; `key=value` pairs for structured data. For
    /// unknown kinds the original type is kept as `type=<name>`.
    std::string payload;

    friend bool operator==(const InputAction&, const InputAction&) = default;
};

enum class ActivityStatus { afk, not_afk };

struct RawRecord {
    Timestamp timestamp;
    std::int64_t duration_ms = 0;
    std::vector<InputAction> user_input;
    ActivityStatus status = ActivityStatus::not_afk;
    std::string app;
    std::vector<std::string> events;
    /// Fields not covered above, kept verbatim.
    Json extra = Json::object();

    Timestamp end() const { return Timestamp{timestamp.millis + duration_ms}; }
};

/// Accepts a JSON array or JSONL of raw records. Errors name the record index.
std::vector<RawRecord> parse_raw_trace(std::string_view input);

struct Segment {
    Timestamp start;
    Timestamp end;
    std::string app;
    std::vector<RawRecord> records;
    std::string action_summary;
};

struct MergeOptions {
    double gap_threshold_s = 5.0;
    double max_span_s = 600.0;
};

/// Drops afk records, sorts by timestamp (stable), then grows a segment while
/// the app is unchanged, the idle gap before the next record is below the
/// threshold and the segment would still fit in `max_span_s`.
std::vector<Segment> merge_segments(std::vector<RawRecord> records, const MergeOptions& opts = {});

/// Order-preserving text flattening of a segment's input actions.
std::string summarize_actions(const std::vector<RawRecord>& records);

/// Replaces every match of the patterns in keyboard payloads with
/// "[REDACTED]" and rebuilds the action summaries.
std::vector<Segment> redact(std::vector<Segment> segments, const std::vector<std::string>& patterns);

struct RenderOptions {
    std::string model_id = "gpt-4o";
    std::size_t concurrency = 1;
    const PromptLibrary* prompts = nullptr;
};

/// One event per segment, time = segment start. Errors carry the segment index.
std::vector<Event> render_events(const std::vector<Segment>& segments, Gateway& gw, const RenderOptions& opts = {});

}  // namespace proagym
