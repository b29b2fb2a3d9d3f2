#include "proagym/gym.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <set>

#include "proagym/error.hpp"
#include "proagym/hash.hpp"
#include "proagym/random.hpp"

namespace proagym {

std::string_view to_string(Category c) {
    switch (c) {
        case Category::coding: return "coding";
        case Category::writing: return "writing";
        case Category::daily_life: return "daily_life";
    }
    return "coding";
}

Category parse_category(std::string_view s) {
    if (s == "coding") return Category::coding;
    if (s == "writing") return Category::writing;
    if (s == "daily_life" || s == "daily-life" || s == "daily life") return Category::daily_life;
    throw ParseError("category: expected coding, writing or daily_life, got '" + std::string(s) + "'");
}

const Entity* Scenario::find_entity(std::string_view id) const {
    auto it = std::find_if(entities.begin(), entities.end(), [&](const Entity& e) { return e.id == id; });
    return it == entities.end() ? nullptr : &*it;
}

void validate_scenario(const Scenario& s) {
    if (s.entities.empty()) throw ParseError("scenario: at least one entity is required");
    std::set<std::string> ids;
    for (const auto& e : s.entities) {
        if (e.id.empty()) throw ParseError("scenario: entity with empty id");
        if (!ids.insert(e.id).second) throw ParseError("scenario: duplicate entity id '" + e.id + "'");
    }
    std::set<std::string> tools;
    for (const auto& t : s.tools) {
        if (t.name.empty()) throw ParseError("scenario: tool with empty name");
        if (!tools.insert(t.name).second) throw ParseError("scenario: duplicate tool name '" + t.name + "'");
    }
}

namespace {

std::string text_of(const Json& v) {
    if (v.is_null()) return {};
    return v.is_string() ? v.get<std::string>() : v.dump();
}

std::map<std::string, std::string> string_map(const Json& j, const char* what) {
    std::map<std::string, std::string> out;
    if (j.is_null()) return out;
    if (!j.is_object()) throw ParseError(std::string(what) + ": expected an object");
    for (const auto& [k, v] : j.items()) out[k] = text_of(v);
    return out;
}

Json map_json(const std::map<std::string, std::string>& m) {
    Json j = Json::object();
    for (const auto& [k, v] : m) j[k] = v;
    return j;
}

Json entity_json(const Entity& e) {
    Json j;
    j["id"] = e.id;
    j["name"] = e.name;
    j["kind"] = e.kind;
    j["properties"] = map_json(e.properties);
    j["status"] = e.status;
    return j;
}

Entity entity_from_json(const Json& j) {
    if (!j.is_object()) throw ParseError("entity: expected an object");
    if (!j.contains("id") || !j["id"].is_string() || j["id"].get<std::string>().empty())
        throw ParseError("entity: missing id");
    Entity e;
    e.id = j["id"].get<std::string>();
    e.name = j.contains("name") ? text_of(j["name"]) : e.id;
    e.kind = j.contains("kind") ? text_of(j["kind"]) : "";
    if (j.contains("properties")) e.properties = string_map(j["properties"], "entity properties");
    e.status = j.contains("status") ? text_of(j["status"]) : "";
    return e;
}

Json tool_json(const ToolSpec& t) {
    Json j;
    j["name"] = t.name;
    j["description"] = t.description;
    j["arguments"] = map_json(t.arguments);
    return j;
}

ToolSpec tool_from_json(const Json& j) {
    if (!j.is_object() || !j.contains("name") || !j["name"].is_string()) throw ParseError("tool: missing name");
    ToolSpec t;
    t.name = j["name"].get<std::string>();
    t.description = j.contains("description") ? text_of(j["description"]) : "";
    if (j.contains("arguments")) t.arguments = string_map(j["arguments"], "tool arguments");
    return t;
}

Json events_json(std::span<const Event> events) {
    Json arr = Json::array();
    for (const auto& e : events) arr.push_back(to_json(e));
    return arr;
}

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

}  // namespace

Json to_json(const Scenario& s) {
    Json j;
    j["id"] = s.id;
    j["category"] = std::string(to_string(s.category));
    j["job"] = s.job;
    j["background"] = s.background;
    j["entities"] = Json::array();
    for (const auto& e : s.entities) j["entities"].push_back(entity_json(e));
    j["tools"] = Json::array();
    for (const auto& t : s.tools) j["tools"].push_back(tool_json(t));
    j["example_events"] = events_json(s.example_events);
    return j;
}

Scenario scenario_from_json(const Json& j) {
    if (!j.is_object()) throw ParseError("scenario: expected an object");
    Scenario s;
    s.id = j.value("id", std::string{});
    if (s.id.empty()) throw ParseError("scenario: missing id");
    s.category = parse_category(j.value("category", std::string{}));
    s.job = j.value("job", std::string{});
    s.background = j.value("background", std::string{});
    if (j.contains("entities"))
        for (const auto& e : j["entities"]) s.entities.push_back(entity_from_json(e));
    if (j.contains("tools"))
        for (const auto& t : j["tools"]) s.tools.push_back(tool_from_json(t));
    if (j.contains("example_events"))
        for (const auto& e : j["example_events"]) s.example_events.push_back(event_from_json(e));
    validate_scenario(s);
    return s;
}

std::string save_scenario(const Scenario& s, const std::string& root) {
    namespace fs = std::filesystem;
    const auto dir = fs::path(root) / std::string(to_string(s.category));
    fs::create_directories(dir);
    const auto path = (dir / (s.id + ".json")).string();
    write_file(path, to_json(s).dump(2) + "\n");
    return path;
}

Scenario load_scenario(const std::string& path) {
    try {
        return scenario_from_json(Json::parse(read_file(path)));
    } catch (const nlohmann::json::parse_error& ex) {
        throw ParseError(path + ": " + ex.what());
    }
}

EnvironmentState initial_state(const Scenario& s, Timestamp start) {
    EnvironmentState st;
    st.scenario_id = s.id;
    st.clock = start;
    for (const auto& e : s.entities) st.entity_states[e.id] = EntityState{e.properties, e.status};
    return st;
}

Json to_json(const EnvironmentState& s) {
    Json j;
    j["scenario_id"] = s.scenario_id;
    j["clock"] = s.clock.to_string();
    j["entity_states"] = Json::object();
    for (const auto& [id, st] : s.entity_states) {
        Json e;
        e["status"] = st.status;
        e["properties"] = map_json(st.properties);
        j["entity_states"][id] = e;
    }
    j["changes"] = Json::array();
    for (const auto& c : s.changes) {
        Json e;
        e["time"] = c.time.to_string();
        e["entity_id"] = c.entity_id;
        e["status"] = c.status;
        e["properties"] = map_json(c.properties);
        j["changes"].push_back(e);
    }
    return j;
}

void RunLog::warn(std::string message) {
    std::lock_guard lock(mu_);
    warnings_.push_back(std::move(message));
}

std::vector<std::string> RunLog::warnings() const {
    std::lock_guard lock(mu_);
    return warnings_;
}

Scenario generate_scenario(const std::string& seed_job, Category category, Gateway& gw,
                           std::span<const Event> reference_events, const GymOptions& opts) {
    if (seed_job.find_first_not_of(" \t\r\n") == std::string::npos)
        throw ContractError("generate_scenario: seed job must not be empty");
    const auto& prompts = opts.prompt_library();

    Scenario s;
    s.category = category;
    s.id = std::string(to_string(category)) + "-" + hex64(fnv1a64(seed_job)).substr(0, 8);

    ChatRequest req;
    req.model_id = opts.model_id;
    req.messages.push_back({Role::system, prompts.raw("seed_jobs")});

    auto stage = [&](const std::string& name, Json input, const std::function<void(const Json&)>& validate) {
        req.messages.push_back({Role::user, input.dump(4)});
        auto reply = chat_structured(gw, req, "scenario stage '" + name + "'", validate);
        req.messages.push_back({Role::assistant, reply.dump()});
        return reply;
    };

    // 1. job elaboration
    Json in1;
    in1["Seed Job"] = seed_job;
    in1["Category"] = std::string(to_string(category));
    in1["Step"] = "Elaborate the seed job into a concrete job the user performs in this category, with a "
                  "realistic background. Respond with JSON {\"job\": \"...\", \"background\": \"...\"}.";
    auto job = stage("job", in1, [](const Json& j) {
        if (!j.contains("job") || !j["job"].is_string() || j["job"].get<std::string>().empty())
            throw ParseError("missing 'job'");
    });
    s.job = job["job"].get<std::string>();
    s.background = job.contains("background") ? text_of(job["background"]) : "";

    // 2. entity enumeration
    Json in2;
    in2["Step"] = "List all entities the tasks in this scene might involve (browsers, software, devices, files) and "
                  "the tools an assistant could use on them. Respond with JSON {\"entities\": [{\"id\", \"name\", "
                  "\"kind\", \"properties\", \"status\"}], \"tools\": [{\"name\", \"description\", \"arguments\"}]}.";
    auto ents = stage("entities", in2, [](const Json& j) {
        if (!j.contains("entities") || !j["entities"].is_array() || j["entities"].empty())
            throw ParseError("'entities' must be a non-empty array");
        Scenario probe;
        for (const auto& e : j["entities"]) probe.entities.push_back(entity_from_json(e));
        if (j.contains("tools") && !j["tools"].is_null())
            for (const auto& t : j["tools"]) probe.tools.push_back(tool_from_json(t));
        validate_scenario(probe);
    });
    for (const auto& e : ents["entities"]) s.entities.push_back(entity_from_json(e));
    if (ents.contains("tools") && !ents["tools"].is_null())
        for (const auto& t : ents["tools"]) s.tools.push_back(tool_from_json(t));

    // 3. detail refinement
    Json in3;
    in3["Step"] = "Refine the scene by adding details such as entity status, property values and date time. "
                  "Respond with JSON {\"background\": \"...\", \"entities\": [{\"id\", \"status\", \"properties\"}]} "
                  "using only the entity ids listed before.";
    auto details = stage("details", in3, [&](const Json& j) {
        if (j.contains("entities") && !j["entities"].is_null()) {
            if (!j["entities"].is_array()) throw ParseError("'entities' must be an array");
            for (const auto& e : j["entities"]) {
                const auto id = e.is_object() ? e.value("id", std::string{}) : std::string{};
                if (!s.find_entity(id)) throw ParseError("unknown entity id '" + id + "'");
                if (e.contains("properties")) string_map(e["properties"], "entity properties");
            }
        }
    });
    if (details.contains("background") && details["background"].is_string() &&
        !details["background"].get<std::string>().empty())
        s.background = details["background"].get<std::string>();
    if (details.contains("entities") && details["entities"].is_array()) {
        for (const auto& patch : details["entities"]) {
            auto& e = *std::find_if(s.entities.begin(), s.entities.end(),
                                    [&](const Entity& x) { return x.id == patch["id"].get<std::string>(); });
            if (patch.contains("status") && !patch["status"].is_null()) e.status = text_of(patch["status"]);
            if (patch.contains("properties"))
                for (const auto& [k, v] : string_map(patch["properties"], "entity properties")) e.properties[k] = v;
        }
    }

    // 4. example events
    Json in4;
    in4["Step"] = "Write example events for this scene with the same granularity as the collected reference "
                  "events. Respond with JSON {\"events\": [{\"time\": \"epoch seconds\", \"event\": \"...\"}]}.";
    in4["Collected Reference Events"] = events_json(reference_events);
    auto examples = stage("examples", in4, [](const Json& j) {
        if (!j.contains("events") || !j["events"].is_array() || j["events"].empty())
            throw ParseError("'events' must be a non-empty array");
        for (const auto& e : j["events"]) event_from_json(e);
    });
    for (const auto& e : examples["events"]) s.example_events.push_back(event_from_json(e));
    std::stable_sort(s.example_events.begin(), s.example_events.end(),
                     [](const Event& a, const Event& b) { return a.time < b.time; });

    validate_scenario(s);
    return s;
}

std::vector<Event> sample_examples(const Scenario& s, std::uint64_t seed, std::size_t k) {
    const auto n = s.example_events.size();
    if (k >= n) return s.example_events;
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    SeededRng rng(seed);
    // Partial Fisher-Yates: the first k slots become the sample.
    for (std::size_t i = 0; i < k; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.below(n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    std::vector<Event> out;
    for (auto i : idx) out.push_back(s.example_events[i]);
    return out;
}

namespace {

Json state_entities_json(const EnvironmentState& state) {
    Json j = Json::object();
    for (const auto& [id, st] : state.entity_states) {
        Json e;
        e["status"] = st.status;
        e["properties"] = map_json(st.properties);
        j[id] = e;
    }
    return j;
}

Json history_json(const std::vector<Event>& events) {
    Json arr = Json::array();
    for (const auto& e : events) {
        auto j = to_json(e);
        j["source"] = std::string(to_string(e.source));
        arr.push_back(j);
    }
    return arr;
}

}  // namespace

std::optional<Event> generate_event(const EnvironmentState& state, const Trace& history, const Event& activity,
                                    std::span<const Event> examples, Gateway& gw, const GymOptions& opts) {
    if (activity.source == Source::environment)
        throw ContractError("generate_event: activity must come from the user or the agent");
    validate_event(activity);
    if (auto report = validate_trace(history); !report.ok)
        throw ContractError("generate_event: invalid history at index " + std::to_string(report.index) + ": " +
                            report.reason);

    const auto& prompts = opts.prompt_library();
    Json input;
    input["Current Time"] = state.clock.to_string();
    input["Environment State"] = state_entities_json(state);
    input["[events] History (Time Ascending)"] = history_json(tail(history.events, opts.history_window));
    input["Example Events"] = events_json(examples);
    auto act = to_json(activity);
    act["source"] = std::string(to_string(activity.source));
    input["Latest Activity"] = act;

    ChatRequest req;
    req.model_id = opts.model_id;
    req.messages = {{Role::system, prompts.render("event_generation", {{"sentinel", std::string(kNoMoreEvents)}})},
                    {Role::user, input.dump(4)}};

    std::string reason;
    for (int attempt = 0; attempt < 2; ++attempt) {
        const auto reply = gw.chat(req);
        if (reply.find(kNoMoreEvents) != std::string::npos) return std::nullopt;
        try {
            const auto j = extract_json(reply);
            if (!j.contains("event") || !j["event"].is_string() || j["event"].get<std::string>().empty())
                throw ParseError("missing 'event'");
            Event e;
            e.text = j["event"].get<std::string>();
            e.source = Source::environment;
            e.time = state.clock;
            if (j.contains("time") && !j["time"].is_null()) {
                e.time = j["time"].is_string() ? Timestamp::parse(j["time"].get<std::string>())
                                               : Timestamp::from_seconds(j["time"].get<double>());
            }
            if (e.time < state.clock) {
                if (opts.log)
                    opts.log->warn("event time " + e.time.to_string() + " earlier than clock " +
                                   state.clock.to_string() + "; clamped");
                e.time = state.clock;
            }
            return e;
        } catch (const ExtractionError& ex) {
            reason = ex.what();
        } catch (const ParseError& ex) {
            reason = ex.what();
        } catch (const nlohmann::json::exception& ex) {
            reason = ex.what();
        }
        req.messages.push_back({Role::assistant, reply});
        req.messages.push_back({Role::user, "Your previous reply could not be used (" + reason +
                                                "). Reply again with only the JSON object, or " +
                                                std::string(kNoMoreEvents) + "."});
    }
    throw StageError("event_generation", reason);
}

EnvironmentState update_state(const EnvironmentState& state, const Scenario& scenario, const Event& event,
                              Gateway& gw, const GymOptions& opts) {
    const auto& prompts = opts.prompt_library();
    const auto text = lower(event.text);
    std::vector<std::string> related;
    for (const auto& [id, st] : state.entity_states) {
        const auto* ent = scenario.find_entity(id);
        const bool named = ent && !ent->name.empty() && text.find(lower(ent->name)) != std::string::npos;
        if (named || text.find(lower(id)) != std::string::npos) related.push_back(id);
    }
    if (related.empty())
        for (const auto& [id, st] : state.entity_states) related.push_back(id);

    Json entities = Json::array();
    for (const auto& id : related) {
        const auto& st = state.entity_states.at(id);
        Json e;
        e["id"] = id;
        if (const auto* ent = scenario.find_entity(id)) {
            e["name"] = ent->name;
            e["kind"] = ent->kind;
        }
        e["status"] = st.status;
        e["properties"] = map_json(st.properties);
        Json hist = Json::array();
        for (const auto& c : state.changes) {
            if (c.entity_id != id) continue;
            Json h;
            h["time"] = c.time.to_string();
            h["status"] = c.status;
            h["properties"] = map_json(c.properties);
            hist.push_back(h);
        }
        e["History"] = hist;
        entities.push_back(e);
    }
    Json input;
    input["Event"] = to_json(event);
    input["Entities"] = entities;

    ChatRequest req;
    req.model_id = opts.model_id;
    req.messages = {{Role::system, prompts.raw("status_update")}, {Role::user, input.dump(4)}};
    const auto reply = chat_structured(gw, req, "state_update", [](const Json& j) {
        if (!j.contains("updates") || !j["updates"].is_object()) throw ParseError("'updates' must be an object");
        for (const auto& [id, patch] : j["updates"].items()) {
            if (!patch.is_object()) throw ParseError("update for '" + id + "' must be an object");
            if (patch.contains("properties")) string_map(patch["properties"], "properties");
        }
    });

    std::vector<std::string> unknown;
    for (const auto& [id, patch] : reply["updates"].items())
        if (!state.entity_states.contains(id)) unknown.push_back(id);
    if (!unknown.empty()) {
        std::string list;
        for (const auto& id : unknown) list += (list.empty() ? "" : ", ") + id;
        throw StageError("state_update", "unknown entity ids: " + list);
    }

    EnvironmentState next = state;
    for (const auto& [id, patch] : reply["updates"].items()) {
        auto& st = next.entity_states[id];
        StateChange change;
        change.time = std::max(state.clock, event.time);
        change.entity_id = id;
        if (patch.contains("status") && !patch["status"].is_null()) st.status = text_of(patch["status"]);
        if (patch.contains("properties"))
            for (const auto& [k, v] : string_map(patch["properties"], "properties")) {
                st.properties[k] = v;
                change.properties[k] = v;
            }
        change.status = st.status;
        next.changes.push_back(std::move(change));
    }
    next.clock = std::max(state.clock, event.time);
    return next;
}

}  // namespace proagym
