#include "proagym/service.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <set>

#include <httplib.h>

#include "proagym/error.hpp"
#include "proagym/metrics.hpp"
#include "proagym/random.hpp"

namespace proagym {

namespace fs = std::filesystem;

AppConfig app_config_from_json(const Json& j, AppConfig c) {
    if (!j.is_object()) throw ParseError("config: expected a JSON object");
    try {
        c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
        if (j.contains("models")) {
            const auto& m = j["models"];
            c.models.agent = m.value("agent", c.models.agent);
            c.models.judge = m.value("judge", c.models.judge);
            c.models.gym = m.value("gym", c.models.gym);
            c.models.user = m.value("user", c.models.user);
            c.models.embedding = m.value("embedding", c.models.embedding);
        }
        c.gap_threshold_s = j.value("gap_threshold_s", c.gap_threshold_s);
        c.max_span_s = j.value("max_span_s", c.max_span_s);
        c.window = j.value("window", c.window);
        c.event_budget = j.value("event_budget", c.event_budget);
        c.max_execution_steps = j.value("max_execution_steps", c.max_execution_steps);
        c.votes_per_item = j.value("votes_per_item", c.votes_per_item);
        if (j.contains("ambiguous_need")) {
            const auto v = j["ambiguous_need"].get<std::string>();
            if (v != "needed" && v != "not_needed") throw ParseError("config: ambiguous_need must be needed or not_needed");
            c.ambiguous_need = v == "needed" ? AmbiguousNeed::needed : AmbiguousNeed::not_needed;
        }
        c.redact = j.value("redact", c.redact);
        c.prompts_dir = j.value("prompts_dir", c.prompts_dir);
        c.store_path = j.value("store_path", c.store_path);
        c.ui_dir = j.value("ui_dir", c.ui_dir);
        c.test_set = j.value("test_set", c.test_set);
    } catch (const nlohmann::json::exception& ex) {
        throw ParseError(std::string("config: ") + ex.what());
    }
    if (c.window < 1) throw ParseError("config: window must be >= 1");
    if (c.votes_per_item < 3 || c.votes_per_item % 2 == 0)
        throw ParseError("config: votes_per_item must be odd and >= 3");
    if (c.gap_threshold_s < 0 || c.max_span_s < 0) throw ParseError("config: thresholds must be >= 0");
    return c;
}

Json to_json(const AppConfig& c) {
    Json j;
    j["max_in_flight"] = c.max_in_flight;
    j["models"] = Json{{"agent", c.models.agent},
                       {"judge", c.models.judge},
                       {"gym", c.models.gym},
                       {"user", c.models.user},
                       {"embedding", c.models.embedding}};
    j["gap_threshold_s"] = c.gap_threshold_s;
    j["max_span_s"] = c.max_span_s;
    j["window"] = c.window;
    j["event_budget"] = c.event_budget;
    j["max_execution_steps"] = c.max_execution_steps;
    j["votes_per_item"] = c.votes_per_item;
    j["ambiguous_need"] = c.ambiguous_need == AmbiguousNeed::needed ? "needed" : "not_needed";
    j["redact"] = c.redact;
    j["prompts_dir"] = c.prompts_dir;
    j["store_path"] = c.store_path;
    j["ui_dir"] = c.ui_dir;
    j["test_set"] = c.test_set;
    return j;
}

AppConfig AppConfig::load(const std::string& path) {
    AppConfig c;
    std::string file = path;
    if (file.empty())
        if (const char* env = std::getenv("PROAGYM_CONFIG")) file = env;
    if (!file.empty()) {
        Json j;
        try {
            j = Json::parse(read_file(file));
        } catch (const nlohmann::json::parse_error& ex) {
            throw ParseError("config " + file + ": " + ex.what());
        }
        c = app_config_from_json(j, c);
    }
    if (const char* base = std::getenv("PROAGYM_API_BASE")) c.api_base = base;
    if (const char* key = std::getenv("PROAGYM_API_KEY")) c.api_key = key;
    return c;
}

SplitIndices split_indices(std::size_t n, double test_fraction, std::uint64_t seed) {
    if (n == 0) throw ContractError("dataset_split: no items");
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw ContractError("dataset_split: test_fraction must be in (0, 1)");
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    SeededRng rng(seed);
    rng.shuffle(std::span<std::size_t>(order));
    const auto test_n = std::min<std::size_t>(n, static_cast<std::size_t>(std::llround(static_cast<double>(n) * test_fraction)));
    SplitIndices s;
    s.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(test_n));
    s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(test_n), order.end());
    std::sort(s.test.begin(), s.test.end());
    std::sort(s.train.begin(), s.train.end());
    return s;
}

DatasetBundle dataset_split(const std::vector<Json>& items, double test_fraction, std::uint64_t seed) {
    std::set<std::string> ids;
    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto& it = items[i];
        std::string id;
        if (it.is_object() && it.contains("item_id") && it["item_id"].is_string()) id = it["item_id"].get<std::string>();
        else if (it.is_object() && it.contains("id") && it["id"].is_string()) id = it["id"].get<std::string>();
        else throw ContractError("dataset_split: row " + std::to_string(i) + " has no item_id");
        if (!ids.insert(id).second) throw ContractError("dataset_split: duplicate item_id '" + id + "'");
    }
    const auto idx = split_indices(items.size(), test_fraction, seed);
    DatasetBundle b;
    for (auto i : idx.train) b.train.push_back(items[i]);
    for (auto i : idx.test) b.test.push_back(items[i]);
    b.manifest = {items.size(), b.train.size(), b.test.size(), test_fraction, seed};
    return b;
}

Json to_json(const SplitManifest& m) {
    return Json{{"total", m.total},
                {"train", m.train},
                {"test", m.test},
                {"test_fraction", m.test_fraction},
                {"seed", m.seed}};
}

struct AnnotationStore::State {
    std::vector<AnnotationItem> items;
    std::map<std::string, std::size_t> index;
};

AnnotationStore::AnnotationStore(std::string log_path, std::size_t votes_per_item, AmbiguousNeed ambiguous)
    : path_(std::move(log_path)), votes_per_item_(votes_per_item), ambiguous_(ambiguous) {
    if (votes_per_item_ < 3 || votes_per_item_ % 2 == 0)
        throw ContractError("annotation store: votes_per_item must be odd and >= 3");
    auto s = std::make_shared<State>();
    if (fs::exists(path_)) {
        const auto text = read_file(path_);
        std::size_t line_no = 0, pos = 0;
        while (pos < text.size()) {
            auto end = text.find('\n', pos);
            if (end == std::string::npos) end = text.size();
            const auto line = text.substr(pos, end - pos);
            pos = end + 1;
            ++line_no;
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            try {
                apply(*s, Json::parse(line));
            } catch (const nlohmann::json::exception& ex) {
                // A torn final line is what a crash mid-append leaves behind.
                if (pos >= text.size()) break;
                throw ParseError("annotation log " + path_ + " line " + std::to_string(line_no) + ": " + ex.what());
            }
        }
    }
    state_ = std::move(s);
}

void AnnotationStore::apply(State& s, const Json& record) const {
    const auto op = record.at("op").get<std::string>();
    if (op == "item") {
        auto item = annotation_item_from_json(record.at("item"));
        item.votes.clear();
        item.resolved.reset();
        if (s.index.contains(item.item_id)) throw ParseError("annotation log: duplicate item '" + item.item_id + "'");
        s.index[item.item_id] = s.items.size();
        s.items.push_back(std::move(item));
    } else if (op == "vote") {
        const auto id = record.at("item_id").get<std::string>();
        auto it = s.index.find(id);
        if (it == s.index.end()) throw ParseError("annotation log: vote for unknown item '" + id + "'");
        auto& item = s.items[it->second];
        item.votes.push_back(annotation_vote_from_json(record.at("vote")));
        if (item.votes.size() >= 3 && item.votes.size() % 2 == 1) item.resolved = majority_vote(item, ambiguous_);
    } else {
        throw ParseError("annotation log: unknown op '" + op + "'");
    }
}

void AnnotationStore::append(const Json& record) {
    if (const auto parent = fs::path(path_).parent_path(); !parent.empty()) fs::create_directories(parent);
    const auto line = record.dump() + "\n";
    const int fd = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd < 0) throw Error("annotation store: cannot open " + path_);
    std::size_t written = 0;
    while (written < line.size()) {
        const auto n = ::write(fd, line.data() + written, line.size() - written);
        if (n < 0) {
            ::close(fd);
            throw Error("annotation store: write failed for " + path_);
        }
        written += static_cast<std::size_t>(n);
    }
    const bool synced = ::fsync(fd) == 0;
    ::close(fd);
    if (!synced) throw Error("annotation store: fsync failed for " + path_);
}

std::shared_ptr<const AnnotationStore::State> AnnotationStore::snapshot() const {
    std::lock_guard lock(snap_mu_);
    return state_;
}

void AnnotationStore::add_item(AnnotationItem item) {
    std::lock_guard lock(write_mu_);
    auto cur = snapshot();
    if (cur->index.contains(item.item_id))
        throw ContractError("annotation store: item '" + item.item_id + "' already exists");
    item.votes.clear();
    item.resolved.reset();
    const Json record{{"op", "item"}, {"item", to_json(item)}};
    auto next = std::make_shared<State>(*cur);
    apply(*next, record);
    append(record);
    std::lock_guard snap(snap_mu_);
    state_ = std::move(next);
}

VoteResult AnnotationStore::vote(const std::string& item_id, const AnnotationVote& v) {
    std::lock_guard lock(write_mu_);
    auto cur = snapshot();
    auto it = cur->index.find(item_id);
    if (it == cur->index.end()) return {VoteStatus::unknown_item, std::nullopt};
    const auto& item = cur->items[it->second];
    validate_vote(item, v);
    for (const auto& existing : item.votes)
        if (existing.annotator_id == v.annotator_id) return {VoteStatus::duplicate, item};
    if (item.votes.size() >= votes_per_item_) return {VoteStatus::full, item};

    const Json record{{"op", "vote"}, {"item_id", item_id}, {"vote", to_json(v)}};
    auto next = std::make_shared<State>(*cur);
    apply(*next, record);
    append(record);
    auto updated = next->items[it->second];
    {
        std::lock_guard snap(snap_mu_);
        state_ = std::move(next);
    }
    return {VoteStatus::recorded, std::move(updated)};
}

std::optional<AnnotationItem> AnnotationStore::get(const std::string& item_id) const {
    auto s = snapshot();
    auto it = s->index.find(item_id);
    if (it == s->index.end()) return std::nullopt;
    return s->items[it->second];
}

std::optional<AnnotationItem> AnnotationStore::next_for(const std::string& annotator_id) const {
    auto s = snapshot();
    for (const auto& item : s->items) {
        if (item.votes.size() >= votes_per_item_) continue;
        const bool voted = std::any_of(item.votes.begin(), item.votes.end(),
                                       [&](const AnnotationVote& v) { return v.annotator_id == annotator_id; });
        if (!voted) return item;
    }
    return std::nullopt;
}

std::vector<AnnotationItem> AnnotationStore::items() const { return snapshot()->items; }

Json AnnotationStore::stats() const {
    auto s = snapshot();
    std::size_t votes = 0, resolved = 0;
    std::map<ScenarioCategory, std::size_t> categories;
    for (const auto& item : s->items) {
        votes += item.votes.size();
        if (!item.resolved) continue;
        ++resolved;
        // Categories of the human majority against itself: candidates are
        // proposals judged by the label, an item without candidates is a
        // silent prediction.
        if (item.candidates.empty()) {
            ++categories[classify(false, std::nullopt, item.resolved->need).category];
            continue;
        }
        for (auto label : item.resolved->labels) {
            const auto d = label == VoteChoice::accept ? Decision::accepted : Decision::rejected;
            ++categories[classify(true, d, item.resolved->need).category];
        }
    }
    const auto agreement = annotator_agreement(s->items);
    auto ratio_json = [](const std::optional<double>& r) { return r ? Json(*r) : Json(nullptr); };

    Json j;
    j["items"] = s->items.size();
    j["resolved"] = resolved;
    j["votes"] = votes;
    j["votes_per_item"] = votes_per_item_;
    j["progress"] = s->items.empty() ? Json(nullptr)
                                     : Json(static_cast<double>(resolved) / static_cast<double>(s->items.size()));
    j["agreement"] = Json{{"labels", agreement.labels},
                          {"unanimous", ratio_json(agreement.unanimous_ratio)},
                          {"pairwise", ratio_json(agreement.mean_pairwise_ratio)}};
    Json cats = Json::object();
    for (auto c : {ScenarioCategory::MN, ScenarioCategory::NR, ScenarioCategory::CD, ScenarioCategory::FD,
                   ScenarioCategory::WD})
        cats[std::string(to_string(c))] = categories[c];
    j["categories"] = cats;
    return j;
}

std::vector<Json> AnnotationStore::export_rows() const { return export_training_rows(snapshot()->items); }

struct AnnotationService::Impl {
    Impl(AnnotationStore& s, std::string dir) : store(s), ui_dir(std::move(dir)) {}

    AnnotationStore& store;
    std::string ui_dir;
    httplib::Server server;
    int port = -1;
};

namespace {

void send_json(httplib::Response& res, int status, const Json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json; charset=utf-8");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
    send_json(res, status, Json{{"error", message}});
}

}  // namespace

AnnotationService::AnnotationService(AnnotationStore& store, std::string ui_dir)
    : impl_(std::make_unique<Impl>(store, std::move(ui_dir))) {
    auto& srv = impl_->server;
    auto& st = impl_->store;

    srv.Get("/api/items/next", [&st](const httplib::Request& req, httplib::Response& res) {
        const auto annotator = req.get_param_value("annotator");
        if (annotator.empty()) return send_error(res, 400, "missing annotator parameter");
        auto item = st.next_for(annotator);
        if (!item) return send_error(res, 404, "no items left for annotator '" + annotator + "'");
        send_json(res, 200, to_json(*item, true));
    });

    srv.Get("/api/items/:id", [&st](const httplib::Request& req, httplib::Response& res) {
        auto item = st.get(req.path_params.at("id"));
        if (!item) return send_error(res, 404, "unknown item '" + req.path_params.at("id") + "'");
        send_json(res, 200, to_json(*item, true));
    });

    srv.Post("/api/items/:id/votes", [&st](const httplib::Request& req, httplib::Response& res) {
        const auto id = req.path_params.at("id");
        AnnotationVote vote;
        try {
            vote = annotation_vote_from_json(Json::parse(req.body));
        } catch (const nlohmann::json::exception& ex) {
            return send_error(res, 400, std::string("malformed body: ") + ex.what());
        } catch (const ParseError& ex) {
            return send_error(res, 400, ex.what());
        }
        try {
            const auto result = st.vote(id, vote);
            switch (result.status) {
                case VoteStatus::unknown_item: return send_error(res, 404, "unknown item '" + id + "'");
                case VoteStatus::duplicate:
                    return send_error(res, 409, "annotator '" + vote.annotator_id + "' already voted on '" + id + "'");
                case VoteStatus::full: return send_error(res, 409, "item '" + id + "' already has all its votes");
                case VoteStatus::recorded: break;
            }
            const auto& item = *result.item;
            Json body;
            body["item_id"] = id;
            body["votes"] = item.votes.size();
            body["resolved"] = to_json(item, true)["resolved"];
            send_json(res, 201, body);
        } catch (const ContractError& ex) {
            send_error(res, 400, ex.what());
        } catch (const Error& ex) {
            send_error(res, 500, ex.what());
        }
    });

    srv.Get("/api/stats", [&st](const httplib::Request&, httplib::Response& res) { send_json(res, 200, st.stats()); });

    srv.Get("/api/export", [&st](const httplib::Request&, httplib::Response& res) {
        Json rows = Json::array();
        for (auto& r : st.export_rows()) rows.push_back(std::move(r));
        send_json(res, 200, rows);
    });

    if (!impl_->ui_dir.empty() && fs::is_directory(impl_->ui_dir)) srv.set_mount_point("/", impl_->ui_dir);
}

AnnotationService::~AnnotationService() { stop(); }

int AnnotationService::bind(const std::string& host, int port) {
    auto& srv = impl_->server;
    if (port == 0) {
        impl_->port = srv.bind_to_any_port(host);
    } else {
        impl_->port = srv.bind_to_port(host, port) ? port : -1;
    }
    if (impl_->port < 0) throw Error("annotation service: cannot bind " + host + ":" + std::to_string(port));
    return impl_->port;
}

void AnnotationService::run() {
    if (impl_->port < 0) throw ContractError("annotation service: bind() first");
    impl_->server.listen_after_bind();
}

void AnnotationService::stop() {
    if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

void AnnotationService::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace proagym
