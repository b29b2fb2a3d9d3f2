#include "proagym/judge.hpp"

#include <algorithm>
#include <cctype>
#include <limits>
#include <set>

#include "proagym/error.hpp"

namespace proagym {

namespace {

constexpr const char* kJudgeInstruction =
    "Now give your judgment. You should complete the reasoning process in the first person.";

Json observations_json(const Trace& window, std::size_t limit) {
    Json arr = Json::array();
    for (const auto& e : tail(window.events, limit)) arr.push_back(Json{{"time", e.time.to_string()}, {"event", e.text}});
    return arr;
}

const Json* decision_field(const Json& j) {
    for (const char* key : {"judgment", "judgement"})
        if (j.contains(key)) return &j[key];
    return nullptr;
}

Judgment ask_judge(const Trace& window, Json proposed, Gateway& gw, const JudgeOptions& opts) {
    const auto& prompts = opts.prompts ? *opts.prompts : PromptLibrary::defaults();
    Json input;
    input["Observations (Time Ascending)"] = observations_json(window, opts.window);
    input["Proposed Task"] = std::move(proposed);
    input["Instruction"] = kJudgeInstruction;
    ChatRequest req;
    req.model_id = opts.model_id;
    req.messages = {{Role::system, prompts.raw("judge")}, {Role::user, input.dump(4)}};
    const auto reply = chat_structured(gw, req, "judge", [](const Json& j) {
        const auto* d = decision_field(j);
        if (!d || !d->is_string()) throw ParseError("missing 'judgment'");
    });
    Judgment out;
    try {
        out.decision = normalize_decision(decision_field(reply)->get<std::string>());
    } catch (const ParseError& ex) {
        throw StageError("judge", ex.what());
    }
    if (reply.contains("thought") && reply["thought"].is_string()) out.thought = reply["thought"].get<std::string>();
    return out;
}

}  // namespace

Decision normalize_decision(std::string_view raw) {
    std::string s;
    for (unsigned char c : raw) s += static_cast<char>(std::tolower(c));
    auto b = s.find_first_not_of(" \t\r\n.,;:!?\"'`*()[]");
    auto e = s.find_last_not_of(" \t\r\n.,;:!?\"'`*()[]");
    s = b == std::string::npos ? "" : s.substr(b, e - b + 1);
    if (s == "accepted") return Decision::accepted;
    if (s == "rejected") return Decision::rejected;
    throw ParseError("judgment must be 'accepted' or 'rejected', got '" + std::string(raw) + "'");
}

Judgment judge(const Trace& window, const Prediction& p, Gateway& gw, const JudgeOptions& opts) {
    Json proposed;
    if (p.candidates.empty()) {
        proposed = nullptr;
    } else if (p.candidates.size() == 1) {
        proposed = p.candidates.front().description();
    } else {
        proposed = Json::array();
        for (const auto& c : p.candidates) proposed.push_back(c.description());
    }
    return ask_judge(window, std::move(proposed), gw, opts);
}

Judgment judge_task(const Trace& window, const std::optional<TaskCandidate>& task, Gateway& gw,
                    const JudgeOptions& opts) {
    return ask_judge(window, task ? Json(task->description()) : Json(nullptr), gw, opts);
}

int outcome(const Prediction& p, const std::optional<Judgment>& j, const std::optional<NeedFlag>& need) {
    if (!p.silent()) {
        if (!j || need) throw ContractError("outcome: a proposed task needs a judgment and no need flag");
        return j->accepted() ? 1 : 0;
    }
    if (j || !need) throw ContractError("outcome: a silent prediction needs a need flag and no judgment");
    return *need == NeedFlag::not_needed ? 1 : 0;
}

std::vector<std::size_t> select_label_targets(std::span<const TaskCandidate> candidates,
                                              std::span<const EmbeddingVector> embeddings, std::size_t k) {
    const auto n = embeddings.size();
    if (candidates.size() != n) throw ContractError("select_label_targets: one embedding per candidate is required");
    if (n > 16) throw ContractError("select_label_targets: at most 16 candidates");
    if (k < 1) throw ContractError("select_label_targets: k must be >= 1");
    for (const auto& e : embeddings)
        if (e.size() != embeddings.front().size())
            throw ContractError("select_label_targets: embedding dimension mismatch");
    const auto m = std::min(k, n);
    std::vector<std::size_t> best(m);
    for (std::size_t i = 0; i < m; ++i) best[i] = i;
    if (m == n) return best;

    std::vector<double> dist(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) dist[i * n + j] = dist[j * n + i] = cosine_distance(embeddings[i], embeddings[j]);
    auto total = [&](const std::vector<std::size_t>& s) {
        double sum = 0.0;
        for (std::size_t a = 0; a < s.size(); ++a)
            for (std::size_t b = a + 1; b < s.size(); ++b) sum += dist[s[a] * n + s[b]];
        return sum;
    };

    // Combinations in lexicographic order, so the first minimum found wins ties.
    std::vector<std::size_t> cur = best;
    double best_total = total(cur);
    while (true) {
        std::size_t i = m;
        while (i > 0 && cur[i - 1] == n - m + (i - 1)) --i;
        if (i == 0) break;
        ++cur[i - 1];
        for (std::size_t j = i; j < m; ++j) cur[j] = cur[j - 1] + 1;
        const double t = total(cur);
        if (t < best_total - 1e-12) {
            best_total = t;
            best = cur;
        }
    }
    return best;
}

VoteChoice AnnotationVote::effective(std::size_t i) const {
    if (reject_all) return VoteChoice::reject;
    return per_candidate.at(i);
}

void validate_vote(const AnnotationItem& item, const AnnotationVote& vote) {
    if (vote.annotator_id.empty()) throw ContractError("vote: empty annotator id");
    if (vote.reject_all && !vote.per_candidate.empty())
        throw ContractError("vote: reject_all and per-candidate choices are exclusive");
    if (!vote.reject_all && vote.per_candidate.size() != item.candidates.size())
        throw ContractError("vote: expected " + std::to_string(item.candidates.size()) + " per-candidate choices, got " +
                            std::to_string(vote.per_candidate.size()));
}

Resolution majority_vote(const AnnotationItem& item, AmbiguousNeed ambiguous) {
    const auto& votes = item.votes;
    if (votes.size() < 3) throw ContractError("majority_vote: item '" + item.item_id + "' has fewer than 3 votes");
    if (votes.size() % 2 == 0) throw ContractError("majority_vote: item '" + item.item_id + "' has an even vote count");
    std::set<std::string> ids;
    for (const auto& v : votes) {
        validate_vote(item, v);
        if (!ids.insert(v.annotator_id).second)
            throw ContractError("majority_vote: duplicate annotator '" + v.annotator_id + "'");
    }
    Resolution r;
    bool any_accept = false;
    for (std::size_t i = 0; i < item.candidates.size(); ++i) {
        const auto accepts = std::count_if(votes.begin(), votes.end(),
                                           [&](const AnnotationVote& v) { return v.effective(i) == VoteChoice::accept; });
        const bool accepted = static_cast<std::size_t>(accepts) * 2 > votes.size();
        r.labels.push_back(accepted ? VoteChoice::accept : VoteChoice::reject);
        any_accept |= accepted;
    }
    const auto reject_alls =
        std::count_if(votes.begin(), votes.end(), [](const AnnotationVote& v) { return v.reject_all; });
    if (any_accept) {
        r.need = NeedFlag::needed;
    } else if (static_cast<std::size_t>(reject_alls) * 2 > votes.size()) {
        r.need = NeedFlag::not_needed;
    } else {
        r.need = ambiguous == AmbiguousNeed::needed ? NeedFlag::needed : NeedFlag::not_needed;
    }
    return r;
}

AgreementStats annotator_agreement(std::span<const AnnotationItem> items) {
    AgreementStats s;
    std::size_t unanimous = 0;
    double pairwise_sum = 0.0;
    for (const auto& item : items) {
        if (item.votes.size() < 2) continue;
        for (std::size_t i = 0; i < item.candidates.size(); ++i) {
            std::size_t pairs = 0, agree = 0;
            for (std::size_t a = 0; a < item.votes.size(); ++a)
                for (std::size_t b = a + 1; b < item.votes.size(); ++b) {
                    ++pairs;
                    agree += item.votes[a].effective(i) == item.votes[b].effective(i);
                }
            ++s.labels;
            unanimous += agree == pairs;
            pairwise_sum += static_cast<double>(agree) / static_cast<double>(pairs);
        }
    }
    if (s.labels > 0) {
        s.unanimous_ratio = static_cast<double>(unanimous) / static_cast<double>(s.labels);
        s.mean_pairwise_ratio = pairwise_sum / static_cast<double>(s.labels);
    }
    return s;
}

std::string_view to_string(VoteChoice v) { return v == VoteChoice::accept ? "accept" : "reject"; }

VoteChoice parse_vote_choice(std::string_view s) {
    if (s == "accept") return VoteChoice::accept;
    if (s == "reject") return VoteChoice::reject;
    throw ParseError("vote: expected 'accept' or 'reject', got '" + std::string(s) + "'");
}

Json to_json(const AnnotationVote& v) {
    Json j;
    j["annotator_id"] = v.annotator_id;
    if (v.reject_all) {
        j["reject_all"] = true;
    } else {
        j["per_candidate"] = Json::array();
        for (auto c : v.per_candidate) j["per_candidate"].push_back(std::string(to_string(c)));
    }
    return j;
}

AnnotationVote annotation_vote_from_json(const Json& j) {
    if (!j.is_object()) throw ParseError("vote: expected an object");
    if (!j.contains("annotator_id") || !j["annotator_id"].is_string())
        throw ParseError("vote: missing annotator_id");
    AnnotationVote v;
    v.annotator_id = j["annotator_id"].get<std::string>();
    const bool has_all = j.contains("reject_all") && !j["reject_all"].is_null();
    const bool has_each = j.contains("per_candidate") && !j["per_candidate"].is_null();
    if (has_all) {
        if (!j["reject_all"].is_boolean()) throw ParseError("vote: reject_all must be a boolean");
        v.reject_all = j["reject_all"].get<bool>();
    }
    if (has_each) {
        if (!j["per_candidate"].is_array()) throw ParseError("vote: per_candidate must be an array");
        for (const auto& c : j["per_candidate"]) {
            if (!c.is_string()) throw ParseError("vote: per_candidate entries must be strings");
            v.per_candidate.push_back(parse_vote_choice(c.get<std::string>()));
        }
    }
    if (v.reject_all == has_each) throw ParseError("vote: exactly one of per_candidate or reject_all:true is required");
    return v;
}

Json to_json(const AnnotationItem& item, bool blind) {
    Json j;
    j["item_id"] = item.item_id;
    j["trace_window"] = to_json(item.trace_window);
    j["candidates"] = Json::array();
    for (const auto& c : item.candidates) j["candidates"].push_back(c.description());
    if (!blind && !item.candidate_sources.empty()) j["candidate_sources"] = item.candidate_sources;
    if (!blind) {
        j["votes"] = Json::array();
        for (const auto& v : item.votes) j["votes"].push_back(to_json(v));
    }
    if (item.resolved) {
        Json r;
        r["labels"] = Json::array();
        for (auto l : item.resolved->labels) r["labels"].push_back(std::string(to_string(l)));
        r["need"] = to_int(item.resolved->need);
        j["resolved"] = r;
    } else {
        j["resolved"] = nullptr;
    }
    return j;
}

AnnotationItem annotation_item_from_json(const Json& j) {
    if (!j.is_object()) throw ParseError("annotation item: expected an object");
    AnnotationItem item;
    item.item_id = j.value("item_id", std::string{});
    if (item.item_id.empty()) throw ParseError("annotation item: missing item_id");
    if (j.contains("trace_window")) item.trace_window = trace_from_json(j["trace_window"]);
    if (j.contains("candidates"))
        for (const auto& c : j["candidates"]) item.candidates.emplace_back(c.get<std::string>());
    if (item.candidates.size() > 5) throw ParseError("annotation item '" + item.item_id + "': more than 5 candidates");
    if (j.contains("candidate_sources")) item.candidate_sources = j["candidate_sources"].get<std::vector<std::string>>();
    if (j.contains("votes"))
        for (const auto& v : j["votes"]) item.votes.push_back(annotation_vote_from_json(v));
    std::set<std::string> ids;
    for (const auto& v : item.votes) {
        validate_vote(item, v);
        if (!ids.insert(v.annotator_id).second)
            throw ParseError("annotation item '" + item.item_id + "': duplicate annotator " + v.annotator_id);
    }
    if (j.contains("resolved") && j["resolved"].is_object()) {
        Resolution r;
        for (const auto& l : j["resolved"]["labels"]) r.labels.push_back(parse_vote_choice(l.get<std::string>()));
        r.need = need_from_int(j["resolved"]["need"].get<int>());
        item.resolved = r;
    }
    return item;
}

std::vector<Json> export_training_rows(std::span<const AnnotationItem> items) {
    std::vector<Json> rows;
    for (const auto& item : items) {
        if (!item.resolved) continue;
        Json obs = Json::array();
        for (const auto& e : item.trace_window.events) obs.push_back(Json{{"time", e.time.to_string()}, {"event", e.text}});
        auto row = [&](Json task, Decision d) {
            Json r;
            r["item_id"] = item.item_id;
            r["observations"] = obs;
            r["proposed_task"] = std::move(task);
            r["judgment"] = std::string(to_string(d));
            r["need"] = to_int(item.resolved->need);
            rows.push_back(std::move(r));
        };
        for (std::size_t i = 0; i < item.candidates.size(); ++i)
            row(item.candidates[i].description(),
                item.resolved->labels.at(i) == VoteChoice::accept ? Decision::accepted : Decision::rejected);
        row(nullptr, item.resolved->need == NeedFlag::not_needed ? Decision::accepted : Decision::rejected);
    }
    return rows;
}

Json explain_row(const Json& row, Gateway& gw, const JudgeOptions& opts) {
    const auto& prompts = opts.prompts ? *opts.prompts : PromptLibrary::defaults();
    Json input;
    input["Observations (Time Ascending)"] = row.at("observations");
    input["Proposed Task"] = row.at("proposed_task");
    input["Decision"] = row.at("judgment");
    ChatRequest req;
    req.model_id = opts.model_id;
    req.messages = {{Role::system, prompts.raw("judge_explanation")}, {Role::user, input.dump(4)}};
    const auto reply = chat_structured(gw, req, "explanation", [](const Json& j) {
        if (!j.contains("thought") || !j["thought"].is_string()) throw ParseError("missing 'thought'");
    });
    Json out = row;
    out["thought"] = reply["thought"];
    return out;
}

}  // namespace proagym
