#include "proagym/gateway.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <random>
#include <thread>

#include <httplib.h>

#include "proagym/error.hpp"
#include "proagym/hash.hpp"

namespace proagym {

std::string_view to_string(Role r) {
    switch (r) {
        case Role::system: return "system";
        case Role::user: return "user";
        case Role::assistant: return "assistant";
    }
    return "user";
}

namespace {

Json messages_json(const std::vector<Message>& messages) {
    Json arr = Json::array();
    for (const auto& m : messages) {
        Json o;
        o["role"] = std::string(to_string(m.role));
        o["content"] = m.content;
        arr.push_back(std::move(o));
    }
    return arr;
}

std::string joined_content(const ChatRequest& req) {
    std::string all;
    for (const auto& m : req.messages) {
        all += m.content;
        all += '\n';
    }
    return all;
}

}  // namespace

std::string request_digest(const ChatRequest& req) {
    Json j;
    j["model"] = req.model_id;
    j["messages"] = messages_json(req.messages);
    j["temperature"] = req.temperature;
    return hex64(fnv1a64(j.dump()));
}

EmbeddingVector EmbeddingVector::normalized(std::vector<double> raw) {
    if (raw.empty()) throw Error("embedding: empty vector");
    double sq = 0.0;
    for (double v : raw) {
        if (!std::isfinite(v)) throw Error("embedding: non-finite entry");
        sq += v * v;
    }
    if (sq == 0.0) throw Error("embedding: zero vector cannot be normalized");
    const double norm = std::sqrt(sq);
    for (double& v : raw) v /= norm;
    return EmbeddingVector(std::move(raw));
}

double cosine_distance(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.size() != b.size())
        throw ContractError("cosine_distance: dimension mismatch (" + std::to_string(a.size()) + " vs " +
                            std::to_string(b.size()) + ")");
    double dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) dot += a.values()[i] * b.values()[i];
    return std::clamp(1.0 - dot, 0.0, 2.0);
}

namespace {

std::string strip_fences(std::string_view text) {
    const auto open = text.find("```");
    if (open == std::string_view::npos) return std::string(text);
    auto body_start = text.find('\n', open);
    if (body_start == std::string_view::npos) return std::string(text);
    ++body_start;
    const auto close = text.find("```", body_start);
    auto body = text.substr(body_start, close == std::string_view::npos ? std::string_view::npos : close - body_start);
    if (body.find('{') == std::string_view::npos) return std::string(text);
    return std::string(body);
}

std::optional<std::string> first_balanced_object(std::string_view s) {
    const auto start = s.find('{');
    if (start == std::string_view::npos) return std::nullopt;
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = start; i < s.size(); ++i) {
        const char c = s[i];
        if (in_string) {
            if (escaped) {
                escaped = false;
            } else if (c == '\\') {
                escaped = true;
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') {
            in_string = true;
        } else if (c == '{') {
            ++depth;
        } else if (c == '}') {
            if (--depth == 0) return std::string(s.substr(start, i - start + 1));
        }
    }
    // An unterminated opening brace swallows the rest; later braces are nested in it.
    return std::nullopt;
}

std::string repair(std::string_view s) {
    std::string out;
    out.reserve(s.size() + 16);
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const char c = s[i];
        if (in_string) {
            out += c;
            if (escaped) {
                escaped = false;
            } else if (c == '\\') {
                escaped = true;
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') {
            in_string = true;
            out += c;
            continue;
        }
        if (c == ',') {
            auto j = i + 1;
            while (j < s.size() && std::isspace(static_cast<unsigned char>(s[j]))) ++j;
            if (j < s.size() && (s[j] == '}' || s[j] == ']')) continue;
            out += c;
            continue;
        }
        if (c == ':') {
            out += c;
            auto j = i + 1;
            while (j < s.size() && std::isspace(static_cast<unsigned char>(s[j]))) out += s[j++];
            if (j < s.size() && (std::isalpha(static_cast<unsigned char>(s[j])) || s[j] == '_')) {
                auto k = j;
                while (k < s.size() && (std::isalnum(static_cast<unsigned char>(s[k])) || s[k] == '_' || s[k] == '-')) ++k;
                const auto word = s.substr(j, k - j);
                if (word == "true" || word == "false" || word == "null") {
                    out.append(word);
                } else {
                    out += '"';
                    out.append(word);
                    out += '"';
                }
                i = k - 1;
            } else {
                i = j - 1;
            }
            continue;
        }
        out += c;
    }
    return out;
}

}  // namespace

Json extract_json(std::string_view text) {
    const auto body = strip_fences(text);
    const auto object = first_balanced_object(body);
    if (!object) throw ExtractionError("no balanced JSON object in model output", std::string(text));
    try {
        return Json::parse(*object);
    } catch (const nlohmann::json::parse_error&) {
    }
    try {
        return Json::parse(repair(*object));
    } catch (const nlohmann::json::parse_error& ex) {
        throw ExtractionError(std::string("unparseable JSON object: ") + ex.what(), std::string(text));
    }
}

std::string Gateway::chat(const ChatRequest& req) {
    if (req.messages.empty()) throw ContractError("chat: request has no messages");
    if (req.temperature < 0) throw ContractError("chat: negative temperature");
    if (req.max_tokens <= 0) throw ContractError("chat: max_tokens must be positive");
    ++chat_calls_;
    return do_chat(req);
}

EmbeddingVector Gateway::embed(std::string_view text) {
    ++embed_calls_;
    return EmbeddingVector::normalized(do_embed(text));
}

FixtureEntry fixture_entry_from_json(const Json& j) {
    if (!j.is_object()) throw ParseError("fixture: expected a JSON object");
    FixtureEntry e;
    if (j.contains("digest") && j["digest"].is_string()) e.digest = j["digest"].get<std::string>();
    if (j.contains("match")) {
        if (j["match"].is_string()) {
            e.match.push_back(j["match"].get<std::string>());
        } else if (j["match"].is_array()) {
            for (const auto& m : j["match"]) e.match.push_back(m.get<std::string>());
        } else {
            throw ParseError("fixture: 'match' must be a string or array");
        }
    }
    if (j.contains("response")) {
        e.response = j["response"].is_string() ? j["response"].get<std::string>() : j["response"].dump();
    }
    e.repeat = j.value("repeat", false);
    if (j.contains("embedding")) {
        if (!j.contains("text") || !j["text"].is_string()) throw ParseError("fixture: embedding entry needs 'text'");
        e.text = j["text"].get<std::string>();
        e.embedding = j["embedding"].get<std::vector<double>>();
    }
    return e;
}

Json to_json(const FixtureEntry& e) {
    Json j;
    if (e.digest) j["digest"] = *e.digest;
    if (!e.match.empty()) j["match"] = e.match;
    if (e.text) {
        j["text"] = *e.text;
        j["embedding"] = e.embedding;
    } else {
        j["response"] = e.response;
    }
    if (e.repeat) j["repeat"] = true;
    return j;
}

std::vector<double> scripted_embedding(std::string_view text, std::size_t dim) {
    std::uint64_t state = fnv1a64(text);
    std::vector<double> v(dim);
    for (auto& x : v) {
        const auto r = splitmix64(state);
        x = static_cast<double>(r >> 11) * (2.0 / 9007199254740992.0) - 1.0;
    }
    return v;
}

ScriptedGateway::ScriptedGateway(std::vector<FixtureEntry> entries, std::string name)
    : entries_(std::move(entries)), used_(entries_.size(), false), name_(std::move(name)) {}

std::unique_ptr<ScriptedGateway> ScriptedGateway::from_file(const std::string& path) {
    std::vector<FixtureEntry> entries;
    for (const auto& j : read_jsonl_file(path)) entries.push_back(fixture_entry_from_json(j));
    auto slash = path.find_last_of('/');
    return std::make_unique<ScriptedGateway>(std::move(entries), slash == std::string::npos ? path : path.substr(slash + 1));
}

std::size_t ScriptedGateway::remaining() const {
    std::lock_guard lock(mu_);
    std::size_t n = 0;
    for (std::size_t i = 0; i < entries_.size(); ++i)
        if (!used_[i] && !entries_[i].repeat && !entries_[i].text) ++n;
    return n;
}

std::string ScriptedGateway::do_chat(const ChatRequest& req) {
    const auto digest = request_digest(req);
    const auto content = joined_content(req);
    std::lock_guard lock(mu_);
    auto take = [&](std::size_t i) {
        if (!entries_[i].repeat) used_[i] = true;
        return entries_[i].response;
    };
    auto available = [&](std::size_t i) { return !used_[i] && !entries_[i].text; };
    for (std::size_t i = 0; i < entries_.size(); ++i)
        if (available(i) && entries_[i].digest == digest) return take(i);
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (!available(i) || entries_[i].digest || entries_[i].match.empty()) continue;
        const bool all = std::all_of(entries_[i].match.begin(), entries_[i].match.end(),
                                     [&](const std::string& m) { return content.find(m) != std::string::npos; });
        if (all) return take(i);
    }
    for (std::size_t i = 0; i < entries_.size(); ++i)
        if (available(i) && !entries_[i].digest && entries_[i].match.empty()) return take(i);
    throw FixtureMismatch(digest, "scripted backend: no fixture entry for request digest " + digest);
}

std::vector<double> ScriptedGateway::do_embed(std::string_view text) {
    std::lock_guard lock(mu_);
    for (const auto& e : entries_)
        if (e.text && *e.text == text) return e.embedding;
    return scripted_embedding(text, dim_);
}

LiveOptions LiveOptions::from_env() {
    LiveOptions o;
    if (const char* base = std::getenv("PROAGYM_API_BASE")) o.api_base = base;
    if (const char* key = std::getenv("PROAGYM_API_KEY")) o.api_key = key;
    return o;
}

LiveGateway::LiveGateway(LiveOptions opts)
    : opts_(std::move(opts)), in_flight_(std::clamp(opts_.max_in_flight, 1, 1024)) {
    if (opts_.api_base.empty()) throw ContractError("live backend: PROAGYM_API_BASE is not set");
    const auto scheme_end = opts_.api_base.find("://");
    if (scheme_end == std::string::npos) throw ContractError("live backend: api base must include a scheme");
    const auto path_start = opts_.api_base.find('/', scheme_end + 3);
    origin_ = opts_.api_base.substr(0, path_start);
    path_prefix_ = path_start == std::string::npos ? "" : opts_.api_base.substr(path_start);
    while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
}

std::string LiveGateway::post_with_retry(const std::string& path, const std::string& body) {
    in_flight_.acquire();
    struct Release {
        std::counting_semaphore<1024>& s;
        ~Release() { s.release(); }
    } release{in_flight_};

    httplib::Client client(origin_);
    client.set_connection_timeout(opts_.timeout);
    client.set_read_timeout(opts_.timeout);
    client.set_write_timeout(opts_.timeout);
    httplib::Headers headers;
    if (!opts_.api_key.empty()) headers.emplace("Authorization", "Bearer " + opts_.api_key);

    thread_local std::mt19937 jitter_rng{std::random_device{}()};
    std::string last_error;
    const int attempts = std::max(1, opts_.retry.attempts);
    for (int attempt = 1; attempt <= attempts; ++attempt) {
        auto res = client.Post(path_prefix_ + path, headers, body, "application/json");
        bool transient = true;
        if (!res) {
            last_error = "connection failed: " + httplib::to_string(res.error());
        } else if (res->status >= 200 && res->status < 300) {
            return res->body;
        } else {
            last_error = "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 300);
            transient = res->status == 429 || res->status >= 500;
        }
        if (!transient || attempt == attempts) break;
        double delay = static_cast<double>(opts_.retry.base_delay.count()) *
                       std::pow(opts_.retry.multiplier, attempt - 1);
        if (opts_.retry.jitter) delay *= std::uniform_real_distribution<double>(0.5, 1.5)(jitter_rng);
        std::this_thread::sleep_for(std::chrono::milliseconds(static_cast<long long>(delay)));
    }
    throw TransportError("live backend: " + last_error);
}

std::string LiveGateway::do_chat(const ChatRequest& req) {
    Json body;
    body["model"] = req.model_id;
    body["messages"] = messages_json(req.messages);
    body["temperature"] = req.temperature;
    body["max_tokens"] = req.max_tokens;
    const auto raw = post_with_retry("/chat/completions", body.dump());
    try {
        const auto j = Json::parse(raw);
        const auto& content = j.at("choices").at(0).at("message").at("content");
        if (content.is_null()) return {};
        return content.get<std::string>();
    } catch (const nlohmann::json::exception& ex) {
        throw TransportError(std::string("live backend: malformed chat response: ") + ex.what());
    }
}

std::vector<double> LiveGateway::do_embed(std::string_view text) {
    Json body;
    body["model"] = opts_.embedding_model;
    body["input"] = std::string(text);
    const auto raw = post_with_retry("/embeddings", body.dump());
    try {
        return Json::parse(raw).at("data").at(0).at("embedding").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& ex) {
        throw TransportError(std::string("live backend: malformed embedding response: ") + ex.what());
    }
}

Json chat_structured(Gateway& gw, ChatRequest req, const std::string& stage,
                     const std::function<void(const Json&)>& validate) {
    std::string reason;
    for (int attempt = 0; attempt < 2; ++attempt) {
        const auto reply = gw.chat(req);
        try {
            auto j = extract_json(reply);
            if (validate) validate(j);
            return j;
        } catch (const ExtractionError& ex) {
            reason = ex.what();
        } catch (const ParseError& ex) {
            reason = ex.what();
        } catch (const ContractError& ex) {
            reason = ex.what();
        } catch (const nlohmann::json::exception& ex) {
            reason = ex.what();
        }
        req.messages.push_back({Role::assistant, reply});
        req.messages.push_back({Role::user, "Your previous reply could not be used (" + reason +
                                                "). Reply again with only the JSON object in the required format."});
    }
    throw StageError(stage, reason);
}

}  // namespace proagym
