#pragma once

// Chat-completion and embedding access: a live OpenAI-compatible HTTP backend
// and a scripted replay backend for offline runs, plus helpers for pulling
// structured JSON out of model replies.

#include <atomic>
#include <chrono>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <vector>

#include "proagym/trace.hpp"

namespace proagym {

enum class Role { system, user, assistant };

std::string_view to_string(Role r);

struct Message {
    Role role = Role::user;
    std::string content;
};

struct ChatRequest {
    std::string model_id;
    std::vector<Message> messages;
    double temperature = 0.0;
    int max_tokens = 1024;
};

/// Stable 16-hex-digit FNV-1a digest of (model_id, messages, temperature).
std::string request_digest(const ChatRequest& req);

class EmbeddingVector {
public:
    /// Scales to unit L2 norm. Throws Error on empty, non-finite or zero input.
    static EmbeddingVector normalized(std::vector<double> raw);

    const std::vector<double>& values() const noexcept { return values_; }
    std::size_t size() const noexcept { return values_.size(); }

private:
    explicit EmbeddingVector(std::vector<double> v) : values_(std::move(v)) {}
    std::vector<double> values_;
};

/// 1 - dot(a, b), clamped to [0, 2]. Throws ContractError on dimension mismatch.
double cosine_distance(const EmbeddingVector& a, const EmbeddingVector& b);

/// Strips code fences, takes the first balanced top-level object and parses
/// it; one repair pass drops trailing commas and quotes bare-word values.
Json extract_json(std::string_view text);

struct CallCounts {
    std::size_t chat = 0;
    std::size_t embed = 0;
};

class Gateway {
public:
    virtual ~Gateway() = default;

    std::string chat(const ChatRequest& req);
    EmbeddingVector embed(std::string_view text);

    CallCounts counts() const { return {chat_calls_.load(), embed_calls_.load()}; }
    /// Short description recorded in run manifests.
    virtual std::string identity() const = 0;
    /// True when replies are reproducible byte-for-byte.
    virtual bool deterministic() const { return false; }

protected:
    virtual std::string do_chat(const ChatRequest& req) = 0;
    virtual std::vector<double> do_embed(std::string_view text) = 0;

private:
    std::atomic<std::size_t> chat_calls_{0};
    std::atomic<std::size_t> embed_calls_{0};
};

/// One line of a scripted fixture file. Replies are chosen by digest first,
/// then by `match` (every substring must occur in the concatenated request
/// messages), then by plain file order. Entries are consumed on use unless
/// `repeat` is set. Entries with `embedding` answer embed() for `text`.
struct FixtureEntry {
    std::optional<std::string> digest;
    std::vector<std::string> match;
    std::string response;
    bool repeat = false;
    std::optional<std::string> text;
    std::vector<double> embedding;
};

FixtureEntry fixture_entry_from_json(const Json& j);
Json to_json(const FixtureEntry& e);

/// Deterministic pseudo-random unit-scale vector seeded by the text.
std::vector<double> scripted_embedding(std::string_view text, std::size_t dim = 64);

class ScriptedGateway final : public Gateway {
public:
    explicit ScriptedGateway(std::vector<FixtureEntry> entries, std::string name = "scripted");
    static std::unique_ptr<ScriptedGateway> from_file(const std::string& path);

    std::string identity() const override { return "scripted:" + name_; }
    bool deterministic() const override { return true; }

    /// Entries not yet consumed (repeat entries excluded).
    std::size_t remaining() const;

protected:
    std::string do_chat(const ChatRequest& req) override;
    std::vector<double> do_embed(std::string_view text) override;

private:
    mutable std::mutex mu_;
    std::vector<FixtureEntry> entries_;
    std::vector<bool> used_;
    std::string name_;
    std::size_t dim_ = 64;
};

struct RetryPolicy {
    int attempts = 3;
    std::chrono::milliseconds base_delay{500};
    double multiplier = 2.0;
    bool jitter = true;
};

struct LiveOptions {
    std::string api_base;  // e.g. https://api.openai.com/v1
    std::string api_key;
    std::string embedding_model = "text-embedding-3-small";
    RetryPolicy retry;
    int max_in_flight = 8;
    std::chrono::seconds timeout{120};

    /// Reads PROAGYM_API_BASE and PROAGYM_API_KEY.
    static LiveOptions from_env();
};

class LiveGateway final : public Gateway {
public:
    explicit LiveGateway(LiveOptions opts);

    std::string identity() const override { return "live:" + opts_.api_base; }

protected:
    std::string do_chat(const ChatRequest& req) override;
    std::vector<double> do_embed(std::string_view text) override;

private:
    std::string post_with_retry(const std::string& path, const std::string& body);

    LiveOptions opts_;
    std::string origin_;
    std::string path_prefix_;
    std::counting_semaphore<1024> in_flight_;
};

/// Sends `req`, extracts a JSON object from the reply and runs `validate`
/// on it. On an extraction or validation failure the model is re-prompted
/// once with the reason; a second failure raises StageError(stage, ...).
Json chat_structured(Gateway& gw, ChatRequest req, const std::string& stage,
                     const std::function<void(const Json&)>& validate = {});

}  // namespace proagym
