#pragma once

// Application config, dataset splitting, the append-only annotation store and
// the annotation HTTP API.

#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "proagym/judge.hpp"
#include "proagym/trace.hpp"

namespace proagym {

struct ModelIds {
    std::string agent = "gpt-4o";
    std::string judge = "reward-model";
    std::string gym = "gpt-4o";
    std::string user = "gpt-4o";
    std::string embedding = "text-embedding-3-small";
};

struct AppConfig {
    // Backend credentials come from the environment, never from the file.
    std::string api_base;
    std::string api_key;
    int max_in_flight = 8;

    ModelIds models;

    double gap_threshold_s = 5.0;
    double max_span_s = 600.0;
    std::size_t window = 30;
    std::size_t event_budget = 200;
    std::size_t max_execution_steps = 20;
    std::size_t votes_per_item = 3;
    AmbiguousNeed ambiguous_need = AmbiguousNeed::needed;
    std::vector<std::string> redact;

    std::string prompts_dir;  // empty = built-in templates
    std::string store_path = "data/annotations.jsonl";
    std::string ui_dir = "ui";
    std::string test_set = "fixtures/testset.jsonl";

    /// Defaults, overlaid by the JSON file at `path` (or $PROAGYM_CONFIG when
    /// `path` is empty), then by PROAGYM_API_BASE / PROAGYM_API_KEY.
    static AppConfig load(const std::string& path = {});
};

AppConfig app_config_from_json(const Json& j, AppConfig base = {});
Json to_json(const AppConfig& c);

struct SplitManifest {
    std::size_t total = 0;
    std::size_t train = 0;
    std::size_t test = 0;
    double test_fraction = 0.0;
    std::uint64_t seed = 0;
};

/// Seeded shuffle of 0..n-1; the first round(n * test_fraction) indices form
/// the test split. Both lists come back sorted.
struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

SplitIndices split_indices(std::size_t n, double test_fraction, std::uint64_t seed);

struct DatasetBundle {
    std::vector<Json> train;
    std::vector<Json> test;
    SplitManifest manifest;
};

/// Rows are identified by "item_id" (or "id"); ids must be unique so the
/// splits are disjoint. Throws ContractError on empty input or a fraction
/// outside (0, 1).
DatasetBundle dataset_split(const std::vector<Json>& items, double test_fraction, std::uint64_t seed);

Json to_json(const SplitManifest& m);

enum class VoteStatus { recorded, unknown_item, duplicate, full };

struct VoteResult {
    VoteStatus status = VoteStatus::recorded;
    std::optional<AnnotationItem> item;
};

/// Items and votes live in an append-only JSONL log; the in-memory state is a
/// fold of that log. Every mutation is flushed and fsynced before it becomes
/// visible. Writers are serialized; readers take an immutable snapshot.
class AnnotationStore {
public:
    explicit AnnotationStore(std::string log_path, std::size_t votes_per_item = 3,
                             AmbiguousNeed ambiguous = AmbiguousNeed::needed);

    /// Throws ContractError if the id already exists.
    void add_item(AnnotationItem item);
    /// Throws ContractError when the vote does not fit the item.
    VoteResult vote(const std::string& item_id, const AnnotationVote& vote);

    std::optional<AnnotationItem> get(const std::string& item_id) const;
    /// First item in insertion order that still needs votes and that
    /// `annotator_id` has not voted on.
    std::optional<AnnotationItem> next_for(const std::string& annotator_id) const;
    std::vector<AnnotationItem> items() const;

    /// Progress, agreement and label-category counts.
    Json stats() const;
    std::vector<Json> export_rows() const;

    std::size_t votes_per_item() const noexcept { return votes_per_item_; }
    const std::string& path() const noexcept { return path_; }

private:
    struct State;

    std::shared_ptr<const State> snapshot() const;
    void append(const Json& record);
    void apply(State& s, const Json& record) const;

    std::string path_;
    std::size_t votes_per_item_;
    AmbiguousNeed ambiguous_;
    std::mutex write_mu_;
    mutable std::mutex snap_mu_;
    std::shared_ptr<const State> state_;
};

/// HTTP front end for an AnnotationStore; also serves `ui_dir` statically
/// when it exists.
class AnnotationService {
public:
    AnnotationService(AnnotationStore& store, std::string ui_dir = {});
    ~AnnotationService();
    AnnotationService(const AnnotationService&) = delete;
    AnnotationService& operator=(const AnnotationService&) = delete;

    /// Port 0 picks a free port. Returns the bound port; throws Error on failure.
    int bind(const std::string& host, int port);
    /// Blocks until stop().
    void run();
    void stop();
    void wait_until_ready() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace proagym
