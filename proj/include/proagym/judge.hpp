#pragma once

// User-agent judgment and the human annotation pipeline: reward-model
// judging, label-target selection, majority voting and agreement.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "proagym/gateway.hpp"
#include "proagym/prompts.hpp"
#include "proagym/trace.hpp"

namespace proagym {

struct JudgeOptions {
    std::string model_id = "reward-model";
    std::size_t window = 30;
    const PromptLibrary* prompts = nullptr;
};

/// Case-insensitive, surrounding punctuation ignored. Throws ParseError for
/// anything other than accepted/rejected.
Decision normalize_decision(std::string_view raw);

/// Judges a whole prediction: the proposed task is null when silent, a
/// string for one candidate and a list for several.
Judgment judge(const Trace& window, const Prediction& p, Gateway& gw, const JudgeOptions& opts = {});
/// Judges one candidate (nullopt means the null task).
Judgment judge_task(const Trace& window, const std::optional<TaskCandidate>& task, Gateway& gw,
                    const JudgeOptions& opts = {});

/// R_t: accepted proposal, or silence when no help was needed. `j` must be
/// present exactly when `p` proposes a task and `need` exactly when it does
/// not; otherwise ContractError.
int outcome(const Prediction& p, const std::optional<Judgment>& j, const std::optional<NeedFlag>& need);

/// Size-min(k, n) subset with the smallest sum of pairwise cosine distances,
/// by exhaustive search over every subset (n <= 16). Ties within 1e-12 go to
/// the lexicographically smallest index set. Indices are ascending.
std::vector<std::size_t> select_label_targets(std::span<const TaskCandidate> candidates,
                                              std::span<const EmbeddingVector> embeddings, std::size_t k);

enum class VoteChoice { accept, reject };

struct AnnotationVote {
    std::string annotator_id;
    std::vector<VoteChoice> per_candidate;
    bool reject_all = false;

    /// The vote on candidate i, with reject-all counting as reject.
    VoteChoice effective(std::size_t i) const;
};

struct Resolution {
    std::vector<VoteChoice> labels;
    NeedFlag need = NeedFlag::not_needed;

    friend bool operator==(const Resolution&, const Resolution&) = default;
};

struct AnnotationItem {
    std::string item_id;
    Trace trace_window;
    std::vector<TaskCandidate> candidates;
    /// Model that produced each candidate; never shown to annotators.
    std::vector<std::string> candidate_sources;
    std::vector<AnnotationVote> votes;
    std::optional<Resolution> resolved;
};

/// Throws ContractError when the vote does not fit the item (empty id, both or
/// neither of per-candidate/reject-all, wrong length).
void validate_vote(const AnnotationItem& item, const AnnotationVote& vote);

/// What N_t becomes when no candidate is accepted and reject-all is not a
/// strict majority.
enum class AmbiguousNeed { needed, not_needed };

/// Strict-majority label per candidate; N_t = 1 if any label is accept, else 0
/// when a strict majority chose reject-all, else `ambiguous`.
/// Needs an odd number (>= 3) of votes from distinct annotators.
Resolution majority_vote(const AnnotationItem& item, AmbiguousNeed ambiguous = AmbiguousNeed::needed);

struct AgreementStats {
    std::size_t labels = 0;
    std::optional<double> unanimous_ratio;
    std::optional<double> mean_pairwise_ratio;
};

/// Over every (item, candidate) label: share where all effective votes agree,
/// and the mean share of agreeing annotator pairs.
AgreementStats annotator_agreement(std::span<const AnnotationItem> items);

std::string_view to_string(VoteChoice v);
VoteChoice parse_vote_choice(std::string_view s);

Json to_json(const AnnotationVote& v);
AnnotationVote annotation_vote_from_json(const Json& j);
/// `blind` omits candidate sources.
Json to_json(const AnnotationItem& item, bool blind = false);
AnnotationItem annotation_item_from_json(const Json& j);

/// Reward-model training rows from resolved items: one per candidate with its
/// label, plus one null-task row accepted exactly when N_t = 0.
std::vector<Json> export_training_rows(std::span<const AnnotationItem> items);

/// Adds a first-person "thought" to a training row.
Json explain_row(const Json& row, Gateway& gw, const JudgeOptions& opts = {});

}  // namespace proagym
