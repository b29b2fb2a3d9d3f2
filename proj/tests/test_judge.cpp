#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "proagym/error.hpp"
#include "proagym/judge.hpp"
#include "proagym/random.hpp"
#include "support.hpp"

using namespace proagym;
using testing::kJudge;
using testing::reply;
using testing::reply_text;
using testing::verdict;

namespace {

Trace window_of(std::initializer_list<const char*> texts) {
    Trace t;
    double s = 100;
    for (const auto* text : texts) t.events.push_back(Event{Timestamp::from_seconds(s++), text});
    return t;
}

AnnotationItem item_with(std::size_t candidates, std::string id = "item") {
    AnnotationItem item;
    item.item_id = std::move(id);
    for (std::size_t i = 0; i < candidates; ++i) item.candidates.emplace_back("task " + std::to_string(i));
    return item;
}

// 0 = accept, 1 = reject, 2 = reject all (single-candidate items).
AnnotationVote vote_of(int code, std::string who) {
    AnnotationVote v;
    v.annotator_id = std::move(who);
    if (code == 2) {
        v.reject_all = true;
    } else {
        v.per_candidate = {code == 0 ? VoteChoice::accept : VoteChoice::reject};
    }
    return v;
}

}  // namespace

TEST_CASE("decision normalization") {
    CHECK(normalize_decision("accepted") == Decision::accepted);
    CHECK(normalize_decision("  Accepted.") == Decision::accepted);
    CHECK(normalize_decision("**REJECTED**") == Decision::rejected);
    CHECK(normalize_decision("\"rejected\"") == Decision::rejected);
    CHECK_THROWS_AS(normalize_decision("accept"), ParseError);
    CHECK_THROWS_AS(normalize_decision("maybe"), ParseError);
    CHECK_THROWS_AS(normalize_decision(""), ParseError);
}

TEST_CASE("judge shapes the proposed task by candidate count") {
    ScriptedGateway gw({
        reply({kJudge, "\"Proposed Task\": null"}, verdict(true, "nothing needed")),
        reply({kJudge, "\"Proposed Task\": \"Summarize\""}, verdict(false)),
        reply({kJudge, "\"Proposed Task\": [", "\"B\""}, Json{{"thought", "x"}, {"judgement", "Accepted"}}),
    });
    const auto w = window_of({"The user opens a new browser tab."});
    const auto silent = judge(w, Prediction{}, gw);
    CHECK(silent.accepted());
    CHECK(silent.thought == "nothing needed");

    Prediction one;
    one.candidates = {TaskCandidate("Summarize")};
    CHECK_FALSE(judge(w, one, gw).accepted());

    Prediction two;
    two.candidates = {TaskCandidate("A"), TaskCandidate("B")};
    CHECK(judge(w, two, gw).accepted());
}

TEST_CASE("judge_task limits observations to the window") {
    JudgeOptions opts;
    opts.window = 2;
    ScriptedGateway gw({reply({"beta opens", "gamma opens"}, verdict(true), true)});
    const auto w = window_of({"alpha opens", "beta opens", "gamma opens"});
    // "alpha" is outside the window, so a fixture requiring it would not match.
    ScriptedGateway strict({reply({"alpha opens"}, verdict(true))});
    CHECK(judge_task(w, TaskCandidate("t"), gw, opts).accepted());
    CHECK_THROWS_AS(judge_task(w, TaskCandidate("t"), strict, opts), FixtureMismatch);
}

TEST_CASE("a judge reply without a valid verdict is a stage error") {
    ScriptedGateway gw({reply({}, Json{{"judgment", "perhaps"}}), reply({}, Json{{"thought", "x"}}),
                        reply({}, Json{{"thought", "x"}})});
    CHECK_THROWS_AS(judge_task(Trace{}, std::nullopt, gw), StageError);
    CHECK_THROWS_AS(judge_task(Trace{}, std::nullopt, gw), StageError);
}

TEST_CASE("outcome over every valid combination") {
    Prediction task;
    task.candidates = {TaskCandidate("t")};
    const Judgment yes{Decision::accepted, ""};
    const Judgment no{Decision::rejected, ""};
    CHECK(outcome(task, yes, std::nullopt) == 1);
    CHECK(outcome(task, no, std::nullopt) == 0);
    CHECK(outcome(Prediction{}, std::nullopt, NeedFlag::not_needed) == 1);
    CHECK(outcome(Prediction{}, std::nullopt, NeedFlag::needed) == 0);
    CHECK_THROWS_AS(outcome(task, std::nullopt, std::nullopt), ContractError);
    CHECK_THROWS_AS(outcome(task, yes, NeedFlag::needed), ContractError);
    CHECK_THROWS_AS(outcome(Prediction{}, yes, NeedFlag::needed), ContractError);
    CHECK_THROWS_AS(outcome(Prediction{}, std::nullopt, std::nullopt), ContractError);
}

TEST_CASE("property: label targets match a brute-force search over bitmasks") {
    SeededRng rng(4242);
    for (int round = 0; round < 150; ++round) {
        const auto n = 1 + static_cast<std::size_t>(rng.below(9));
        const auto k = 1 + static_cast<std::size_t>(rng.below(5));
        std::vector<TaskCandidate> cands;
        std::vector<EmbeddingVector> embs;
        std::vector<std::vector<double>> raw;
        for (std::size_t i = 0; i < n; ++i) {
            cands.emplace_back("c" + std::to_string(i));
            std::vector<double> v(4);
            for (auto& x : v) x = static_cast<double>(rng.below(2001)) / 1000.0 - 1.0;
            v[0] += 0.01;  // never the zero vector
            raw.push_back(v);
            embs.push_back(EmbeddingVector::normalized(v));
        }
        const auto got = select_label_targets(cands, embs, k);

        // Oracle: enumerate every bitmask of popcount min(k, n) in increasing
        // lexicographic order of the sorted index lists.
        const auto m = std::min(k, n);
        auto cos_dist = [&](std::size_t a, std::size_t b) {
            double dot = 0, na = 0, nb = 0;
            for (std::size_t d = 0; d < 4; ++d) {
                dot += raw[a][d] * raw[b][d];
                na += raw[a][d] * raw[a][d];
                nb += raw[b][d] * raw[b][d];
            }
            return std::clamp(1.0 - dot / std::sqrt(na * nb), 0.0, 2.0);
        };
        std::vector<std::vector<std::size_t>> subsets;
        for (unsigned mask = 0; mask < (1u << n); ++mask) {
            if (static_cast<std::size_t>(__builtin_popcount(mask)) != m) continue;
            std::vector<std::size_t> s;
            for (std::size_t i = 0; i < n; ++i)
                if (mask & (1u << i)) s.push_back(i);
            subsets.push_back(s);
        }
        std::sort(subsets.begin(), subsets.end());
        double best = std::numeric_limits<double>::infinity();
        std::vector<std::size_t> want;
        for (const auto& s : subsets) {
            double sum = 0;
            for (std::size_t a = 0; a < s.size(); ++a)
                for (std::size_t b = a + 1; b < s.size(); ++b) sum += cos_dist(s[a], s[b]);
            if (sum < best - 1e-9) {
                best = sum;
                want = s;
            }
        }
        INFO("n=" << n << " k=" << k);
        CHECK(got == want);
    }
}

TEST_CASE("label target selection edge cases") {
    std::vector<TaskCandidate> cands = {TaskCandidate("a"), TaskCandidate("b"), TaskCandidate("c")};
    std::vector<EmbeddingVector> embs = {EmbeddingVector::normalized({1, 0}), EmbeddingVector::normalized({0, 1}),
                                         EmbeddingVector::normalized({1, 0.01})};
    CHECK(select_label_targets(cands, embs, 2) == std::vector<std::size_t>{0, 2});
    CHECK(select_label_targets(cands, embs, 5) == std::vector<std::size_t>{0, 1, 2});
    CHECK_THROWS_AS(select_label_targets(cands, embs, 0), ContractError);
    CHECK_THROWS_AS(select_label_targets(std::span(cands).first(2), embs, 1), ContractError);
    // Identical embeddings tie; the lexicographically first set wins.
    std::vector<EmbeddingVector> same(3, EmbeddingVector::normalized({1, 1}));
    CHECK(select_label_targets(cands, same, 2) == std::vector<std::size_t>{0, 1});
}

TEST_CASE("majority vote over all 27 three-annotator combinations") {
    int checked = 0;
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b)
            for (int c = 0; c < 3; ++c) {
                auto item = item_with(1);
                item.votes = {vote_of(a, "x"), vote_of(b, "y"), vote_of(c, "z")};
                const std::array<int, 3> codes{a, b, c};
                const auto accepts = std::count(codes.begin(), codes.end(), 0);
                const auto alls = std::count(codes.begin(), codes.end(), 2);
                const bool label = accepts >= 2;
                for (auto amb : {AmbiguousNeed::needed, AmbiguousNeed::not_needed}) {
                    NeedFlag want;
                    if (label) {
                        want = NeedFlag::needed;
                    } else if (alls >= 2) {
                        want = NeedFlag::not_needed;
                    } else {
                        want = amb == AmbiguousNeed::needed ? NeedFlag::needed : NeedFlag::not_needed;
                    }
                    const auto r = majority_vote(item, amb);
                    REQUIRE(r.labels.size() == 1);
                    CHECK((r.labels[0] == VoteChoice::accept) == label);
                    CHECK(r.need == want);
                    ++checked;
                }
            }
    CHECK(checked == 54);
}

TEST_CASE("property: majority vote ignores vote order") {
    SeededRng rng(11);
    for (int round = 0; round < 200; ++round) {
        auto item = item_with(3);
        const auto voters = 3 + 2 * rng.below(3);
        for (std::uint64_t v = 0; v < voters; ++v) {
            AnnotationVote vote;
            vote.annotator_id = "a" + std::to_string(v);
            if (rng.below(4) == 0) {
                vote.reject_all = true;
            } else {
                for (int c = 0; c < 3; ++c) vote.per_candidate.push_back(rng.below(2) ? VoteChoice::accept : VoteChoice::reject);
            }
            item.votes.push_back(vote);
        }
        const auto before = majority_vote(item);
        rng.shuffle(std::span<AnnotationVote>(item.votes));
        CHECK(majority_vote(item) == before);
    }
}

TEST_CASE("majority vote preconditions") {
    auto item = item_with(1);
    item.votes = {vote_of(0, "x"), vote_of(0, "y")};
    CHECK_THROWS_AS(majority_vote(item), ContractError);
    item.votes.push_back(vote_of(0, "z"));
    item.votes.push_back(vote_of(0, "w"));
    CHECK_THROWS_AS(majority_vote(item), ContractError);
    item.votes = {vote_of(0, "x"), vote_of(0, "x"), vote_of(1, "y")};
    CHECK_THROWS_AS(majority_vote(item), ContractError);

    AnnotationVote wrong_len;
    wrong_len.annotator_id = "q";
    wrong_len.per_candidate = {VoteChoice::accept, VoteChoice::accept};
    CHECK_THROWS_AS(validate_vote(item, wrong_len), ContractError);
    AnnotationVote both = wrong_len;
    both.per_candidate = {VoteChoice::accept};
    both.reject_all = true;
    CHECK_THROWS_AS(validate_vote(item, both), ContractError);
}

TEST_CASE("agreement: 110 unanimous labels out of 120") {
    std::vector<AnnotationItem> items;
    for (int i = 0; i < 120; ++i) {
        auto item = item_with(1, "i" + std::to_string(i));
        if (i < 110) {
            item.votes = {vote_of(0, "x"), vote_of(0, "y"), vote_of(0, "z")};
        } else {
            item.votes = {vote_of(0, "x"), vote_of(0, "y"), vote_of(1, "z")};
        }
        items.push_back(item);
    }
    const auto s = annotator_agreement(items);
    CHECK(s.labels == 120);
    REQUIRE(s.unanimous_ratio.has_value());
    CHECK(*s.unanimous_ratio == doctest::Approx(110.0 / 120.0));
    CHECK(std::round(*s.unanimous_ratio * 10000) / 10000 == doctest::Approx(0.9167));
    // Split items agree on 1 of 3 pairs.
    CHECK(*s.mean_pairwise_ratio == doctest::Approx((110.0 + 10.0 / 3.0) / 120.0));
    CHECK_FALSE(annotator_agreement({}).unanimous_ratio.has_value());
}

TEST_CASE("vote and item JSON") {
    const auto v = annotation_vote_from_json(Json::parse(R"({"annotator_id":"a","per_candidate":["accept","reject"]})"));
    CHECK(v.per_candidate == std::vector<VoteChoice>{VoteChoice::accept, VoteChoice::reject});
    CHECK(annotation_vote_from_json(to_json(v)).per_candidate == v.per_candidate);
    CHECK(annotation_vote_from_json(Json::parse(R"({"annotator_id":"a","reject_all":true})")).effective(4) ==
          VoteChoice::reject);
    CHECK_THROWS_AS(annotation_vote_from_json(Json::parse(R"({"annotator_id":"a"})")), ParseError);
    CHECK_THROWS_AS(annotation_vote_from_json(Json::parse(R"({"annotator_id":"a","per_candidate":["yes"]})")),
                    ParseError);

    auto item = item_with(2);
    item.candidate_sources = {"gpt-4o", "claude"};
    item.trace_window = window_of({"e"});
    const auto blind = to_json(item, true);
    CHECK_FALSE(blind.contains("candidate_sources"));
    CHECK_FALSE(blind.contains("votes"));
    const auto full = annotation_item_from_json(to_json(item));
    CHECK(full.candidate_sources == item.candidate_sources);
    CHECK(full.candidates == item.candidates);
}

TEST_CASE("training rows carry labels plus a null-task row") {
    auto item = item_with(2);
    item.trace_window = window_of({"e"});
    item.resolved = Resolution{{VoteChoice::reject, VoteChoice::accept}, NeedFlag::needed};
    auto unresolved = item_with(1, "later");
    const std::vector<AnnotationItem> items = {item, unresolved};
    const auto rows = export_training_rows(items);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0]["judgment"] == "rejected");
    CHECK(rows[1]["judgment"] == "accepted");
    CHECK(rows[2]["proposed_task"].is_null());
    CHECK(rows[2]["judgment"] == "rejected");

    ScriptedGateway gw({reply({"\"Decision\": \"accepted\""}, Json{{"thought", "I needed that."}})});
    const auto explained = explain_row(rows[1], gw);
    CHECK(explained["thought"] == "I needed that.");
    CHECK(explained["judgment"] == "accepted");
}
