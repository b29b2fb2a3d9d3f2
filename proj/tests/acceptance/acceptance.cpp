// Acceptance checks, one line per criterion. Exit status is nonzero if any
// criterion fails.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "proagym/error.hpp"
#include "proagym/judge.hpp"
#include "proagym/metrics.hpp"
#include "proagym/random.hpp"
#include "proagym/runner.hpp"
#include "proagym/service.hpp"
#include "proagym/trace.hpp"

using namespace proagym;

namespace {

std::string fixture(const std::string& name) { return std::string(PROAGYM_SOURCE_DIR) + "/fixtures/" + name; }

// Collects the first failure; later checks still run so the detail is useful.
struct Check {
    std::string failure;
    void operator()(bool ok, const std::string& what) {
        if (!ok && failure.empty()) failure = what;
    }
};

struct Criterion {
    int id;
    const char* title;
    std::function<void(Check&)> body;
};

std::string fmt(double v) {
    std::ostringstream s;
    s.precision(6);
    s << v;
    return s.str();
}

// ---- 1, 2: F1 and false alarm -------------------------------------------------

struct PrRow {
    double recall, precision, f1, false_alarm;  // false_alarm < 0: not reported
};

const PrRow kRows[] = {
    {100.00, 50.42, 67.04, -1}, {71.67, 56.58, 63.24, -1}, {63.33, 54.29, 58.46, -1},
    {91.67, 53.40, 67.48, -1},  {93.33, 90.32, 91.80, -1},

    {27.47, 37.31, 31.65, 62.69}, {97.89, 45.37, 62.00, 54.63}, {100.00, 35.28, 52.15, 64.73},
    {98.11, 48.15, 64.60, 51.85}, {98.86, 38.16, 55.06, 61.84}, {99.06, 49.76, 66.25, 50.24},
    {98.02, 44.00, 60.74, 56.00}, {100.00, 49.78, 66.47, 50.22},

    {99.32, 65.32, 78.80, 34.68}, {55.45, 63.54, 59.22, 36.46}, {100.00, 65.35, 79.05, 34.65},
    {100.00, 63.56, 77.72, 36.44}, {56.76, 55.26, 56.00, 44.74}, {100.00, 63.30, 77.53, 36.70},
    {100.00, 52.79, 69.10, 47.21}, {77.08, 42.52, 54.81, 57.41}, {95.12, 61.58, 74.76, 38.42},
};

void f1_rows(Check& check) {
    for (const auto& r : kRows) {
        const double pct = f1_from_pr(r.recall, r.precision);
        const double frac = f1_from_pr(r.recall / 100, r.precision / 100) * 100;
        const auto tag = fmt(r.recall) + "/" + fmt(r.precision);
        check(std::abs(pct - r.f1) <= 0.01 + 1e-9, "F1 " + tag + " = " + fmt(pct) + ", want " + fmt(r.f1));
        check(std::abs(frac - r.f1) <= 0.01 + 1e-9, "F1 (fractions) " + tag + " = " + fmt(frac));
    }
}

void false_alarm_identity(Check& check) {
    SeededRng rng(2);
    for (int i = 0; i < 5000; ++i) {
        const ConfusionCounts c{rng.below(60), rng.below(60), rng.below(60), rng.below(60)};
        const auto m = compute_metrics(c);
        if (c.tp + c.fp == 0) {
            check(!m.precision && !m.false_alarm, "precision/false alarm defined with no positives");
            continue;
        }
        check(*m.precision + *m.false_alarm == 1.0, "precision + false alarm != 1");
        check(std::abs(*m.false_alarm - double(c.fp) / double(c.tp + c.fp)) < 1e-12, "false alarm != fp / (tp + fp)");
    }
    for (const auto& r : kRows) {
        if (r.false_alarm < 0) continue;
        check(std::abs((100 - r.precision) - r.false_alarm) <= 0.1 + 1e-9, "false alarm row " + fmt(r.precision));
    }
}

// ---- 3: classification and accuracy ----------------------------------------

void classification(Check& check) {
    using D = Decision;
    struct Row {
        bool predicted;
        std::optional<D> decision;
        NeedFlag need;
        Cell cell;
        ScenarioCategory cat;
        int outcome;
    };
    const Row table[] = {
        {true, D::accepted, NeedFlag::needed, Cell::tp, ScenarioCategory::CD, 1},
        {true, D::accepted, NeedFlag::not_needed, Cell::tp, ScenarioCategory::FD, 1},
        {true, D::rejected, NeedFlag::not_needed, Cell::fp, ScenarioCategory::FD, 0},
        {true, D::rejected, NeedFlag::needed, Cell::fp, ScenarioCategory::WD, 0},
        {false, std::nullopt, NeedFlag::not_needed, Cell::tn, ScenarioCategory::NR, 1},
        {false, std::nullopt, NeedFlag::needed, Cell::fn, ScenarioCategory::MN, 0},
    };
    for (const auto& r : table) {
        const auto got = classify(r.predicted, r.decision, r.need);
        check(got.cell == r.cell && got.category == r.cat, "classify row " + std::string(to_string(r.cell)));
        Prediction p;
        if (r.predicted) p.candidates = {TaskCandidate("task")};
        std::optional<Judgment> j;
        std::optional<NeedFlag> need;
        if (r.predicted) j = Judgment{*r.decision, ""};
        else need = r.need;
        check(outcome(p, j, need) == r.outcome, "outcome row " + std::string(to_string(r.cell)));
    }
    // Every other combination is illegal.
    for (bool predicted : {true, false})
        for (auto d : {std::optional<D>{}, std::optional<D>{D::accepted}, std::optional<D>{D::rejected}})
            for (auto n : {NeedFlag::needed, NeedFlag::not_needed}) {
                if (predicted == d.has_value()) continue;
                bool threw = false;
                try {
                    classify(predicted, d, n);
                } catch (const ContractError&) {
                    threw = true;
                }
                check(threw, "illegal classify input accepted");
            }

    SeededRng rng(33);
    for (int run = 0; run < 1000; ++run) {
        std::vector<LabeledRecord> recs;
        const auto n = 1 + rng.below(50);
        std::uint64_t good = 0;
        for (std::uint64_t i = 0; i < n; ++i) {
            PredictionRecord r;
            r.observation = Event{Timestamp{1000}, "x"};
            const bool predicted = rng.below(2);
            const bool accepted = predicted && rng.below(2);
            if (predicted) {
                r.agent_response = {"task"};
                r.judgment = {accepted};
            }
            const auto need = rng.below(2) ? NeedFlag::needed : NeedFlag::not_needed;
            good += predicted ? accepted : need == NeedFlag::not_needed;
            recs.push_back({std::to_string(i), r, need});
        }
        const auto m = aggregate_run(recs);
        check(m.accuracy && std::abs(*m.accuracy - double(good) / double(n)) < 1e-12,
              "mean outcome != accuracy in run " + std::to_string(run));
    }
}

// ---- 4: label target selection ---------------------------------------------

void label_targets(Check& check) {
    SeededRng rng(404);
    for (int round = 0; round < 200; ++round) {
        const auto n = 1 + static_cast<std::size_t>(rng.below(10));
        const auto k = 1 + static_cast<std::size_t>(rng.below(4));
        std::vector<TaskCandidate> cands;
        std::vector<EmbeddingVector> embs;
        std::vector<std::vector<double>> raw;
        for (std::size_t i = 0; i < n; ++i) {
            cands.emplace_back("c" + std::to_string(i));
            std::vector<double> v(5);
            for (auto& x : v) x = static_cast<double>(rng.below(2001)) / 1000.0 - 1.0;
            v[0] += 0.01;
            raw.push_back(v);
            embs.push_back(EmbeddingVector::normalized(v));
        }
        auto dist = [&](std::size_t a, std::size_t b) {
            double dot = 0, na = 0, nb = 0;
            for (std::size_t d = 0; d < raw[a].size(); ++d) {
                dot += raw[a][d] * raw[b][d];
                na += raw[a][d] * raw[a][d];
                nb += raw[b][d] * raw[b][d];
            }
            return std::clamp(1.0 - dot / std::sqrt(na * nb), 0.0, 2.0);
        };
        const auto m = std::min(k, n);
        std::vector<std::vector<std::size_t>> subsets;
        for (unsigned mask = 0; mask < (1u << n); ++mask) {
            if (static_cast<std::size_t>(__builtin_popcount(mask)) != m) continue;
            std::vector<std::size_t> s;
            for (std::size_t i = 0; i < n; ++i)
                if (mask & (1u << i)) s.push_back(i);
            subsets.push_back(std::move(s));
        }
        std::sort(subsets.begin(), subsets.end());
        double best = std::numeric_limits<double>::infinity();
        std::vector<std::size_t> want;
        for (const auto& s : subsets) {
            double sum = 0;
            for (std::size_t a = 0; a < s.size(); ++a)
                for (std::size_t b = a + 1; b < s.size(); ++b) sum += dist(s[a], s[b]);
            if (sum < best - 1e-9) {
                best = sum;
                want = s;
            }
        }
        check(select_label_targets(cands, embs, k) == want,
              "n=" + std::to_string(n) + " k=" + std::to_string(k) + " differs from brute force");
    }
}

// ---- 5: majority vote and agreement ----------------------------------------

AnnotationVote vote(std::string who, std::vector<VoteChoice> per, bool reject_all = false) {
    AnnotationVote v;
    v.annotator_id = std::move(who);
    v.per_candidate = std::move(per);
    v.reject_all = reject_all;
    return v;
}

void majority(Check& check) {
    // Single candidate: 0 accept, 1 reject, 2 reject-all.
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b)
            for (int c = 0; c < 3; ++c) {
                AnnotationItem item;
                item.item_id = "x";
                item.candidates = {TaskCandidate("t")};
                int accepts = 0, alls = 0;
                const std::array<int, 3> codes{a, b, c};
                for (std::size_t i = 0; i < 3; ++i) {
                    const auto who = "a" + std::to_string(i);
                    if (codes[i] == 2) item.votes.push_back(vote(who, {}, true));
                    else item.votes.push_back(vote(who, {codes[i] == 0 ? VoteChoice::accept : VoteChoice::reject}));
                    accepts += codes[i] == 0;
                    alls += codes[i] == 2;
                }
                for (auto amb : {AmbiguousNeed::needed, AmbiguousNeed::not_needed}) {
                    const auto r = majority_vote(item, amb);
                    const bool label = accepts >= 2;
                    const auto need = label       ? NeedFlag::needed
                                      : alls >= 2 ? NeedFlag::not_needed
                                      : amb == AmbiguousNeed::needed ? NeedFlag::needed
                                                                     : NeedFlag::not_needed;
                    check(r.labels.size() == 1 && (r.labels[0] == VoteChoice::accept) == label && r.need == need,
                          "combination " + std::to_string(a) + std::to_string(b) + std::to_string(c));
                }
            }

    SeededRng rng(55);
    for (int round = 0; round < 50; ++round) {
        AnnotationItem item;
        item.item_id = "m" + std::to_string(round);
        const auto n = 2 + rng.below(2);
        for (std::uint64_t i = 0; i < n; ++i) item.candidates.emplace_back("t" + std::to_string(i));
        const auto voters = rng.below(2) ? 5 : 3;
        std::vector<int> accepts(n, 0);
        int alls = 0;
        for (int v = 0; v < voters; ++v) {
            if (rng.below(4) == 0) {
                item.votes.push_back(vote("v" + std::to_string(v), {}, true));
                ++alls;
                continue;
            }
            std::vector<VoteChoice> per;
            for (std::uint64_t i = 0; i < n; ++i) {
                const bool acc = rng.below(2);
                per.push_back(acc ? VoteChoice::accept : VoteChoice::reject);
                accepts[i] += acc;
            }
            item.votes.push_back(vote("v" + std::to_string(v), per));
        }
        const auto r = majority_vote(item, AmbiguousNeed::needed);
        bool any = false;
        for (std::uint64_t i = 0; i < n; ++i) {
            const bool label = accepts[i] * 2 > voters;
            any = any || label;
            check((r.labels.at(i) == VoteChoice::accept) == label, "multi-candidate label in " + item.item_id);
        }
        const auto need = any || alls * 2 <= voters ? NeedFlag::needed : NeedFlag::not_needed;
        check(r.need == need, "multi-candidate need in " + item.item_id);
    }

    std::vector<AnnotationItem> items;
    for (int i = 0; i < 120; ++i) {
        AnnotationItem item;
        item.item_id = "g" + std::to_string(i);
        item.candidates = {TaskCandidate("t")};
        const bool split = i < 10;
        item.votes = {vote("a", {VoteChoice::accept}), vote("b", {VoteChoice::accept}),
                      vote("c", {split ? VoteChoice::reject : VoteChoice::accept})};
        items.push_back(std::move(item));
    }
    const auto s = annotator_agreement(items);
    check(s.unanimous_ratio && std::round(*s.unanimous_ratio * 10000) / 100 == 91.67,
          "agreement " + (s.unanimous_ratio ? fmt(*s.unanimous_ratio) : std::string("undefined")));
}

// ---- 6: pred@k -------------------------------------------------------------

void pred_at_k(Check& check) {
    const Judgment yes{Decision::accepted, ""};
    const Judgment no{Decision::rejected, ""};
    SeededRng rng(66);
    for (int i = 0; i < 500; ++i) {
        std::vector<Judgment> js;
        // Silence is scored on need alone, so start from at least one candidate.
        const auto n = 1 + rng.below(2);
        for (std::uint64_t k = 0; k < n; ++k) js.push_back(rng.below(2) ? yes : no);
        const auto need = rng.below(2) ? NeedFlag::needed : NeedFlag::not_needed;
        const int before = pred_at_k_outcome(js, need);
        js.push_back(rng.below(2) ? yes : no);
        check(pred_at_k_outcome(js, need) >= before, "adding a candidate lowered the outcome");
        const bool any = std::any_of(js.begin(), js.end(), [](const Judgment& j) { return j.accepted(); });
        check(pred_at_k_outcome(js, need) == int(any), "pred@k is not any-accept");
    }
    const std::vector<Judgment> one_accept = {no, no, yes};
    check(pred_at_k_outcome(one_accept, NeedFlag::needed) == 1, "any-accept fixture");

    const auto set = load_test_set(fixture("testset.jsonl"));
    RunConfig c1, c3;
    c3.k = 3;
    auto g1 = ScriptedGateway::from_file(fixture("e2e.jsonl"));
    auto g3 = ScriptedGateway::from_file(fixture("e2e.jsonl"));
    const auto m1 = run_evaluation(set, c1, *g1);
    const auto m3 = run_evaluation(set, c3, *g3);
    auto cell = [](const RunManifest& m, const std::string& id) {
        for (const auto& e : m.ledger)
            if (e.item_id == id) return e.cell;
        throw Error("missing ledger item " + id);
    };
    check(cell(m1, "t04#1") == Cell::fp && cell(m3, "t04#1") == Cell::tp, "t04#1 is not FP at k=1 and TP at k=3");
    check(m3.summary->counts.tp >= m1.summary->counts.tp, "pred@3 has fewer TP than pred@1");
}

// ---- 7: prediction record format -------------------------------------------

void record_format(Check& check) {
    const auto golden = Json::parse(R"({
        "observation": {"time": "1717378975.29",
                        "event": "The user continues to remain on the 'Code.exe' application without performing any actions."},
        "agent_response": ["Offer to provide coding assistance."],
        "task_status": false,
        "other_infomation": {"Purpose": "p", "Thoughts": "t", "Response": "r"},
        "judgment": [false]
    })");
    const auto r = prediction_record_from_json(golden);
    check(r.observation.time.millis == 1717378975290, "golden timestamp");
    check(!r.task_status(), "golden task_status");
    check(prediction_record_from_json(to_json(r)) == r, "golden round trip");

    SeededRng rng(77);
    for (int i = 0; i < 1000; ++i) {
        const auto n = rng.below(4);
        PredictionRecord rec;
        rec.observation = Event{Timestamp{static_cast<std::int64_t>(1000 + rng.below(1'000'000'000))}, "e"};
        std::vector<bool> js;
        for (std::uint64_t k = 0; k < n; ++k) {
            rec.agent_response.push_back("task " + std::to_string(k));
            js.push_back(rng.below(2));
        }
        rec.judgment = js;
        const bool any = std::find(js.begin(), js.end(), true) != js.end();
        const auto j = to_json(rec);
        check(j["task_status"] == any, "task_status != any(judgment)");
        check(n > 0 || j["agent_response"].is_null(), "silent response not null");
        check(prediction_record_from_json(j) == rec, "random record round trip");
    }
}

// ---- 8: end-to-end determinism ---------------------------------------------

void end_to_end(Check& check) {
    const auto scenario = load_scenario(fixture("scenario.json"));
    const auto set = load_test_set(fixture("testset.jsonl"));
    std::array<std::string, 2> sims, evals;
    for (int i = 0; i < 2; ++i) {
        auto gw = ScriptedGateway::from_file(fixture("e2e.jsonl"));
        RunConfig cfg;
        cfg.mode = RunMode::simulate;
        const auto r = run_simulation(scenario, cfg, *gw);
        sims[i] = dump_manifest(r.manifest) + to_json(r.trace).dump();
        check(r.manifest.complete, "simulation incomplete");
        check(validate_trace(r.trace).ok, "trace invalid");
        check(state_closed(r.final_state, scenario), "final state not closed");
        check(r.trace.events.size() >= 10, "fewer than 10 events");
        const bool executed = std::any_of(r.manifest.ledger.begin(), r.manifest.ledger.end(), [](const auto& e) {
            return e.accepted() && e.execution && (*e.execution)["steps"].size() >= 2;
        });
        check(executed, "no accepted task executed with two or more steps");

        auto eg = ScriptedGateway::from_file(fixture("e2e.jsonl"));
        evals[i] = dump_manifest(run_evaluation(set, RunConfig{}, *eg));
    }
    check(sims[0] == sims[1], "simulation output differs between runs");
    check(evals[0] == evals[1], "evaluation manifest differs between runs");
}

// ---- 9: dataset split ------------------------------------------------------

void split(Check& check) {
    const double fraction = 120.0 / 1760.0;
    for (std::uint64_t seed : {0ull, 1ull, 42ull, 2024ull}) {
        const auto s = split_indices(1760, fraction, seed);
        check(s.train.size() == 1640 && s.test.size() == 120, "sizes for seed " + std::to_string(seed));
        std::vector<std::size_t> all = s.train;
        all.insert(all.end(), s.test.begin(), s.test.end());
        std::sort(all.begin(), all.end());
        bool partition = all.size() == 1760;
        for (std::size_t i = 0; partition && i < all.size(); ++i) partition = all[i] == i;
        check(partition, "split is not a partition");
        check(split_indices(1760, fraction, seed).test == s.test, "split not reproducible");
    }
}

}  // namespace

int main() {
    const std::vector<Criterion> criteria = {
        {1, "F1 from recall and precision matches reference rows", f1_rows},
        {2, "precision + false alarm == 1", false_alarm_identity},
        {3, "classification table and mean outcome == accuracy", classification},
        {4, "label targets equal brute-force minimum", label_targets},
        {5, "majority vote and annotator agreement", majority},
        {6, "pred@k any-accept and monotonicity", pred_at_k},
        {7, "prediction record format", record_format},
        {8, "scripted end-to-end runs are deterministic", end_to_end},
        {9, "1760 items split into 1640/120", split},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        Check check;
        const auto start = std::chrono::steady_clock::now();
        try {
            c.body(check);
        } catch (const std::exception& ex) {
            check(false, std::string("exception: ") + ex.what());
        }
        const auto ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        const bool ok = check.failure.empty();
        failed += !ok;
        std::printf("%s criterion %d: %s (%.1f ms)%s%s\n", ok ? "PASS" : "FAIL", c.id, c.title, ms,
                    ok ? "" : " -- ", check.failure.c_str());
    }
    std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
