#include <doctest.h>

#include <httplib.h>

#include <cstdlib>
#include <fstream>
#include <random>
#include <set>
#include <thread>

#include "proagym/error.hpp"
#include "proagym/service.hpp"
#include "support.hpp"

using namespace proagym;

namespace {

std::vector<Json> synthetic_items(std::size_t n) {
    std::vector<Json> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(Json{{"item_id", "it" + std::to_string(i)}, {"v", i}});
    return out;
}

// Independent reference for the split: raw mt19937_64 output, rejection
// sampling and a back-to-front Fisher-Yates written out longhand.
std::vector<std::size_t> reference_test_indices(std::size_t n, double fraction, std::uint64_t seed) {
    std::mt19937_64 eng(seed);
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    for (std::size_t i = n; i > 1; --i) {
        const std::uint64_t bound = i;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t x = eng();
        while (x >= limit) x = eng();
        std::swap(perm[i - 1], perm[x % bound]);
    }
    const auto take = static_cast<std::size_t>(std::llround(static_cast<double>(n) * fraction));
    std::vector<std::size_t> test(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(take));
    std::sort(test.begin(), test.end());
    return test;
}

AnnotationItem make_item(const std::string& id, std::size_t candidates) {
    AnnotationItem item;
    item.item_id = id;
    item.trace_window.events = {Event{Timestamp{1000}, "The user opens a spreadsheet."}};
    for (std::size_t i = 0; i < candidates; ++i) {
        item.candidates.emplace_back("candidate " + std::to_string(i));
        item.candidate_sources.push_back("model-" + std::to_string(i));
    }
    return item;
}

AnnotationVote per_candidate(std::string who, std::vector<VoteChoice> choices) {
    AnnotationVote v;
    v.annotator_id = std::move(who);
    v.per_candidate = std::move(choices);
    return v;
}

AnnotationVote reject_all(std::string who) {
    AnnotationVote v;
    v.annotator_id = std::move(who);
    v.reject_all = true;
    return v;
}

}  // namespace

TEST_CASE("split of 1760 items gives 1640/120 for any seed") {
    const auto items = synthetic_items(1760);
    for (std::uint64_t seed : {0ULL, 1ULL, 42ULL, 123456789ULL}) {
        const auto b = dataset_split(items, 120.0 / 1760.0, seed);
        CHECK(b.train.size() == 1640);
        CHECK(b.test.size() == 120);
        CHECK(b.manifest.total == 1760);
        std::set<std::string> ids;
        for (const auto& r : b.train) ids.insert(r["item_id"].get<std::string>());
        for (const auto& r : b.test) CHECK(ids.insert(r["item_id"].get<std::string>()).second);
        CHECK(ids.size() == 1760);
    }
}

TEST_CASE("split matches the independent shuffle reference") {
    for (std::uint64_t seed : {7ULL, 8ULL, 99ULL}) {
        const auto idx = split_indices(10, 0.2, seed);
        CHECK(idx.test == reference_test_indices(10, 0.2, seed));
        CHECK(idx.train.size() == 8);
    }
    CHECK(split_indices(1760, 120.0 / 1760.0, 3).test == reference_test_indices(1760, 120.0 / 1760.0, 3));
    CHECK(split_indices(10, 0.2, 7).test == split_indices(10, 0.2, 7).test);
}

TEST_CASE("split preconditions") {
    CHECK_THROWS_AS(split_indices(0, 0.5, 1), ContractError);
    CHECK_THROWS_AS(split_indices(10, 0.0, 1), ContractError);
    CHECK_THROWS_AS(split_indices(10, 1.0, 1), ContractError);
    auto dup = synthetic_items(3);
    dup[2]["item_id"] = "it0";
    CHECK_THROWS_AS(dataset_split(dup, 0.5, 1), ContractError);
    const auto by_id = dataset_split({Json{{"id", "a"}}, Json{{"id", "b"}}}, 0.5, 1);
    CHECK(by_id.test.size() == 1);
    CHECK(to_json(by_id.manifest)["seed"] == 1);
}

TEST_CASE("config loads from JSON with environment credentials") {
    testing::ScratchDir dir;
    write_file(dir.file("c.json"), R"({"window": 12, "models": {"judge": "rm-7b"}, "ambiguous_need": "not_needed",
                                       "api_key": "ignored-from-file"})");
    ::setenv("PROAGYM_API_KEY", "from-env", 1);
    const auto c = AppConfig::load(dir.file("c.json"));
    ::unsetenv("PROAGYM_API_KEY");
    CHECK(c.window == 12);
    CHECK(c.models.judge == "rm-7b");
    CHECK(c.models.agent == "gpt-4o");
    CHECK(c.ambiguous_need == AmbiguousNeed::not_needed);
    CHECK(c.api_key == "from-env");
    CHECK_FALSE(to_json(c).contains("api_key"));
    CHECK_THROWS_AS(AppConfig::load(dir.file("missing.json")), Error);
}

TEST_CASE("store folds its log back after a restart") {
    testing::ScratchDir dir;
    const auto path = dir.file("store.jsonl");
    {
        AnnotationStore store(path);
        store.add_item(make_item("a", 2));
        store.add_item(make_item("b", 1));
        CHECK_THROWS_AS(store.add_item(make_item("a", 1)), ContractError);
        CHECK(store.vote("a", per_candidate("x", {VoteChoice::accept, VoteChoice::reject})).status == VoteStatus::recorded);
        CHECK(store.vote("a", per_candidate("y", {VoteChoice::accept, VoteChoice::accept})).status == VoteStatus::recorded);
        CHECK(store.vote("a", reject_all("z")).status == VoteStatus::recorded);
    }
    AnnotationStore reopened(path);
    const auto a = reopened.get("a");
    REQUIRE(a.has_value());
    CHECK(a->votes.size() == 3);
    REQUIRE(a->resolved.has_value());
    CHECK(a->resolved->labels == std::vector<VoteChoice>{VoteChoice::accept, VoteChoice::reject});
    CHECK(a->resolved->need == NeedFlag::needed);
    CHECK(reopened.items().size() == 2);
}

TEST_CASE("store tolerates a torn final line") {
    testing::ScratchDir dir;
    const auto path = dir.file("store.jsonl");
    {
        AnnotationStore store(path);
        store.add_item(make_item("a", 1));
        store.vote("a", per_candidate("x", {VoteChoice::accept}));
    }
    {
        std::ofstream f(path, std::ios::app);
        f << R"({"op":"vote","item_id":"a","vote":{"annot)";
    }
    AnnotationStore reopened(path);
    CHECK(reopened.get("a")->votes.size() == 1);
}

TEST_CASE("store vote outcomes") {
    testing::ScratchDir dir;
    AnnotationStore store(dir.file("s.jsonl"));
    store.add_item(make_item("a", 1));
    CHECK(store.vote("zzz", per_candidate("x", {VoteChoice::accept})).status == VoteStatus::unknown_item);
    CHECK(store.vote("a", per_candidate("x", {VoteChoice::accept})).status == VoteStatus::recorded);
    CHECK(store.vote("a", per_candidate("x", {VoteChoice::reject})).status == VoteStatus::duplicate);
    CHECK_THROWS_AS(store.vote("a", per_candidate("w", {VoteChoice::accept, VoteChoice::accept})), ContractError);
    store.vote("a", per_candidate("y", {VoteChoice::reject}));
    store.vote("a", per_candidate("z", {VoteChoice::reject}));
    CHECK(store.vote("a", per_candidate("q", {VoteChoice::accept})).status == VoteStatus::full);
    CHECK(store.get("a")->resolved->labels == std::vector<VoteChoice>{VoteChoice::reject});
}

TEST_CASE("next_for skips finished items and the annotator's own votes") {
    testing::ScratchDir dir;
    AnnotationStore store(dir.file("s.jsonl"));
    store.add_item(make_item("a", 1));
    store.add_item(make_item("b", 1));
    CHECK(store.next_for("x")->item_id == "a");
    store.vote("a", per_candidate("x", {VoteChoice::accept}));
    CHECK(store.next_for("x")->item_id == "b");
    CHECK(store.next_for("y")->item_id == "a");
    store.vote("b", per_candidate("x", {VoteChoice::accept}));
    CHECK_FALSE(store.next_for("x").has_value());
}

TEST_CASE("concurrent votes are all recorded") {
    testing::ScratchDir dir;
    AnnotationStore store(dir.file("s.jsonl"), 5);
    for (int i = 0; i < 20; ++i) store.add_item(make_item("i" + std::to_string(i), 1));
    {
        std::vector<std::jthread> voters;
        for (int v = 0; v < 5; ++v)
            voters.emplace_back([&store, v] {
                for (int i = 0; i < 20; ++i)
                    store.vote("i" + std::to_string(i), per_candidate("a" + std::to_string(v), {VoteChoice::accept}));
            });
    }
    for (const auto& item : store.items()) CHECK(item.votes.size() == 5);
    AnnotationStore reopened(dir.file("s.jsonl"), 5);
    CHECK(reopened.stats()["votes"] == 100);
}

TEST_CASE("stats report progress, agreement and categories") {
    testing::ScratchDir dir;
    AnnotationStore store(dir.file("s.jsonl"));
    store.add_item(make_item("a", 1));
    store.add_item(make_item("b", 1));
    for (const char* who : {"x", "y", "z"}) store.vote("a", per_candidate(who, {VoteChoice::accept}));
    for (const char* who : {"x", "y"}) store.vote("b", reject_all(who));
    const auto s = store.stats();
    CHECK(s["items"] == 2);
    CHECK(s["resolved"] == 1);
    CHECK(s["votes"] == 5);
    CHECK(s["agreement"]["labels"] == 2);
    CHECK(s["agreement"]["unanimous"].get<double>() == doctest::Approx(1.0));
    CHECK(s["categories"]["CD"] == 1);
}

TEST_CASE("annotation HTTP API") {
    testing::ScratchDir dir;
    AnnotationStore store(dir.file("s.jsonl"));
    store.add_item(make_item("a", 1));
    store.add_item(make_item("b", 2));
    AnnotationService service(store);
    const int port = service.bind("127.0.0.1", 0);
    std::thread th([&] { service.run(); });
    service.wait_until_ready();
    httplib::Client cli("127.0.0.1", port);

    auto res = cli.Get("/api/items/next?annotator=x");
    REQUIRE(res);
    CHECK(res->status == 200);
    const auto next = Json::parse(res->body);
    CHECK(next["item_id"] == "a");
    CHECK_FALSE(next.contains("candidate_sources"));
    CHECK_FALSE(next.contains("votes"));

    CHECK(cli.Get("/api/items/next")->status == 400);
    CHECK(cli.Get("/api/items/b")->status == 200);
    CHECK(cli.Get("/api/items/nope")->status == 404);

    const auto body = [](const char* who) {
        return Json{{"annotator_id", who}, {"per_candidate", {"accept"}}}.dump();
    };
    res = cli.Post("/api/items/a/votes", body("x"), "application/json");
    REQUIRE(res);
    CHECK(res->status == 201);
    CHECK(Json::parse(res->body)["votes"] == 1);
    CHECK(Json::parse(res->body)["resolved"].is_null());
    CHECK(cli.Post("/api/items/a/votes", body("x"), "application/json")->status == 409);
    CHECK(cli.Post("/api/items/a/votes", "{not json", "application/json")->status == 400);
    CHECK(cli.Post("/api/items/a/votes", R"({"annotator_id":"w","per_candidate":["accept","accept"]})",
                   "application/json")
              ->status == 400);
    CHECK(cli.Post("/api/items/zz/votes", body("x"), "application/json")->status == 404);
    CHECK(cli.Post("/api/items/a/votes", body("y"), "application/json")->status == 201);
    res = cli.Post("/api/items/a/votes", R"({"annotator_id":"z","reject_all":true})", "application/json");
    CHECK(res->status == 201);
    const auto resolved = Json::parse(res->body)["resolved"];
    CHECK(resolved["labels"] == Json::array({"accept"}));
    CHECK(resolved["need"] == 1);
    CHECK(cli.Post("/api/items/a/votes", body("q"), "application/json")->status == 409);

    res = cli.Get("/api/export");
    REQUIRE(res);
    const auto rows = Json::parse(res->body);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0]["item_id"] == "a");
    CHECK(rows[0]["judgment"] == "accepted");
    CHECK(rows[0]["need"] == 1);
    CHECK(rows[1]["proposed_task"].is_null());
    CHECK(rows[1]["judgment"] == "rejected");

    res = cli.Get("/api/stats");
    REQUIRE(res);
    CHECK(Json::parse(res->body)["resolved"] == 1);

    service.stop();
    th.join();
}
