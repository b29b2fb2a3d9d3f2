// Thin pybind11 layer. Structured results cross the boundary as JSON text and
// are decoded by the Python package.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "proagym/cli.hpp"
#include "proagym/error.hpp"
#include "proagym/judge.hpp"
#include "proagym/metrics.hpp"
#include "proagym/runner.hpp"
#include "proagym/service.hpp"
#include "proagym/trace.hpp"

namespace py = pybind11;
using namespace proagym;

namespace {

std::optional<Decision> decision_of(const std::optional<std::string>& s) {
    if (!s) return std::nullopt;
    return normalize_decision(*s);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    auto base = py::register_exception<Error>(m, "Error");
    py::register_exception<ParseError>(m, "ParseError", base.ptr());
    py::register_exception<ContractError>(m, "ContractError", base.ptr());
    py::register_exception<StageError>(m, "StageError", base.ptr());

    m.def("f1_from_pr", &f1_from_pr, py::arg("recall"), py::arg("precision"));

    m.def(
        "compute_metrics_json",
        [](std::uint64_t tp, std::uint64_t fp, std::uint64_t tn, std::uint64_t fn) {
            return to_json(compute_metrics(ConfusionCounts{tp, fp, tn, fn})).dump();
        },
        py::arg("tp"), py::arg("fp"), py::arg("tn"), py::arg("fn"));

    m.def(
        "classify",
        [](bool predicted, const std::optional<std::string>& decision, int need) {
            const auto c = classify(predicted, decision_of(decision), need_from_int(need));
            return std::make_pair(std::string(to_string(c.cell)), std::string(to_string(c.category)));
        },
        py::arg("predicted"), py::arg("decision"), py::arg("need"));

    m.def("pred_at_k_outcome", [](const std::vector<std::string>& decisions, int need) {
        std::vector<Judgment> js;
        for (const auto& d : decisions) js.push_back(Judgment{normalize_decision(d), ""});
        return pred_at_k_outcome(js, need_from_int(need));
    });

    m.def("parse_event_line", [](const std::string& line) { return to_json(parse_event_line(line)).dump(); });
    m.def(
        "format_event_line",
        [](const std::string& time, const std::string& text) {
            return format_event_line(Event{Timestamp::parse(time), text});
        },
        py::arg("time"), py::arg("text"));

    m.def(
        "split_indices",
        [](std::size_t n, double fraction, std::uint64_t seed) {
            auto s = split_indices(n, fraction, seed);
            return std::make_pair(std::move(s.train), std::move(s.test));
        },
        py::arg("n"), py::arg("test_fraction"), py::arg("seed"));

    m.def(
        "select_label_targets",
        [](const std::vector<std::vector<double>>& embeddings, std::size_t k) {
            std::vector<TaskCandidate> cands;
            std::vector<EmbeddingVector> embs;
            for (std::size_t i = 0; i < embeddings.size(); ++i) {
                cands.emplace_back("candidate " + std::to_string(i));
                embs.push_back(EmbeddingVector::normalized(embeddings[i]));
            }
            return select_label_targets(cands, embs, k);
        },
        py::arg("embeddings"), py::arg("k"));

    m.def(
        "evaluate_json",
        [](const std::string& test_set, const std::string& fixture, std::size_t k, bool feedback) {
            const auto set = load_test_set(test_set);
            RunConfig c;
            c.k = k;
            c.with_feedback = feedback;
            auto gw = ScriptedGateway::from_file(fixture);
            py::gil_scoped_release release;
            return dump_manifest(run_evaluation(set, c, *gw));
        },
        py::arg("test_set"), py::arg("fixture"), py::arg("k") = 1, py::arg("with_feedback") = false);

    m.def("cli", [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = cli_dispatch(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
    });
}
