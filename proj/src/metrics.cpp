#include "proagym/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "proagym/error.hpp"

namespace proagym {

std::string_view to_string(Cell c) {
    switch (c) {
        case Cell::tp: return "TP";
        case Cell::fp: return "FP";
        case Cell::tn: return "TN";
        case Cell::fn: return "FN";
    }
    return "TP";
}

std::string_view to_string(ScenarioCategory c) {
    switch (c) {
        case ScenarioCategory::MN: return "MN";
        case ScenarioCategory::NR: return "NR";
        case ScenarioCategory::CD: return "CD";
        case ScenarioCategory::FD: return "FD";
        case ScenarioCategory::WD: return "WD";
    }
    return "MN";
}

namespace {

ScenarioCategory parse_category_name(std::string_view s) {
    for (auto c : {ScenarioCategory::MN, ScenarioCategory::NR, ScenarioCategory::CD, ScenarioCategory::FD,
                   ScenarioCategory::WD})
        if (to_string(c) == s) return c;
    throw ParseError("unknown scenario category '" + std::string(s) + "'");
}

std::optional<double> ratio(std::size_t num, std::size_t den) {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

void ConfusionCounts::add(Cell c) {
    switch (c) {
        case Cell::tp: ++tp; break;
        case Cell::fp: ++fp; break;
        case Cell::tn: ++tn; break;
        case Cell::fn: ++fn; break;
    }
}

Classification classify(bool predicted, const std::optional<Decision>& decision, NeedFlag need) {
    if (predicted != decision.has_value())
        throw ContractError("classify: a decision is required exactly when a task is predicted");
    const bool needed = need == NeedFlag::needed;
    if (predicted) {
        if (*decision == Decision::accepted)
            return {Cell::tp, needed ? ScenarioCategory::CD : ScenarioCategory::FD};
        return {Cell::fp, needed ? ScenarioCategory::WD : ScenarioCategory::FD};
    }
    return needed ? Classification{Cell::fn, ScenarioCategory::MN} : Classification{Cell::tn, ScenarioCategory::NR};
}

MetricsReport compute_metrics(const ConfusionCounts& c) {
    MetricsReport r;
    r.counts = c;
    r.recall = ratio(c.tp, c.tp + c.fn);
    r.precision = ratio(c.tp, c.tp + c.fp);
    // 1 - precision keeps precision + false_alarm == 1 exact in binary64.
    if (r.precision) r.false_alarm = 1.0 - *r.precision;
    r.accuracy = ratio(c.tp + c.tn, c.total());
    r.acceptance_rate = r.accuracy;
    r.f1 = (r.recall && r.precision) ? f1_from_pr(*r.recall, *r.precision) : 0.0;
    return r;
}

double f1_from_pr(double recall, double precision) {
    if (recall + precision == 0.0) return 0.0;
    return 2.0 * recall * precision / (recall + precision);
}

int pred_at_k_outcome(std::span<const Judgment> judgments, NeedFlag need) {
    if (judgments.size() > kMaxCandidates) throw ContractError("pred_at_k_outcome: at most 3 candidates");
    if (judgments.empty()) return need == NeedFlag::not_needed ? 1 : 0;
    return std::any_of(judgments.begin(), judgments.end(), [](const Judgment& j) { return j.accepted(); }) ? 1 : 0;
}

std::map<ScenarioCategory, double> agreement_ratios(std::span<const Decision> model_decisions,
                                                    std::span<const Decision> human_labels,
                                                    std::span<const ScenarioCategory> categories) {
    if (model_decisions.size() != human_labels.size() || human_labels.size() != categories.size())
        throw ContractError("agreement_ratios: inputs differ in length");
    std::map<ScenarioCategory, std::pair<std::size_t, std::size_t>> tally;
    for (std::size_t i = 0; i < categories.size(); ++i) {
        if (categories[i] == ScenarioCategory::WD) continue;
        auto& [agree, total] = tally[categories[i]];
        ++total;
        agree += model_decisions[i] == human_labels[i];
    }
    std::map<ScenarioCategory, double> out;
    for (const auto& [cat, t] : tally) out[cat] = static_cast<double>(t.first) / static_cast<double>(t.second);
    return out;
}

ConfusionCounts decision_confusion(std::span<const Decision> model_decisions, std::span<const Decision> human_labels) {
    if (model_decisions.size() != human_labels.size())
        throw ContractError("decision_confusion: inputs differ in length");
    ConfusionCounts c;
    for (std::size_t i = 0; i < model_decisions.size(); ++i) {
        const bool m = model_decisions[i] == Decision::accepted;
        const bool h = human_labels[i] == Decision::accepted;
        c.add(m ? (h ? Cell::tp : Cell::fp) : (h ? Cell::fn : Cell::tn));
    }
    return c;
}

MetricsReport aggregate_run(std::span<const LabeledRecord> records) {
    ConfusionCounts c;
    for (const auto& lr : records) {
        if (!lr.need) throw ContractError("aggregate_run: item '" + lr.item_id + "' has no need flag");
        const bool predicted = lr.record.predicted();
        if (predicted && lr.record.judgment.empty())
            throw ContractError("aggregate_run: item '" + lr.item_id + "' has no judgment");
        std::optional<Decision> d;
        if (predicted) d = lr.record.task_status() ? Decision::accepted : Decision::rejected;
        c.add(classify(predicted, d, *lr.need).cell);
    }
    return compute_metrics(c);
}

namespace {

Json opt_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

std::optional<double> opt_from(const Json& j, const char* key) {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    return j[key].get<double>();
}

std::string percent(const std::optional<double>& v) {
    if (!v) return "-";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f%%", *v * 100.0);
    return buf;
}

}  // namespace

Json to_json(const MetricsReport& r) {
    Json j;
    j["counts"] = Json{{"tp", r.counts.tp}, {"fp", r.counts.fp}, {"tn", r.counts.tn}, {"fn", r.counts.fn}};
    j["recall"] = opt_json(r.recall);
    j["precision"] = opt_json(r.precision);
    j["accuracy"] = opt_json(r.accuracy);
    j["false_alarm"] = opt_json(r.false_alarm);
    j["f1"] = r.f1;
    j["acceptance_rate"] = opt_json(r.acceptance_rate);
    if (!r.agreement.empty()) {
        Json a = Json::object();
        for (const auto& [cat, v] : r.agreement) a[std::string(to_string(cat))] = v;
        j["agreement"] = a;
    }
    return j;
}

MetricsReport metrics_report_from_json(const Json& j) {
    if (!j.is_object() || !j.contains("counts")) throw ParseError("metrics report: missing counts");
    MetricsReport r;
    const auto& c = j["counts"];
    r.counts = {c.at("tp").get<std::size_t>(), c.at("fp").get<std::size_t>(), c.at("tn").get<std::size_t>(),
                c.at("fn").get<std::size_t>()};
    r.recall = opt_from(j, "recall");
    r.precision = opt_from(j, "precision");
    r.accuracy = opt_from(j, "accuracy");
    r.false_alarm = opt_from(j, "false_alarm");
    r.f1 = j.value("f1", 0.0);
    r.acceptance_rate = opt_from(j, "acceptance_rate");
    if (j.contains("agreement"))
        for (const auto& [k, v] : j["agreement"].items()) r.agreement[parse_category_name(k)] = v.get<double>();
    return r;
}

std::string format_table(const std::vector<std::pair<std::string, MetricsReport>>& rows,
                         const std::string& label_header) {
    const std::vector<std::string> headers = {label_header, "Recall", "Precision", "Accuracy", "False-Alarm", "F1-Score"};
    std::vector<std::vector<std::string>> cells;
    for (const auto& [label, r] : rows)
        cells.push_back({label, percent(r.recall), percent(r.precision), percent(r.accuracy), percent(r.false_alarm),
                         percent(r.f1)});
    std::vector<std::size_t> width(headers.size());
    for (std::size_t i = 0; i < headers.size(); ++i) {
        width[i] = headers[i].size();
        for (const auto& row : cells) width[i] = std::max(width[i], row[i].size());
    }
    std::ostringstream out;
    auto line = [&](const std::vector<std::string>& row) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out << "  ";
            if (i == 0) {
                out << row[i] << std::string(width[i] - row[i].size(), ' ');
            } else {
                out << std::string(width[i] - row[i].size(), ' ') << row[i];
            }
        }
        out << '\n';
    };
    line(headers);
    std::size_t total = 0;
    for (auto w : width) total += w;
    out << std::string(total + 2 * (width.size() - 1), '-') << '\n';
    for (const auto& row : cells) line(row);
    return out.str();
}

}  // namespace proagym
