#pragma once

// Confusion classification and every proactiveness metric: recall, precision,
// accuracy, false alarm, F1, pred@k outcomes and judge-vs-human agreement.

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "proagym/trace.hpp"

namespace proagym {

enum class Cell { tp, fp, tn, fn };

/// MN missed-needed, NR non-response, CD correct-detection, FD
/// false-detection, WD wrong-detection (help needed, task proposed but
/// rejected). WD makes the five a partition and is never reported as an
/// agreement row.
enum class ScenarioCategory { MN, NR, CD, FD, WD };

std::string_view to_string(Cell c);
std::string_view to_string(ScenarioCategory c);

struct ConfusionCounts {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

    std::size_t total() const noexcept { return tp + fp + tn + fn; }
    void add(Cell c);
    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct Classification {
    Cell cell;
    ScenarioCategory category;
    friend bool operator==(const Classification&, const Classification&) = default;
};

/// `decision` must be present exactly when `predicted`.
Classification classify(bool predicted, const std::optional<Decision>& decision, NeedFlag need);

/// Undefined metrics (zero denominators) are nullopt.
struct MetricsReport {
    ConfusionCounts counts;
    std::optional<double> recall;
    std::optional<double> precision;
    std::optional<double> accuracy;
    std::optional<double> false_alarm;
    double f1 = 0.0;
    /// Mean R_t over the run; equals accuracy.
    std::optional<double> acceptance_rate;
    std::map<ScenarioCategory, double> agreement;
};

MetricsReport compute_metrics(const ConfusionCounts& c);

/// Harmonic mean; 0 when both inputs are 0.
double f1_from_pr(double recall, double precision);

/// Empty list -> silent-prediction outcome for `need`; otherwise 1 iff any
/// judgment accepted.
int pred_at_k_outcome(std::span<const Judgment> judgments, NeedFlag need);

/// Per category, the share of items where the model decision matches the
/// human majority decision. WD items are skipped; categories without items
/// are absent from the result.
std::map<ScenarioCategory, double> agreement_ratios(std::span<const Decision> model_decisions,
                                                    std::span<const Decision> human_labels,
                                                    std::span<const ScenarioCategory> categories);

/// Binary confusion of a judge against human labels, accepted = positive.
ConfusionCounts decision_confusion(std::span<const Decision> model_decisions, std::span<const Decision> human_labels);

struct LabeledRecord {
    std::string item_id;
    PredictionRecord record;
    std::optional<NeedFlag> need;
};

/// Classifies every record (accepted = any judgment true) and sums the cells.
/// Throws ContractError naming the first unresolved item.
MetricsReport aggregate_run(std::span<const LabeledRecord> records);

Json to_json(const MetricsReport& r);
MetricsReport metrics_report_from_json(const Json& j);

/// Aligned text table: Recall, Precision, Accuracy, False-Alarm, F1-Score as
/// percentages with 2 decimals; undefined values print as "-".
std::string format_table(const std::vector<std::pair<std::string, MetricsReport>>& rows,
                         const std::string& label_header = "Setting");

}  // namespace proagym
