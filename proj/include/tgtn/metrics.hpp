#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace tgtn {

/// Non-interpolated average precision: mean over positives of precision at
/// the positive's rank, scores sorted descending, ties kept in input order.
/// Labels are 1 (fraud) or 0. Throws Error when there are no positives.
double average_precision(std::span<const double> scores, std::span<const int> labels);

/// Mann-Whitney form of ROC AUC: (concordant + 0.5 tied) / (n_pos n_neg).
/// Throws Error when either class is absent.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct Confusion {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    bool operator==(const Confusion&) const = default;
};

/// Predicted positive iff score >= threshold.
Confusion confusion_at(std::span<const double> scores, std::span<const int> labels, double threshold);

struct BucketMetrics {
    std::optional<double> ap;   // unset unless both classes are present
    std::optional<double> auc;  // unset unless both classes are present
    Confusion confusion;
    std::size_t n_pos = 0, n_neg = 0;
};

struct MetricsReport {
    double threshold = 0.5;
    BucketMetrics overall;
    std::map<std::string, BucketMetrics> months;  // "YYYY-MM" (UTC)
};

struct ScoredTx {
    std::int64_t timestamp = 0;
    double score = 0.0;
    int label = 0;
};

/// "YYYY-MM" of a UTC epoch timestamp.
std::string utc_month(std::int64_t timestamp);

BucketMetrics bucket_metrics(std::span<const double> scores, std::span<const int> labels, double threshold);

/// Global metrics that require both classes (throws Error otherwise).
MetricsReport evaluate(std::span<const double> scores, std::span<const int> labels, double threshold);

/// Calendar-month buckets. Degenerate buckets are reported with counts only.
MetricsReport monthly_report(std::span<const ScoredTx> scored, double threshold = 0.5);

nlohmann::ordered_json to_json(const BucketMetrics& m);
nlohmann::ordered_json to_json(const MetricsReport& r);
MetricsReport metrics_report_from_json(const nlohmann::json& j);

/// Plain-text comparison table: one row per model, per-month AP / AUC columns
/// followed by the overall AP / AUC.
std::string render_table(const std::vector<std::pair<std::string, MetricsReport>>& rows);

}  // namespace tgtn
