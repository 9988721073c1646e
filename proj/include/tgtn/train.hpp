#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tgtn/graph.hpp"
#include "tgtn/metrics.hpp"
#include "tgtn/model.hpp"
#include "tgtn/txgen.hpp"

namespace tgtn {

struct TrainConfig {
    int epochs = 200;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double pos_weight = 0.0;  // <= 0: legit/fraud ratio of the fitting nodes
    int patience = 20;        // epochs without validation-AP improvement
    double val_fraction = 0.1;
    std::uint64_t seed = 7;

    bool operator==(const TrainConfig&) const = default;
};

void validate(const TrainConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochRecord {
    int epoch = 0;
    double loss = 0.0;
    std::optional<double> val_ap;
    std::optional<double> val_auc;
};

struct TrainResult {
    TgtnParams params;  // from the best validation-AP epoch
    std::vector<EpochRecord> history;
    int best_epoch = 0;
    double pos_weight = 1.0;
    std::size_t n_fit = 0;
    std::size_t n_val = 0;
};

/// Node labels: 1 fraud, 0 legitimate, -1 unknown.
std::vector<int> node_labels(const TxGraph& g);

/// Full-graph training. Nodes with train_mask set and a known label are split
/// (stratified, seeded) into fitting nodes and a validation fraction that
/// drives early stopping. If the validation part has no fraud, early stopping
/// is off and the last epoch is returned. Throws Error unless both classes
/// are present under the mask.
TrainResult train(const GraphInput& g, std::span<const int> labels, std::span<const std::uint8_t> train_mask,
                  const TrainConfig& config, const TgtnConfig& model_config);
TrainResult train(const TxGraph& g, const TrainConfig& config, const TgtnConfig& model_config);

/// CSV with header epoch,loss,val_ap,val_auc; undefined metrics left empty.
std::string history_csv(const std::vector<EpochRecord>& history);

struct GridEntry {
    TgtnConfig model;
    TrainConfig train;
};

struct FoldScore {
    std::optional<double> ap;
    std::optional<double> auc;
};

struct CVEntryReport {
    std::vector<FoldScore> folds;
    double mean_ap = 0.0, std_ap = 0.0;
    double mean_auc = 0.0, std_auc = 0.0;
};

struct CVReport {
    int k = 0;
    std::vector<std::vector<std::size_t>> folds;  // node indices per fold
    std::vector<CVEntryReport> entries;           // grid order
    std::size_t selected = 0;                     // best mean AP, first on ties
    GridEntry selected_entry;
};

/// Labeled nodes split into k folds stratified by label; within a class the
/// folds are contiguous runs in time order.
std::vector<std::vector<std::size_t>> stratified_time_folds(std::span<const int> labels, int k);

/// Transductive k-fold CV: one graph over the whole dataset, training loss
/// masked to k-1 folds, validation on the held-out fold.
CVReport kfold_cv(const Dataset& ds, int k, const std::vector<GridEntry>& grid, const EdgeRule& rule,
                  const EncoderConfig& enc);

nlohmann::ordered_json to_json(const CVReport& r);

/// Per transaction and window w: card recency (capped at w), card frequency,
/// card monetary, then the same three for the merchant. Only transactions with
/// a strictly earlier timestamp (and timestamp < as_of_ts) contribute.
/// Input must be sorted by timestamp.
std::vector<std::vector<double>> rfm_features(std::span<const Transaction> txs,
                                              std::span<const std::int64_t> windows,
                                              std::int64_t as_of_ts = INT64_MAX);

inline constexpr std::int64_t kDefaultRfmWindows[] = {86400, 7 * 86400};

struct LogisticModel {
    std::vector<double> mean;
    std::vector<double> inv_std;  // 0 for zero-variance features
    std::vector<double> weights;
    double bias = 0.0;
    std::vector<std::string> warnings;

    std::vector<double> standardize(std::span<const double> x) const;
    double predict(std::span<const double> x) const;
};

/// Mean BCE of a logistic model on standardized rows, with its gradient.
struct LogisticLoss {
    double loss = 0.0;
    std::vector<double> grad_w;
    double grad_b = 0.0;
};
LogisticLoss logistic_loss(std::span<const double> weights, double bias, const std::vector<std::vector<double>>& x,
                           std::span<const int> labels);

/// Batch gradient descent on standardized features.
LogisticModel train_logistic_baseline(const std::vector<std::vector<double>>& features, std::span<const int> labels,
                                      double lr, int epochs, std::uint64_t seed);

/// Settings for the variant comparison.
struct AblationConfig {
    std::int64_t boundary_ts = 1688169600;  // 2023-07-01T00:00:00Z
    double keep_ratio = 3.0;                // legit per fraud, applied before the split; 0 disables
    TgtnConfig model;
    TrainConfig train;
    EdgeRule edge_rule;
    EncoderConfig encoder;
    double logistic_lr = 0.5;
    int logistic_epochs = 500;
    double threshold = 0.5;
};

void to_json(nlohmann::json& j, const AblationConfig& c);
void from_json(const nlohmann::json& j, AblationConfig& c);

struct AblationRow {
    std::string name;
    MetricsReport report;
    std::vector<double> test_scores;
};

struct AblationResult {
    std::vector<AblationRow> rows;  // TGTN, TGTN-noPE, TGTN-noAT, RFM-logistic
    std::size_t n_train = 0, n_test = 0;
};

/// Temporal split at boundary_ts; each graph variant is trained on a graph
/// built over the training split and scored on a graph over the test split;
/// the RFM baseline uses history from the whole dataset.
AblationResult run_ablation(const Dataset& ds, const AblationConfig& config);

nlohmann::ordered_json to_json(const AblationResult& r);
std::string render_table(const AblationResult& r);

}  // namespace tgtn
