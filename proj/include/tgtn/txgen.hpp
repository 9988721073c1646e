#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace tgtn {

enum class Label { legitimate, fraud, unknown };

std::string_view to_string(Label label);
Label parse_label(std::string_view text);  // throws Error

/// One card payment. Amounts are held in integer cents so that the two
/// decimal JSONL representation round-trips exactly.
struct Transaction {
    std::uint64_t tx_id = 0;
    std::int64_t timestamp = 0;  // seconds since epoch (UTC)
    std::string card_id;
    std::string merchant_id;
    std::int64_t amount_cents = 0;
    Label label = Label::unknown;

    double amount() const { return static_cast<double>(amount_cents) / 100.0; }

    bool operator==(const Transaction&) const = default;
};

/// Strict ordering used by every dataset: (timestamp, tx_id).
inline bool tx_before(const Transaction& a, const Transaction& b) {
    return a.timestamp != b.timestamp ? a.timestamp < b.timestamp : a.tx_id < b.tx_id;
}

/// Synthetic corpus parameters.
struct GenConfig {
    std::uint64_t seed = 42;
    std::int64_t n_cards = 500;
    std::int64_t n_merchants = 100;
    std::int64_t start_ts = 1675209600;  // 2023-02-01T00:00:00Z
    std::int64_t end_ts = 1696118400;    // 2023-10-01T00:00:00Z
    double legit_rate = 20.0;            // mean legit transactions per card over the period
    std::int64_t n_rings = 40;
    std::int64_t ring_size = 4;          // cards per ring
    std::int64_t ring_merchants = 2;     // merchants per ring
    std::int64_t ring_burst_seconds = 3600;
    std::int64_t ring_tx_per_card = 3;
    double fraud_amount_scale = 1.5;
    double amount_median = 40.0;
    double amount_sigma = 0.8;

    bool operator==(const GenConfig&) const = default;
};

void validate(const GenConfig& config);  // throws Error naming the field

void to_json(nlohmann::json& j, const GenConfig& c);
void from_json(const nlohmann::json& j, GenConfig& c);

struct Dataset {
    std::vector<Transaction> transactions;  // sorted by (timestamp, tx_id)
    nlohmann::json meta = nlohmann::json::object();
    std::vector<std::string> warnings;

    std::size_t size() const { return transactions.size(); }
    bool empty() const { return transactions.empty(); }
};

/// Legitimate traffic is a per-card Poisson process over [start_ts, end_ts)
/// with log-normal amounts at uniformly chosen merchants. Each fraud ring
/// adds `ring_size` fresh cards, each making `ring_tx_per_card` purchases at
/// the ring's merchants inside one burst window. The first purchase of every
/// ring card hits the ring's first merchant, so a ring is always connected
/// through shared entities. Pure function of the config.
Dataset generate(const GenConfig& config);

/// Left side gets timestamps < boundary_ts, right side the rest.
std::pair<Dataset, Dataset> temporal_split(const Dataset& ds, std::int64_t boundary_ts);

/// Keeps every fraud (and unlabeled) transaction and a uniform sample of
/// min(available, floor(keep_ratio * n_fraud)) legitimate ones.
Dataset negative_sample(const Dataset& ds, double keep_ratio, std::uint64_t seed);

// JSONL dataset I/O. Each line: {"tx_id","ts","card","merchant","amount","label"}.
// Readers re-sort unsorted input (with a warning) unless asked to keep file
// order, which the stream replay needs to see late events.
enum class ReadOrder { sorted, file };

void write_jsonl(std::ostream& out, const Dataset& ds);
Dataset read_jsonl(std::istream& in, ReadOrder order = ReadOrder::sorted);
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path, ReadOrder order = ReadOrder::sorted);

std::string format_cents(std::int64_t cents);
std::int64_t parse_cents(std::string_view text);  // throws Error

std::size_t count_label(const Dataset& ds, Label label);

}  // namespace tgtn
