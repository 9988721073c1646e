#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tgtn/graph.hpp"
#include "tgtn/model.hpp"
#include "tgtn/txgen.hpp"

namespace tgtn {

/// Blacklists and an amount ceiling, checked in that order.
struct RuleEngine {
    std::set<std::string> card_blacklist;
    std::set<std::string> merchant_blacklist;
    std::optional<std::int64_t> max_amount_cents;  // amounts strictly above are blocked

    bool operator==(const RuleEngine&) const = default;
};

void to_json(nlohmann::json& j, const RuleEngine& e);
void from_json(const nlohmann::json& j, RuleEngine& e);

struct Verdict {
    bool blocked = false;
    std::string reason;  // "card_blacklist", "merchant_blacklist" or "max_amount"; empty on pass

    static Verdict pass() { return {}; }
    static Verdict block(std::string why) { return {true, std::move(why)}; }
    bool operator==(const Verdict&) const = default;
};

/// First matching rule wins.
Verdict prescreen(const Transaction& tx, const RuleEngine& engine);

enum class LatePolicy {
    reject,  // late events are dropped unscored
    clamp,   // late events are re-stamped to the newest timestamp seen
};

struct WindowConfig {
    std::int64_t window_seconds = 7 * 86400;
    LatePolicy late_policy = LatePolicy::reject;

    bool operator==(const WindowConfig&) const = default;
};

/// Throws Error unless window_seconds >= rule.max_gap_seconds.
void validate(const WindowConfig& w, const EdgeRule& rule);
void to_json(nlohmann::json& j, const WindowConfig& w);
void from_json(const nlohmann::json& j, WindowConfig& w);

struct StreamRecord {
    std::uint64_t tx_id = 0;
    std::string verdict;  // "pass", "blocked" or "late"
    std::string reason;
    std::optional<double> score;
    std::size_t window_nodes = 0;
    double latency_us = 0.0;
    bool clamped = false;
};

struct StreamStats {
    std::size_t processed = 0;
    std::size_t flagged = 0;  // blocked by the rule engine
    std::size_t late_rejected = 0;
    std::size_t late_clamped = 0;
    std::size_t scored = 0;
    std::size_t max_window_nodes = 0;
    std::vector<double> latency_us;  // one sample per scored arrival
};

/// Latency summary is kept apart from the deterministic counters.
nlohmann::ordered_json to_json(const StreamStats& s, bool include_latency = true);

struct ReplayResult {
    std::vector<StreamRecord> records;
    StreamStats stats;
};

/// Replays transactions in the given order. A passing arrival evicts nodes
/// older than ts - window_seconds, joins the window graph and is scored by
/// the frozen model on that graph. Blocked and rejected arrivals never become
/// nodes.
ReplayResult replay(const Dataset& ds, const TgtnParams& params, const EdgeRule& rule, const EncoderConfig& enc,
                    const WindowConfig& window, const RuleEngine& engine = {});

/// One JSON object per line; latency fields are omitted when include_latency
/// is false so that outputs can be compared byte for byte.
std::string records_jsonl(const std::vector<StreamRecord>& records, bool include_latency = true);

/// Max over scored arrivals of |stream score - batch score|, where the batch
/// score comes from build_graph over the window contents at that arrival and
/// a full forward pass.
double consistency_check(const Dataset& ds, const TgtnParams& params, const EdgeRule& rule, const EncoderConfig& enc,
                         const WindowConfig& window, const RuleEngine& engine = {});

}  // namespace tgtn
