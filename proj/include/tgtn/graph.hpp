#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tgtn/txgen.hpp"

namespace tgtn {

/// Raw attribute embedding. No aggregates over other transactions.
struct EncoderConfig {
    int card_buckets = 64;
    int merchant_buckets = 64;

    int d_in() const { return card_buckets + merchant_buckets + 3; }
    bool operator==(const EncoderConfig&) const = default;
};

/// log1p(amount) is multiplied by this so typical amounts land near unit scale.
inline constexpr double kAmountFeatureScale = 0.25;

/// 64-bit FNV-1a. Fixed so bucket assignments are identical on every platform.
std::uint64_t fnv1a64(std::string_view text);

using FeatureVector = std::vector<double>;

/// Layout: [one-hot card bucket | one-hot merchant bucket |
///          0.25*log1p(amount) | sin(tod) | cos(tod)], tod = 2*pi*sec_of_day/86400.
FeatureVector encode_features(const Transaction& tx, const EncoderConfig& enc);

struct EdgeRule {
    bool link_on_shared_card = true;
    bool link_on_shared_merchant = true;
    std::int64_t max_gap_seconds = 7 * 86400;
    int degree_cap = 32;

    bool operator==(const EdgeRule&) const = default;
};

void validate(const EdgeRule& rule);
void validate(const EncoderConfig& enc);

void to_json(nlohmann::json& j, const EdgeRule& r);
void from_json(const nlohmann::json& j, EdgeRule& r);
void to_json(nlohmann::json& j, const EncoderConfig& e);
void from_json(const nlohmann::json& j, EncoderConfig& e);

/// Transaction graph. Nodes are transactions in arrival order; two nodes are
/// candidates for an edge when they share a card or merchant (per the rule)
/// and their timestamps differ by at most max_gap_seconds. Each node ranks its
/// candidates by recency (newer first, then smaller tx_id) and keeps the top
/// degree_cap; an edge exists when each endpoint keeps the other.
///
/// Only the top degree_cap candidates are stored per node. That is enough:
/// arrivals only ever compete for the front of a list and eviction only
/// removes from its tail (evicted nodes are older than every survivor).
///
/// Single writer. Concurrent readers are fine when no writer is active.
class TxGraph {
public:
    TxGraph() = default;
    TxGraph(EdgeRule rule, EncoderConfig enc);

    std::size_t size() const { return nodes_.size(); }
    bool empty() const { return nodes_.empty(); }

    const EdgeRule& rule() const { return rule_; }
    const EncoderConfig& encoder() const { return enc_; }
    int d_in() const { return enc_.d_in(); }

    /// Appends a node and links it. Throws OutOfOrderError when tx is older
    /// than the newest node. Returns the new node's index.
    std::size_t add_transaction(const Transaction& tx);

    /// Drops every node with timestamp < cutoff_ts along with its edges.
    void evict_before(std::int64_t cutoff_ts);

    /// Sorted adjacent node indices. Throws Error on a bad index.
    std::vector<std::size_t> neighbors(std::size_t i) const;
    std::size_t degree(std::size_t i) const;

    /// All edges (i, j), i < j, sorted.
    std::vector<std::pair<std::size_t, std::size_t>> edges() const;
    std::size_t edge_count() const;

    const Transaction& transaction(std::size_t i) const { return node(i).tx; }
    std::uint64_t tx_id(std::size_t i) const { return node(i).tx.tx_id; }
    std::int64_t timestamp(std::size_t i) const { return node(i).tx.timestamp; }
    Label label(std::size_t i) const { return node(i).tx.label; }
    std::span<const double> features(std::size_t i) const { return node(i).x; }
    std::vector<std::uint64_t> node_ids() const;
    std::int64_t newest_timestamp() const;

    /// Debug dump: one "i j" line per edge (i < j).
    void write_edge_list(std::ostream& out) const;
    /// Sidecar for the edge list: node_ids and timestamps.
    nlohmann::json sidecar_json() const;

private:
    friend TxGraph build_graph(std::span<const Transaction> txs, const EdgeRule& rule, const EncoderConfig& enc);

    struct Node {
        Transaction tx;
        FeatureVector x;
        std::vector<std::uint64_t> kept;  // top candidates, best first (sequence numbers)
        std::vector<std::uint64_t> adj;   // sequence numbers, ascending
    };

    const Node& node(std::size_t i) const;
    Node& at_seq(std::uint64_t seq) { return nodes_[seq - base_]; }
    const Node& at_seq(std::uint64_t seq) const { return nodes_[seq - base_]; }
    bool ranks_before(std::uint64_t a, std::uint64_t b) const;
    static bool keeps(const Node& n, std::uint64_t seq);
    static void erase_value(std::vector<std::uint64_t>& v, std::uint64_t seq);
    void index_node(std::uint64_t seq);

    EdgeRule rule_;
    EncoderConfig enc_;
    std::deque<Node> nodes_;
    std::uint64_t base_ = 0;  // sequence number of nodes_.front()
    std::unordered_map<std::string, std::deque<std::uint64_t>> by_card_;
    std::unordered_map<std::string, std::deque<std::uint64_t>> by_merchant_;
};

/// Batch construction over a timestamp-sorted list. Throws Error on unsorted
/// input. Computes full candidate lists directly (no incremental path), so it
/// serves as the reference for add_transaction / evict_before.
TxGraph build_graph(std::span<const Transaction> txs, const EdgeRule& rule, const EncoderConfig& enc);

/// Copying form of TxGraph::evict_before.
TxGraph evict_before(const TxGraph& g, std::int64_t cutoff_ts);

}  // namespace tgtn
