#include "tgtn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

#include "tgtn/error.hpp"

namespace tgtn {

std::uint64_t fnv1a64(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

FeatureVector encode_features(const Transaction& tx, const EncoderConfig& enc) {
    FeatureVector x(static_cast<std::size_t>(enc.d_in()), 0.0);
    const auto bc = static_cast<std::uint64_t>(enc.card_buckets);
    const auto bm = static_cast<std::uint64_t>(enc.merchant_buckets);
    x[fnv1a64(tx.card_id) % bc] = 1.0;
    x[bc + fnv1a64(tx.merchant_id) % bm] = 1.0;
    const std::size_t tail = bc + bm;
    x[tail] = kAmountFeatureScale * std::log1p(tx.amount());
    // floor-mod so pre-1970 timestamps still land in [0, 86400)
    const std::int64_t sec_of_day = ((tx.timestamp % 86400) + 86400) % 86400;
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(sec_of_day) / 86400.0;
    x[tail + 1] = std::sin(angle);
    x[tail + 2] = std::cos(angle);
    return x;
}

void validate(const EdgeRule& rule) {
    if (rule.max_gap_seconds <= 0) throw Error("invalid EdgeRule field 'max_gap_seconds': must be > 0");
    if (rule.degree_cap < 1) throw Error("invalid EdgeRule field 'degree_cap': must be >= 1");
}

void validate(const EncoderConfig& enc) {
    if (enc.card_buckets < 1) throw Error("invalid EncoderConfig field 'card_buckets': must be >= 1");
    if (enc.merchant_buckets < 1) throw Error("invalid EncoderConfig field 'merchant_buckets': must be >= 1");
}

void to_json(nlohmann::json& j, const EdgeRule& r) {
    j = {{"link_on_shared_card", r.link_on_shared_card},
         {"link_on_shared_merchant", r.link_on_shared_merchant},
         {"max_gap_seconds", r.max_gap_seconds},
         {"degree_cap", r.degree_cap}};
}

void from_json(const nlohmann::json& j, EdgeRule& r) {
    EdgeRule d;
    if (j.contains("link_on_shared_card")) j.at("link_on_shared_card").get_to(d.link_on_shared_card);
    if (j.contains("link_on_shared_merchant")) j.at("link_on_shared_merchant").get_to(d.link_on_shared_merchant);
    if (j.contains("max_gap_seconds")) j.at("max_gap_seconds").get_to(d.max_gap_seconds);
    if (j.contains("degree_cap")) j.at("degree_cap").get_to(d.degree_cap);
    r = d;
}

void to_json(nlohmann::json& j, const EncoderConfig& e) {
    j = {{"card_buckets", e.card_buckets}, {"merchant_buckets", e.merchant_buckets}};
}

void from_json(const nlohmann::json& j, EncoderConfig& e) {
    EncoderConfig d;
    if (j.contains("card_buckets")) j.at("card_buckets").get_to(d.card_buckets);
    if (j.contains("merchant_buckets")) j.at("merchant_buckets").get_to(d.merchant_buckets);
    e = d;
}

TxGraph::TxGraph(EdgeRule rule, EncoderConfig enc) : rule_(rule), enc_(enc) {
    validate(rule_);
    validate(enc_);
}

const TxGraph::Node& TxGraph::node(std::size_t i) const {
    if (i >= nodes_.size())
        throw Error("node index " + std::to_string(i) + " out of range (size " + std::to_string(nodes_.size()) + ")");
    return nodes_[i];
}

bool TxGraph::ranks_before(std::uint64_t a, std::uint64_t b) const {
    const auto& ta = at_seq(a).tx;
    const auto& tb = at_seq(b).tx;
    if (ta.timestamp != tb.timestamp) return ta.timestamp > tb.timestamp;
    return ta.tx_id < tb.tx_id;
}

bool TxGraph::keeps(const Node& n, std::uint64_t seq) {
    return std::find(n.kept.begin(), n.kept.end(), seq) != n.kept.end();
}

void TxGraph::erase_value(std::vector<std::uint64_t>& v, std::uint64_t seq) {
    const auto it = std::find(v.begin(), v.end(), seq);
    if (it != v.end()) v.erase(it);
}

void TxGraph::index_node(std::uint64_t seq) {
    const auto& tx = at_seq(seq).tx;
    by_card_[tx.card_id].push_back(seq);
    by_merchant_[tx.merchant_id].push_back(seq);
}

std::int64_t TxGraph::newest_timestamp() const {
    if (nodes_.empty()) throw Error("newest_timestamp on empty graph");
    return nodes_.back().tx.timestamp;
}

std::size_t TxGraph::add_transaction(const Transaction& tx) {
    if (!nodes_.empty() && tx.timestamp < nodes_.back().tx.timestamp)
        throw OutOfOrderError("transaction " + std::to_string(tx.tx_id) + " at ts " + std::to_string(tx.timestamp) +
                              " is older than newest node ts " + std::to_string(nodes_.back().tx.timestamp));
    const auto cap = static_cast<std::size_t>(rule_.degree_cap);
    const std::uint64_t seq = base_ + nodes_.size();

    std::vector<std::uint64_t> cands;
    auto collect = [&](const auto& index, const std::string& key) {
        const auto it = index.find(key);
        if (it == index.end()) return;
        for (auto s = it->second.rbegin(); s != it->second.rend(); ++s) {
            if (*s < base_ || tx.timestamp - at_seq(*s).tx.timestamp > rule_.max_gap_seconds) break;
            cands.push_back(*s);
        }
    };
    if (rule_.link_on_shared_card) collect(by_card_, tx.card_id);
    if (rule_.link_on_shared_merchant) collect(by_merchant_, tx.merchant_id);
    std::sort(cands.begin(), cands.end());
    cands.erase(std::unique(cands.begin(), cands.end()), cands.end());

    nodes_.push_back(Node{tx, encode_features(tx, enc_), {}, {}});
    Node& fresh = nodes_.back();
    fresh.kept = cands;
    std::sort(fresh.kept.begin(), fresh.kept.end(), [this](auto a, auto b) { return ranks_before(a, b); });
    if (fresh.kept.size() > cap) fresh.kept.resize(cap);

    for (const auto c : cands) {
        Node& other = at_seq(c);
        const auto pos = std::find_if(other.kept.begin(), other.kept.end(),
                                      [&](std::uint64_t k) { return ranks_before(seq, k); });
        other.kept.insert(pos, seq);
        if (other.kept.size() > cap) {
            const auto dropped = other.kept.back();
            other.kept.pop_back();
            if (dropped != seq) {
                // (c, dropped) may have been an edge; it no longer qualifies.
                erase_value(other.adj, dropped);
                erase_value(at_seq(dropped).adj, c);
            }
        }
        if (keeps(other, seq) && keeps(fresh, c)) {
            other.adj.push_back(seq);  // seq is the largest sequence number
            fresh.adj.push_back(c);
        }
    }
    std::sort(fresh.adj.begin(), fresh.adj.end());
    index_node(seq);
    return nodes_.size() - 1;
}

void TxGraph::evict_before(std::int64_t cutoff_ts) {
    std::size_t k = 0;
    while (k < nodes_.size() && nodes_[k].tx.timestamp < cutoff_ts) ++k;
    if (k == 0) return;
    for (std::size_t i = 0; i < k; ++i) nodes_.pop_front();
    base_ += k;
    for (auto& n : nodes_) {
        // evicted nodes are older than every survivor: tail of kept, head of adj
        while (!n.kept.empty() && n.kept.back() < base_) n.kept.pop_back();
        const auto first = std::lower_bound(n.adj.begin(), n.adj.end(), base_);
        n.adj.erase(n.adj.begin(), first);
    }
    auto prune = [this](auto& index) {
        for (auto it = index.begin(); it != index.end();) {
            auto& q = it->second;
            while (!q.empty() && q.front() < base_) q.pop_front();
            it = q.empty() ? index.erase(it) : std::next(it);
        }
    };
    prune(by_card_);
    prune(by_merchant_);
}

std::vector<std::size_t> TxGraph::neighbors(std::size_t i) const {
    const auto& n = node(i);
    std::vector<std::size_t> out;
    out.reserve(n.adj.size());
    for (const auto s : n.adj) out.push_back(static_cast<std::size_t>(s - base_));
    return out;
}

std::size_t TxGraph::degree(std::size_t i) const { return node(i).adj.size(); }

std::vector<std::pair<std::size_t, std::size_t>> TxGraph::edges() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i)
        for (const auto s : nodes_[i].adj) {
            const auto j = static_cast<std::size_t>(s - base_);
            if (i < j) out.emplace_back(i, j);
        }
    return out;
}

std::size_t TxGraph::edge_count() const {
    std::size_t total = 0;
    for (const auto& n : nodes_) total += n.adj.size();
    return total / 2;
}

std::vector<std::uint64_t> TxGraph::node_ids() const {
    std::vector<std::uint64_t> ids;
    ids.reserve(nodes_.size());
    for (const auto& n : nodes_) ids.push_back(n.tx.tx_id);
    return ids;
}

void TxGraph::write_edge_list(std::ostream& out) const {
    for (const auto& [i, j] : edges()) out << i << ' ' << j << '\n';
}

nlohmann::json TxGraph::sidecar_json() const {
    nlohmann::json ts = nlohmann::json::array();
    for (const auto& n : nodes_) ts.push_back(n.tx.timestamp);
    return {{"node_ids", node_ids()}, {"timestamps", ts}};
}

TxGraph build_graph(std::span<const Transaction> txs, const EdgeRule& rule, const EncoderConfig& enc) {
    TxGraph g(rule, enc);
    for (std::size_t i = 1; i < txs.size(); ++i)
        if (txs[i].timestamp < txs[i - 1].timestamp)
            throw Error("build_graph: transactions not sorted by timestamp at position " + std::to_string(i));

    const std::size_t n = txs.size();
    std::vector<std::vector<std::uint64_t>> cands(n);
    auto link_groups = [&](auto key_of) {
        std::unordered_map<std::string, std::vector<std::uint64_t>> groups;
        for (std::size_t i = 0; i < n; ++i) groups[key_of(txs[i])].push_back(i);
        for (const auto& [key, members] : groups) {
            for (std::size_t a = 0; a < members.size(); ++a)
                for (std::size_t b = a + 1; b < members.size(); ++b) {
                    const auto i = members[a], j = members[b];
                    if (txs[j].timestamp - txs[i].timestamp > rule.max_gap_seconds) break;
                    cands[i].push_back(j);
                    cands[j].push_back(i);
                }
        }
    };
    if (rule.link_on_shared_card) link_groups([](const Transaction& t) -> const std::string& { return t.card_id; });
    if (rule.link_on_shared_merchant)
        link_groups([](const Transaction& t) -> const std::string& { return t.merchant_id; });

    for (std::size_t i = 0; i < n; ++i) g.nodes_.push_back(TxGraph::Node{txs[i], encode_features(txs[i], enc), {}, {}});

    const auto cap = static_cast<std::size_t>(rule.degree_cap);
    for (std::size_t i = 0; i < n; ++i) {
        auto& c = cands[i];
        std::sort(c.begin(), c.end());
        c.erase(std::unique(c.begin(), c.end()), c.end());
        std::sort(c.begin(), c.end(), [&g](auto a, auto b) { return g.ranks_before(a, b); });
        if (c.size() > cap) c.resize(cap);
        g.nodes_[i].kept = c;
    }
    for (std::size_t i = 0; i < n; ++i)
        for (const auto j : g.nodes_[i].kept)
            if (TxGraph::keeps(g.nodes_[j], i)) g.nodes_[i].adj.push_back(j);
    for (auto& node : g.nodes_) std::sort(node.adj.begin(), node.adj.end());
    for (std::size_t i = 0; i < n; ++i) g.index_node(i);
    return g;
}

TxGraph evict_before(const TxGraph& g, std::int64_t cutoff_ts) {
    TxGraph out = g;
    out.evict_before(cutoff_ts);
    return out;
}

}  // namespace tgtn
