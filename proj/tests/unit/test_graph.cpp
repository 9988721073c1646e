#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numbers>
#include <sstream>

#include "support/fixtures.hpp"
#include "tgtn/error.hpp"
#include "tgtn/graph.hpp"

namespace tgtn {
namespace {

using testing::edge_ids;
using testing::make_tx;
using EdgeSet = std::set<std::pair<std::uint64_t, std::uint64_t>>;

// Direct O(n^2) reading of the edge rule: candidates by entity and gap, each
// side keeps its degree_cap most recent, an edge needs both sides.
EdgeSet oracle_edges(const std::vector<Transaction>& txs, const EdgeRule& rule) {
    const auto n = txs.size();
    std::vector<std::vector<std::size_t>> cand(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const bool card = rule.link_on_shared_card && txs[i].card_id == txs[j].card_id;
            const bool merchant = rule.link_on_shared_merchant && txs[i].merchant_id == txs[j].merchant_id;
            if ((card || merchant) && std::abs(txs[i].timestamp - txs[j].timestamp) <= rule.max_gap_seconds)
                cand[i].push_back(j);
        }
    std::vector<std::set<std::size_t>> kept(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto c = cand[i];
        std::sort(c.begin(), c.end(), [&](std::size_t a, std::size_t b) {
            if (txs[a].timestamp != txs[b].timestamp) return txs[a].timestamp > txs[b].timestamp;
            return txs[a].tx_id < txs[b].tx_id;
        });
        if (c.size() > static_cast<std::size_t>(rule.degree_cap)) c.resize(static_cast<std::size_t>(rule.degree_cap));
        kept[i].insert(c.begin(), c.end());
    }
    EdgeSet out;
    for (std::size_t i = 0; i < n; ++i)
        for (const auto j : kept[i])
            if (i < j && kept[j].contains(i))
                out.emplace(std::min(txs[i].tx_id, txs[j].tx_id), std::max(txs[i].tx_id, txs[j].tx_id));
    return out;
}

EdgeRule small_rule(Rng& rng) {
    EdgeRule r;
    r.max_gap_seconds = 1 + static_cast<std::int64_t>(rng.below(5000));
    r.degree_cap = 1 + static_cast<int>(rng.below(6));
    r.link_on_shared_card = rng.bernoulli(0.8);
    r.link_on_shared_merchant = rng.bernoulli(0.8);
    return r;
}

void expect_symmetric(const TxGraph& g) {
    for (std::size_t i = 0; i < g.size(); ++i)
        for (const auto j : g.neighbors(i)) {
            const auto back = g.neighbors(j);
            EXPECT_TRUE(std::binary_search(back.begin(), back.end(), i));
            EXPECT_NE(i, j);
        }
}

TEST(Encode, Layout) {
    EncoderConfig enc;
    const auto tx = make_tx(1, 86400 * 100, "card-1", "m-9", 0);
    const auto x = encode_features(tx, enc);
    ASSERT_EQ(x.size(), static_cast<std::size_t>(enc.d_in()));
    const auto card = fnv1a64("card-1") % 64, merch = fnv1a64("m-9") % 64;
    for (int k = 0; k < 64; ++k) {
        EXPECT_EQ(x[static_cast<std::size_t>(k)], k == static_cast<int>(card) ? 1.0 : 0.0);
        EXPECT_EQ(x[64 + static_cast<std::size_t>(k)], k == static_cast<int>(merch) ? 1.0 : 0.0);
    }
    EXPECT_EQ(x[128], 0.0);  // log1p(0)
    EXPECT_EQ(x[129], 0.0);  // midnight
    EXPECT_EQ(x[130], 1.0);
}

TEST(Encode, AmountAndTimeOfDay) {
    EncoderConfig enc{4, 4};
    const auto x = encode_features(make_tx(1, 6 * 3600, "a", "b", 1234), enc);
    EXPECT_DOUBLE_EQ(x[8], kAmountFeatureScale * std::log1p(12.34));
    EXPECT_NEAR(x[9], 1.0, 1e-15);  // a quarter of the day
    EXPECT_NEAR(x[10], 0.0, 1e-15);
}

TEST(Encode, Fnv1aKnownVectors) {
    EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
    EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
    EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
}

TEST(Encode, IdenticalAttributesGiveIdenticalVectors) {
    EncoderConfig enc;
    EXPECT_EQ(encode_features(make_tx(1, 500, "c", "m", 77), enc),
              encode_features(make_tx(2, 500 + 86400 * 3, "c", "m", 77), enc));
}

TEST(BuildGraph, HandExamples) {
    EncoderConfig enc;
    EdgeRule rule;
    rule.max_gap_seconds = 3600;
    const std::vector<Transaction> near = {make_tx(1, 0, "c", "m1"), make_tx(2, 10, "c", "m2")};
    EXPECT_EQ(build_graph(near, rule, enc).edge_count(), 1u);
    const std::vector<Transaction> far = {make_tx(1, 0, "c", "m1"), make_tx(2, 7200, "c", "m2")};
    EXPECT_EQ(build_graph(far, rule, enc).edge_count(), 0u);
    const std::vector<Transaction> distinct = {make_tx(1, 0, "a", "x"), make_tx(2, 1, "b", "y"), make_tx(3, 2, "c", "z")};
    EXPECT_EQ(build_graph(distinct, rule, enc).edge_count(), 0u);
}

TEST(BuildGraph, GapBoundaryIsInclusive) {
    EdgeRule rule;
    rule.max_gap_seconds = 100;
    const std::vector<Transaction> txs = {make_tx(1, 0, "c", "a"), make_tx(2, 100, "c", "b")};
    EXPECT_EQ(build_graph(txs, rule, {}).edge_count(), 1u);
}

TEST(BuildGraph, StarNeighbors) {
    std::vector<Transaction> txs = {make_tx(1, 0, "hub", "m")};
    for (std::uint64_t k = 0; k < 4; ++k) txs.push_back(make_tx(k + 2, static_cast<std::int64_t>(k + 1), "leaf" + std::to_string(k), "x" + std::to_string(k)));
    for (auto& tx : txs) tx.merchant_id = tx.tx_id == 1 ? "m" : "x" + std::to_string(tx.tx_id);
    for (std::size_t k = 1; k < txs.size(); ++k) txs[k].card_id = "hub";
    const auto g = build_graph(txs, {}, {});
    EXPECT_EQ(g.neighbors(0).size(), 4u);
    EXPECT_EQ(g.neighbors(1), std::vector<std::size_t>({0, 2, 3, 4}));
}

TEST(BuildGraph, DegreeCapKeepsMostRecentMutual) {
    EdgeRule rule;
    rule.degree_cap = 2;
    // Same card everywhere: node 0's two most recent candidates are 3 and 2,
    // but 3 keeps only 2 and 1, so 0 ends up isolated.
    std::vector<Transaction> txs;
    for (std::uint64_t i = 0; i < 4; ++i) txs.push_back(make_tx(i + 1, static_cast<std::int64_t>(i * 10), "c", "m" + std::to_string(i)));
    const auto g = build_graph(txs, rule, {});
    EXPECT_TRUE(g.neighbors(0).empty());
    EXPECT_EQ(g.neighbors(3), std::vector<std::size_t>({1, 2}));
    EXPECT_EQ(edge_ids(g), oracle_edges(txs, rule));
}

TEST(BuildGraph, TieBreakPrefersSmallerTxId) {
    EdgeRule rule;
    rule.degree_cap = 1;
    const std::vector<Transaction> txs = {make_tx(1, 0, "c", "a"), make_tx(2, 5, "c", "b"), make_tx(3, 5, "d", "a")};
    // Node 1 (id 1) has candidates id 2 and id 3, both at ts 5; keeps id 2.
    const auto g = build_graph(txs, rule, {});
    EXPECT_EQ(edge_ids(g), EdgeSet({{1, 2}}));
}

TEST(BuildGraph, RejectsUnsorted) {
    const std::vector<Transaction> txs = {make_tx(1, 10, "c", "m"), make_tx(2, 5, "c", "m")};
    EXPECT_THROW(build_graph(txs, {}, {}), Error);
}

TEST(BuildGraph, MatchesOracleProperty) {
    Rng rng(101);
    for (int trial = 0; trial < 60; ++trial) {
        const auto rule = small_rule(rng);
        const auto txs = testing::random_transactions(rng, 1 + rng.below(120), 1 + static_cast<int>(rng.below(8)),
                                                      1 + static_cast<int>(rng.below(8)), 20000);
        const auto g = build_graph(txs, rule, {8, 8});
        EXPECT_EQ(edge_ids(g), oracle_edges(txs, rule)) << "trial " << trial;
        expect_symmetric(g);
        for (const auto& [i, j] : g.edges()) {
            EXPECT_LE(std::abs(g.timestamp(i) - g.timestamp(j)), rule.max_gap_seconds);
            EXPECT_TRUE((rule.link_on_shared_card && g.transaction(i).card_id == g.transaction(j).card_id) ||
                        (rule.link_on_shared_merchant && g.transaction(i).merchant_id == g.transaction(j).merchant_id));
        }
        for (std::size_t i = 0; i < g.size(); ++i) EXPECT_LE(g.degree(i), static_cast<std::size_t>(rule.degree_cap));
    }
}

TEST(Incremental, EqualsBatchProperty) {
    Rng rng(202);
    for (int trial = 0; trial < 60; ++trial) {
        const auto rule = small_rule(rng);
        const auto txs = testing::random_transactions(rng, 1 + rng.below(150), 1 + static_cast<int>(rng.below(6)),
                                                      1 + static_cast<int>(rng.below(6)), 30000);
        TxGraph inc(rule, {8, 8});
        for (std::size_t k = 0; k < txs.size(); ++k) {
            EXPECT_EQ(inc.add_transaction(txs[k]), k);
            if (k % 17 == 0) {
                const std::vector<Transaction> prefix(txs.begin(), txs.begin() + static_cast<std::ptrdiff_t>(k + 1));
                ASSERT_EQ(edge_ids(inc), oracle_edges(prefix, rule)) << "trial " << trial << " k " << k;
            }
        }
        const auto batch = build_graph(txs, rule, {8, 8});
        EXPECT_EQ(inc.edges(), batch.edges());
        EXPECT_EQ(inc.node_ids(), batch.node_ids());
    }
}

TEST(Incremental, EvictionEqualsRebuildProperty) {
    Rng rng(303);
    for (int trial = 0; trial < 60; ++trial) {
        const auto rule = small_rule(rng);
        const auto txs = testing::random_transactions(rng, 1 + rng.below(150), 1 + static_cast<int>(rng.below(6)),
                                                      1 + static_cast<int>(rng.below(6)), 30000);
        TxGraph g(rule, {8, 8});
        std::int64_t cutoff = 0;
        for (const auto& tx : txs) {
            g.add_transaction(tx);
            if (rng.bernoulli(0.2)) {
                cutoff = std::max(cutoff, tx.timestamp - static_cast<std::int64_t>(rng.below(8000)));
                g.evict_before(cutoff);
                std::vector<Transaction> survivors;
                for (const auto& t : txs) {
                    if (t.tx_id > tx.tx_id) break;
                    if (t.timestamp >= cutoff) survivors.push_back(t);
                }
                ASSERT_EQ(edge_ids(g), oracle_edges(survivors, rule)) << "trial " << trial;
                ASSERT_EQ(g.size(), survivors.size());
                const auto rebuilt = build_graph(survivors, rule, {8, 8});
                ASSERT_EQ(g.edges(), rebuilt.edges());
            }
        }
    }
}

TEST(Incremental, OutOfOrderIsDistinguishable) {
    TxGraph g(EdgeRule{}, EncoderConfig{});
    EXPECT_EQ(g.add_transaction(make_tx(1, 100, "c", "m")), 0u);
    EXPECT_THROW(g.add_transaction(make_tx(2, 99, "c", "m")), OutOfOrderError);
    EXPECT_EQ(g.size(), 1u);
    EXPECT_EQ(g.add_transaction(make_tx(3, 100, "c", "m")), 1u);  // equal timestamp is fine
}

TEST(Eviction, Examples) {
    EdgeRule rule;
    const std::vector<Transaction> path = {make_tx(1, 0, "a", "x"), make_tx(2, 10, "a", "y"), make_tx(3, 20, "b", "y")};
    const auto g = build_graph(path, rule, {});
    ASSERT_EQ(g.edge_count(), 2u);
    EXPECT_EQ(evict_before(g, -5).edges(), g.edges());
    EXPECT_TRUE(evict_before(g, 1000).empty());

    // Removing the middle of the path leaves two isolated nodes; as a
    // prefix eviction this is node 2 after node 1 is also gone, so check
    // via rebuild of the other two instead.
    const std::vector<Transaction> ends = {path[0], path[2]};
    EXPECT_EQ(build_graph(ends, rule, {}).edge_count(), 0u);
    auto h = g;
    h.evict_before(10);
    EXPECT_EQ(h.size(), 2u);
    EXPECT_EQ(h.node_ids(), std::vector<std::uint64_t>({2, 3}));
    EXPECT_EQ(h.edges(), (std::vector<std::pair<std::size_t, std::size_t>>{{0, 1}}));
}

TEST(Neighbors, BadIndexThrows) {
    const auto g = build_graph(std::vector<Transaction>{make_tx(1, 0, "a", "b")}, {}, {});
    EXPECT_TRUE(g.neighbors(0).empty());
    EXPECT_THROW(g.neighbors(1), Error);
}

TEST(EdgeList, DumpAndSidecar) {
    const std::vector<Transaction> txs = {make_tx(5, 0, "a", "x"), make_tx(9, 10, "a", "y")};
    const auto g = build_graph(txs, {}, {});
    std::ostringstream os;
    g.write_edge_list(os);
    EXPECT_EQ(os.str(), "0 1\n");
    const auto side = g.sidecar_json();
    EXPECT_EQ(side.at("node_ids"), nlohmann::json({5, 9}));
    EXPECT_EQ(side.at("timestamps"), nlohmann::json({0, 10}));
}

TEST(EdgeRule, Validation) {
    EdgeRule r;
    r.max_gap_seconds = 0;
    EXPECT_THROW(validate(r), Error);
    r = EdgeRule{};
    r.degree_cap = 0;
    EXPECT_THROW(validate(r), Error);
    const nlohmann::json j = EdgeRule{};
    EXPECT_EQ(j.get<EdgeRule>(), EdgeRule{});
}

}  // namespace
}  // namespace tgtn
