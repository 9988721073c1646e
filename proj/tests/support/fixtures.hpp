#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "tgtn/graph.hpp"
#include "tgtn/model.hpp"
#include "tgtn/numerics.hpp"
#include "tgtn/rng.hpp"
#include "tgtn/txgen.hpp"

namespace tgtn::testing {

inline Transaction make_tx(std::uint64_t id, std::int64_t ts, std::string card, std::string merchant,
                           std::int64_t cents = 1000, Label label = Label::legitimate) {
    return Transaction{id, ts, std::move(card), std::move(merchant), cents, label};
}

/// Small random transaction list, sorted by (timestamp, tx_id). Few cards and
/// merchants so entity sharing is common.
inline std::vector<Transaction> random_transactions(Rng& rng, std::size_t n, int n_cards, int n_merchants,
                                                    std::int64_t span, bool allow_ties = true) {
    std::vector<std::int64_t> ts(n);
    for (auto& t : ts) t = 1'000'000 + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(span)));
    if (allow_ties)
        for (std::size_t i = 1; i < n; ++i)
            if (rng.bernoulli(0.1)) ts[i] = ts[i - 1];
    std::sort(ts.begin(), ts.end());
    std::vector<Transaction> txs;
    for (std::size_t i = 0; i < n; ++i) {
        txs.push_back(make_tx(i + 1, ts[i], "c" + std::to_string(rng.below(static_cast<std::uint64_t>(n_cards))),
                              "m" + std::to_string(rng.below(static_cast<std::uint64_t>(n_merchants))),
                              1 + static_cast<std::int64_t>(rng.below(50000)),
                              rng.bernoulli(0.2) ? Label::fraud : Label::legitimate));
    }
    return txs;
}

/// Random GraphInput with arbitrary symmetric adjacency.
inline GraphInput random_graph_input(Rng& rng, std::size_t n, int d_in, double edge_p) {
    Matrix x(n, static_cast<std::size_t>(d_in));
    for (auto& v : x.values()) v = rng.uniform(-1.0, 1.0);
    std::vector<std::vector<std::size_t>> nbrs(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (rng.bernoulli(edge_p)) {
                nbrs[i].push_back(j);
                nbrs[j].push_back(i);
            }
    std::vector<std::int64_t> ts(n);
    std::vector<std::uint64_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) {
        ts[i] = static_cast<std::int64_t>(rng.below(1000));
        ids[i] = i + 1;
    }
    return make_graph_input(std::move(x), std::move(nbrs), ts, ids);
}

/// Applies node permutation perm (new index k holds old node perm[k]).
inline GraphInput permute(const GraphInput& g, const std::vector<std::size_t>& perm) {
    std::vector<std::size_t> inv(perm.size());
    for (std::size_t k = 0; k < perm.size(); ++k) inv[perm[k]] = k;
    GraphInput out;
    out.features = Matrix(g.size(), g.features.cols());
    out.neighbors.resize(g.size());
    out.positions.resize(g.size());
    for (std::size_t k = 0; k < perm.size(); ++k) {
        const auto src = g.features.row(perm[k]);
        std::copy(src.begin(), src.end(), out.features.row(k).begin());
        for (const auto j : g.neighbors[perm[k]]) out.neighbors[k].push_back(inv[j]);
        std::sort(out.neighbors[k].begin(), out.neighbors[k].end());
        out.positions[k] = g.positions[perm[k]];
    }
    return out;
}

/// Relative error with a floor on the denominator so that coordinates whose
/// true gradient is ~0 are compared absolutely.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline std::set<std::pair<std::uint64_t, std::uint64_t>> edge_ids(const TxGraph& g) {
    std::set<std::pair<std::uint64_t, std::uint64_t>> out;
    for (const auto& [i, j] : g.edges()) {
        const auto a = g.tx_id(i), b = g.tx_id(j);
        out.emplace(std::min(a, b), std::max(a, b));
    }
    return out;
}

}  // namespace tgtn::testing
