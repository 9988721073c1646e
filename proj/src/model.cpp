#include "tgtn/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <string>

#include "tgtn/error.hpp"
#include "tgtn/rng.hpp"

namespace tgtn {

void validate(const TgtnConfig& c) {
    auto fail = [](const char* field, const char* why) {
        throw Error(std::string("invalid TgtnConfig field '") + field + "': " + why);
    };
    if (c.d_model < 1) fail("d_model", "must be >= 1");
    if (c.n_heads < 1) fail("n_heads", "must be >= 1");
    if (c.d_model % c.n_heads != 0) fail("n_heads", "must divide d_model");
    if (c.n_layers < 1) fail("n_layers", "must be >= 1");
    if (c.d_ff < 1) fail("d_ff", "must be >= 1");
    if (!(c.dropout_rate >= 0.0 && c.dropout_rate < 1.0)) fail("dropout_rate", "must be in [0, 1)");
    if (!(c.ln_eps > 0.0)) fail("ln_eps", "must be > 0");
}

void to_json(nlohmann::json& j, const TgtnConfig& c) {
    j = {{"d_model", c.d_model},       {"n_heads", c.n_heads},
         {"n_layers", c.n_layers},     {"d_ff", c.d_ff},
         {"use_pe", c.use_pe},         {"use_attention", c.use_attention},
         {"dropout_rate", c.dropout_rate}, {"ln_eps", c.ln_eps}};
}

void from_json(const nlohmann::json& j, TgtnConfig& c) {
    TgtnConfig d;
    auto get = [&j](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    get("d_model", d.d_model);
    get("n_heads", d.n_heads);
    get("n_layers", d.n_layers);
    get("d_ff", d.d_ff);
    get("use_pe", d.use_pe);
    get("use_attention", d.use_attention);
    get("dropout_rate", d.dropout_rate);
    get("ln_eps", d.ln_eps);
    c = d;
}

std::vector<std::size_t> timestamp_ranks(std::span<const std::int64_t> timestamps,
                                         std::span<const std::uint64_t> tx_ids) {
    std::vector<std::size_t> order(timestamps.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (timestamps[a] != timestamps[b]) return timestamps[a] < timestamps[b];
        return tx_ids[a] < tx_ids[b];
    });
    std::vector<std::size_t> rank(order.size());
    for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r;
    return rank;
}

GraphInput make_graph_input(Matrix features, std::vector<std::vector<std::size_t>> neighbors,
                            std::span<const std::int64_t> timestamps, std::span<const std::uint64_t> tx_ids) {
    if (features.rows() != neighbors.size() || timestamps.size() != neighbors.size() ||
        tx_ids.size() != neighbors.size())
        throw Error("make_graph_input: inconsistent node counts");
    GraphInput g;
    g.features = std::move(features);
    g.neighbors = std::move(neighbors);
    for (auto& n : g.neighbors) std::sort(n.begin(), n.end());
    g.positions = timestamp_ranks(timestamps, tx_ids);
    return g;
}

GraphInput graph_input(const TxGraph& g) {
    const std::size_t n = g.size();
    Matrix x(n, static_cast<std::size_t>(g.d_in()));
    std::vector<std::vector<std::size_t>> nbrs(n);
    std::vector<std::int64_t> ts(n);
    std::vector<std::uint64_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto f = g.features(i);
        std::copy(f.begin(), f.end(), x.row(i).begin());
        nbrs[i] = g.neighbors(i);
        ts[i] = g.timestamp(i);
        ids[i] = g.tx_id(i);
    }
    return make_graph_input(std::move(x), std::move(nbrs), ts, ids);
}

Matrix positional_encoding(std::span<const std::size_t> positions, int d_model) {
    Matrix pe(positions.size(), static_cast<std::size_t>(d_model));
    for (std::size_t i = 0; i < positions.size(); ++i) {
        const auto pos = static_cast<double>(positions[i]);
        for (int k = 0; 2 * k < d_model; ++k) {
            const double angle = pos / std::pow(10000.0, (2.0 * k) / d_model);
            pe(i, 2 * k) = std::sin(angle);
            if (2 * k + 1 < d_model) pe(i, 2 * k + 1) = std::cos(angle);
        }
    }
    return pe;
}

Matrix positional_encoding(const TxGraph& g, int d_model) {
    std::vector<std::int64_t> ts(g.size());
    std::vector<std::uint64_t> ids(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        ts[i] = g.timestamp(i);
        ids[i] = g.tx_id(i);
    }
    return positional_encoding(timestamp_ranks(ts, ids), d_model);
}

TgtnParams init_params(const TgtnConfig& config, int d_in, std::uint64_t seed) {
    validate(config);
    if (d_in < 1) throw Error("init_params: d_in must be >= 1");
    TgtnParams p;
    p.config = config;
    p.d_in = d_in;
    p.seed = seed;
    Rng rng(derive_seed(seed, 0x1417));

    const auto dm = static_cast<std::size_t>(config.d_model);
    const auto dh = static_cast<std::size_t>(config.d_head());
    const auto dff = static_cast<std::size_t>(config.d_ff);
    auto glorot = [&rng](std::size_t rows, std::size_t cols) {
        Matrix w(rows, cols);
        const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
        for (auto& v : w.values()) v = rng.uniform(-a, a);
        return w;
    };
    auto& s = p.store;
    p.w_in = s.add("input.W", glorot(static_cast<std::size_t>(d_in), dm));
    p.b_in = s.add("input.b", Matrix(1, dm));
    for (int l = 0; l < config.n_layers; ++l) {
        const std::string prefix = "layer" + std::to_string(l) + ".";
        LayerSlots slots;
        for (int h = 0; h < config.n_heads; ++h) {
            const std::string head = prefix + "head" + std::to_string(h) + ".";
            slots.w_q.push_back(s.add(head + "W_Q", glorot(dm, dh)));
            slots.w_k.push_back(s.add(head + "W_K", glorot(dm, dh)));
            slots.w_v.push_back(s.add(head + "W_V", glorot(dm, dh)));
        }
        slots.w_o = s.add(prefix + "W_O", glorot(dm, dm));
        slots.ln1_gamma = s.add(prefix + "ln1.gamma", Matrix(1, dm, 1.0));
        slots.ln1_beta = s.add(prefix + "ln1.beta", Matrix(1, dm));
        slots.w_1 = s.add(prefix + "ffn.W1", glorot(dm, dff));
        slots.b_1 = s.add(prefix + "ffn.b1", Matrix(1, dff));
        slots.w_2 = s.add(prefix + "ffn.W2", glorot(dff, dm));
        slots.b_2 = s.add(prefix + "ffn.b2", Matrix(1, dm));
        slots.ln2_gamma = s.add(prefix + "ln2.gamma", Matrix(1, dm, 1.0));
        slots.ln2_beta = s.add(prefix + "ln2.beta", Matrix(1, dm));
        p.layers.push_back(std::move(slots));
    }
    p.w_head = s.add("head.W", glorot(dm, 1));
    p.b_head = s.add("head.b", Matrix(1, 1));
    return p;
}

namespace {

// Attention structure: row i lists i itself and its neighbours, ascending.
struct Csr {
    std::vector<std::size_t> offsets;
    std::vector<std::size_t> cols;

    std::size_t nodes() const { return offsets.size() - 1; }
};

Csr make_csr(const GraphInput& g) {
    Csr c;
    c.offsets.reserve(g.size() + 1);
    c.offsets.push_back(0);
    for (std::size_t i = 0; i < g.size(); ++i) {
        bool self_done = false;
        for (const auto j : g.neighbors[i]) {
            if (j >= g.size()) throw Error("graph input: neighbour index out of range");
            if (j == i) throw Error("graph input: self loop in adjacency");
            if (!self_done && i < j) {
                c.cols.push_back(i);
                self_done = true;
            }
            c.cols.push_back(j);
        }
        if (!self_done) c.cols.push_back(i);
        c.offsets.push_back(c.cols.size());
    }
    return c;
}

void check_shapes(const GraphInput& g, const TgtnParams& p) {
    if (g.features.cols() != static_cast<std::size_t>(p.d_in))
        throw Error("graph features have d_in " + std::to_string(g.features.cols()) + " but parameters expect " +
                    std::to_string(p.d_in));
    if (g.features.rows() != g.size() || g.positions.size() != g.size())
        throw Error("graph input: inconsistent node counts");
}

void add_bias(Matrix& m, const Matrix& bias) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        for (std::size_t c = 0; c < m.cols(); ++c) row[c] += bias(0, c);
    }
}

void accumulate_colsum(const Matrix& m, Matrix& out) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const auto row = m.row(r);
        for (std::size_t c = 0; c < m.cols(); ++c) out(0, c) += row[c];
    }
}

std::span<const double> as_span(const Matrix& m) { return {m.data(), m.size()}; }
std::span<double> as_span(Matrix& m) { return {m.data(), m.size()}; }

struct HeadCache {
    Matrix q, k, v;
    std::vector<double> p;   // softmax (or uniform) weights per CSR entry
    std::vector<double> pd;  // after dropout
    std::vector<double> drop;  // dropout scale per CSR entry; empty when inactive
};

struct LayerCache {
    Matrix h_in;
    std::vector<HeadCache> heads;
    Matrix concat;
    LayerNormCache ln1;
    Matrix h1;
    Matrix u;                  // pre-activation of the feedforward
    std::vector<double> ffn_drop;
    Matrix f;                  // relu(u) after dropout
    LayerNormCache ln2;
    Matrix h_out;
};

struct ForwardState {
    std::vector<LayerCache> layers;
    Matrix h_last;
    std::vector<double> probs;
};

class DropoutSource {
public:
    DropoutSource(bool active, double rate, std::uint64_t seed)
        : active_(active && rate > 0.0), rate_(rate), rng_(derive_seed(seed, 0xD509)) {}

    // Scale factors 0 or 1/(1-rate); empty vector when dropout is off.
    std::vector<double> draw(std::size_t n) {
        if (!active_) return {};
        std::vector<double> s(n);
        const double keep = 1.0 / (1.0 - rate_);
        for (auto& v : s) v = rng_.uniform() < rate_ ? 0.0 : keep;
        return s;
    }

private:
    bool active_;
    double rate_;
    Rng rng_;
};

void run_head(const Matrix& h, const Csr& csr, const TgtnParams& p, int layer, int head, HeadCache& hc,
              DropoutSource& dropout) {
    const auto& slots = p.layers[static_cast<std::size_t>(layer)];
    const auto n = csr.nodes();
    const auto dh = static_cast<std::size_t>(p.config.d_head());
    hc.v = matmul(h, p.value(slots.w_v[static_cast<std::size_t>(head)]));
    hc.p.assign(csr.cols.size(), 0.0);
    if (p.config.use_attention) {
        hc.q = matmul(h, p.value(slots.w_q[static_cast<std::size_t>(head)]));
        hc.k = matmul(h, p.value(slots.w_k[static_cast<std::size_t>(head)]));
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        for (std::size_t i = 0; i < n; ++i) {
            const auto qi = hc.q.row(i);
            const auto b = csr.offsets[i], e = csr.offsets[i + 1];
            for (auto t = b; t < e; ++t) {
                const auto kj = hc.k.row(csr.cols[t]);
                double s = 0.0;
                for (std::size_t d = 0; d < dh; ++d) s += qi[d] * kj[d];
                s *= scale;
                if (!std::isfinite(s))
                    throw Error("non-finite attention score in layer " + std::to_string(layer) + " head " +
                                std::to_string(head));
                hc.p[t] = s;
            }
            softmax_inplace(std::span<double>(hc.p.data() + b, e - b));
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            const auto b = csr.offsets[i], e = csr.offsets[i + 1];
            const double w = 1.0 / static_cast<double>(e - b);
            for (auto t = b; t < e; ++t) hc.p[t] = w;
        }
    }
    hc.drop = dropout.draw(csr.cols.size());
    hc.pd = hc.p;
    if (!hc.drop.empty())
        for (std::size_t t = 0; t < hc.pd.size(); ++t) hc.pd[t] *= hc.drop[t];
}

void run_layer(const Matrix& h, const Csr& csr, const TgtnParams& p, int layer, LayerCache& lc,
               DropoutSource& dropout) {
    const auto& cfg = p.config;
    const auto& slots = p.layers[static_cast<std::size_t>(layer)];
    const auto n = csr.nodes();
    const auto dh = static_cast<std::size_t>(cfg.d_head());
    lc.h_in = h;
    lc.heads.assign(static_cast<std::size_t>(cfg.n_heads), {});
    lc.concat = Matrix(n, static_cast<std::size_t>(cfg.d_model));
    for (int hd = 0; hd < cfg.n_heads; ++hd) {
        auto& hc = lc.heads[static_cast<std::size_t>(hd)];
        run_head(h, csr, p, layer, hd, hc, dropout);
        const auto off = static_cast<std::size_t>(hd) * dh;
        for (std::size_t i = 0; i < n; ++i) {
            auto out = lc.concat.row(i).subspan(off, dh);
            for (auto t = csr.offsets[i]; t < csr.offsets[i + 1]; ++t) {
                const double w = hc.pd[t];
                if (w == 0.0) continue;
                const auto vj = hc.v.row(csr.cols[t]);
                for (std::size_t d = 0; d < dh; ++d) out[d] += w * vj[d];
            }
        }
    }
    Matrix z1 = matmul(lc.concat, p.value(slots.w_o));
    z1 += h;
    lc.h1 = layer_norm_rows(z1, as_span(p.value(slots.ln1_gamma)), as_span(p.value(slots.ln1_beta)), cfg.ln_eps,
                            &lc.ln1);

    lc.u = matmul(lc.h1, p.value(slots.w_1));
    add_bias(lc.u, p.value(slots.b_1));
    lc.ffn_drop = dropout.draw(lc.u.size());
    lc.f = Matrix(lc.u.rows(), lc.u.cols());
    for (std::size_t t = 0; t < lc.u.size(); ++t) {
        const double r = lc.u.values()[t] > 0.0 ? lc.u.values()[t] : 0.0;
        lc.f.values()[t] = lc.ffn_drop.empty() ? r : r * lc.ffn_drop[t];
    }
    Matrix z2 = matmul(lc.f, p.value(slots.w_2));
    add_bias(z2, p.value(slots.b_2));
    z2 += lc.h1;
    lc.h_out = layer_norm_rows(z2, as_span(p.value(slots.ln2_gamma)), as_span(p.value(slots.ln2_beta)), cfg.ln_eps,
                               &lc.ln2);
    if (!lc.h_out.all_finite()) throw Error("non-finite node state after layer " + std::to_string(layer));
}

ForwardState run_forward(const GraphInput& g, const Csr& csr, const TgtnParams& p, bool training,
                         std::uint64_t seed) {
    check_shapes(g, p);
    DropoutSource dropout(training, p.config.dropout_rate, seed);
    ForwardState st;
    Matrix h = initial_states(g, p);
    st.layers.resize(static_cast<std::size_t>(p.config.n_layers));
    for (int l = 0; l < p.config.n_layers; ++l) {
        run_layer(h, csr, p, l, st.layers[static_cast<std::size_t>(l)], dropout);
        h = st.layers[static_cast<std::size_t>(l)].h_out;
    }
    const Matrix z = matmul(h, p.value(p.w_head));
    const double bias = p.value(p.b_head)(0, 0);
    st.probs.resize(z.rows());
    for (std::size_t i = 0; i < z.rows(); ++i) st.probs[i] = sigmoid(z(i, 0) + bias);
    st.h_last = std::move(h);
    return st;
}

struct LossTerms {
    double loss = 0.0;
    std::vector<double> dz;  // dL/dlogit per node
};

LossTerms loss_terms(std::span<const double> probs, std::span<const double> labels,
                     std::span<const std::uint8_t> mask, double pos_weight) {
    if (labels.size() != probs.size() || mask.size() != probs.size())
        throw Error("labels / node_mask length does not match the graph");
    std::vector<double> p, y;
    for (std::size_t i = 0; i < probs.size(); ++i)
        if (mask[i]) {
            p.push_back(probs[i]);
            y.push_back(labels[i]);
        }
    if (p.empty()) throw Error("node_mask selects no nodes");
    LossTerms out;
    out.loss = weighted_bce(p, y, pos_weight);
    out.dz.assign(probs.size(), 0.0);
    const double inv_m = 1.0 / static_cast<double>(p.size());
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (!mask[i]) continue;
        const double q = probs[i];
        if (q < kBceClamp || q > 1.0 - kBceClamp) continue;  // clamped: flat
        out.dz[i] = inv_m * (-pos_weight * labels[i] * (1.0 - q) + (1.0 - labels[i]) * q);
    }
    return out;
}

}  // namespace

Matrix initial_states(const GraphInput& g, const TgtnParams& p) {
    check_shapes(g, p);
    Matrix h = matmul(g.features, p.value(p.w_in));
    add_bias(h, p.value(p.b_in));
    if (p.config.use_pe) h += positional_encoding(g.positions, p.config.d_model);
    return h;
}

AttentionWeights attention_weights(const Matrix& h, const GraphInput& g, const TgtnParams& params, int layer,
                                   int head) {
    const Csr csr = make_csr(g);
    DropoutSource off(false, 0.0, 0);
    HeadCache hc;
    run_head(h, csr, params, layer, head, hc, off);
    return {csr.offsets, csr.cols, hc.p};
}

Matrix attention_head(const Matrix& h, const GraphInput& g, const TgtnParams& params, int layer, int head) {
    const Csr csr = make_csr(g);
    DropoutSource off(false, 0.0, 0);
    HeadCache hc;
    run_head(h, csr, params, layer, head, hc, off);
    const auto dh = hc.v.cols();
    Matrix out(csr.nodes(), dh);
    for (std::size_t i = 0; i < csr.nodes(); ++i)
        for (auto t = csr.offsets[i]; t < csr.offsets[i + 1]; ++t)
            for (std::size_t d = 0; d < dh; ++d) out(i, d) += hc.p[t] * hc.v(csr.cols[t], d);
    return out;
}

Matrix gat_layer_forward(const Matrix& h, const GraphInput& g, const TgtnParams& params, int layer) {
    if (layer < 0 || layer >= params.config.n_layers) throw Error("gat_layer_forward: bad layer index");
    const Csr csr = make_csr(g);
    DropoutSource off(false, 0.0, 0);
    LayerCache lc;
    run_layer(h, csr, params, layer, lc, off);
    return lc.h_out;
}

std::vector<double> forward(const GraphInput& g, const TgtnParams& params, bool training, std::uint64_t rng_seed) {
    return run_forward(g, make_csr(g), params, training, rng_seed).probs;
}

std::vector<double> forward(const TxGraph& g, const TgtnParams& params, bool training, std::uint64_t rng_seed) {
    return forward(graph_input(g), params, training, rng_seed);
}

std::vector<double> forward_targets(const GraphInput& g, const TgtnParams& params,
                                    std::span<const std::size_t> targets) {
    // Collect the receptive field: every node within n_layers hops.
    std::vector<int> hop(g.size(), -1);
    std::vector<std::size_t> frontier;
    for (const auto t : targets) {
        if (t >= g.size()) throw Error("forward_targets: target index out of range");
        if (hop[t] < 0) {
            hop[t] = 0;
            frontier.push_back(t);
        }
    }
    for (int depth = 1; depth <= params.config.n_layers; ++depth) {
        std::vector<std::size_t> next;
        for (const auto i : frontier)
            for (const auto j : g.neighbors[i])
                if (hop[j] < 0) {
                    hop[j] = depth;
                    next.push_back(j);
                }
        frontier = std::move(next);
    }
    std::vector<std::size_t> ball;
    for (std::size_t i = 0; i < g.size(); ++i)
        if (hop[i] >= 0) ball.push_back(i);
    std::vector<std::size_t> local(g.size(), 0);
    for (std::size_t k = 0; k < ball.size(); ++k) local[ball[k]] = k;

    // Order-preserving relabelling keeps every row's accumulation order, so
    // the targets' outputs match the full pass bit for bit. Border nodes lose
    // neighbours, which only affects states outside the targets' field.
    GraphInput sub;
    sub.features = Matrix(ball.size(), g.features.cols());
    sub.neighbors.resize(ball.size());
    sub.positions.resize(ball.size());
    for (std::size_t k = 0; k < ball.size(); ++k) {
        const auto i = ball[k];
        const auto src = g.features.row(i);
        std::copy(src.begin(), src.end(), sub.features.row(k).begin());
        for (const auto j : g.neighbors[i])
            if (hop[j] >= 0) sub.neighbors[k].push_back(local[j]);
        sub.positions[k] = g.positions[i];
    }
    const auto probs = forward(sub, params);
    std::vector<double> out;
    out.reserve(targets.size());
    for (const auto t : targets) out.push_back(probs[local[t]]);
    return out;
}

double masked_loss(const GraphInput& g, const TgtnParams& params, std::span<const double> labels,
                   std::span<const std::uint8_t> node_mask, double pos_weight, bool training,
                   std::uint64_t rng_seed) {
    const auto st = run_forward(g, make_csr(g), params, training, rng_seed);
    return loss_terms(st.probs, labels, node_mask, pos_weight).loss;
}

double backward(const GraphInput& g, TgtnParams& params, std::span<const double> labels,
                std::span<const std::uint8_t> node_mask, double pos_weight, bool training,
                std::uint64_t rng_seed) {
    const Csr csr = make_csr(g);
    const auto st = run_forward(g, csr, params, training, rng_seed);
    const auto terms = loss_terms(st.probs, labels, node_mask, pos_weight);
    params.store.zero_grad();

    const auto& cfg = params.config;
    const auto n = csr.nodes();
    const auto dh = static_cast<std::size_t>(cfg.d_head());

    // Prediction head.
    Matrix dz(n, 1);
    for (std::size_t i = 0; i < n; ++i) dz(i, 0) = terms.dz[i];
    params.grad(params.w_head) += matmul_tn(st.h_last, dz);
    accumulate_colsum(dz, params.grad(params.b_head));
    Matrix dh_cur = matmul_nt(dz, params.value(params.w_head));

    for (int l = cfg.n_layers - 1; l >= 0; --l) {
        const auto& lc = st.layers[static_cast<std::size_t>(l)];
        const auto& slots = params.layers[static_cast<std::size_t>(l)];

        // Second sublayer: LN2(h1 + ffn(h1)).
        Matrix dz2 = layer_norm_rows_backward(dh_cur, as_span(params.value(slots.ln2_gamma)), lc.ln2,
                                              as_span(params.grad(slots.ln2_gamma)),
                                              as_span(params.grad(slots.ln2_beta)));
        params.grad(slots.w_2) += matmul_tn(lc.f, dz2);
        accumulate_colsum(dz2, params.grad(slots.b_2));
        Matrix du = matmul_nt(dz2, params.value(slots.w_2));
        for (std::size_t t = 0; t < du.size(); ++t) {
            double& v = du.values()[t];
            if (lc.u.values()[t] <= 0.0) v = 0.0;
            else if (!lc.ffn_drop.empty()) v *= lc.ffn_drop[t];
        }
        params.grad(slots.w_1) += matmul_tn(lc.h1, du);
        accumulate_colsum(du, params.grad(slots.b_1));
        Matrix dh1 = matmul_nt(du, params.value(slots.w_1));
        dh1 += dz2;

        // First sublayer: LN1(h + attention(h) W_O).
        Matrix dz1 = layer_norm_rows_backward(dh1, as_span(params.value(slots.ln1_gamma)), lc.ln1,
                                              as_span(params.grad(slots.ln1_gamma)),
                                              as_span(params.grad(slots.ln1_beta)));
        params.grad(slots.w_o) += matmul_tn(lc.concat, dz1);
        const Matrix dconcat = matmul_nt(dz1, params.value(slots.w_o));
        Matrix dh_in = dz1;

        for (int hd = 0; hd < cfg.n_heads; ++hd) {
            const auto& hc = lc.heads[static_cast<std::size_t>(hd)];
            const auto off = static_cast<std::size_t>(hd) * dh;
            Matrix dv(n, dh);
            std::vector<double> dp(csr.cols.size(), 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                const auto go = dconcat.row(i).subspan(off, dh);
                for (auto t = csr.offsets[i]; t < csr.offsets[i + 1]; ++t) {
                    const auto j = csr.cols[t];
                    const auto vj = hc.v.row(j);
                    auto dvj = dv.row(j);
                    double s = 0.0;
                    for (std::size_t d = 0; d < dh; ++d) {
                        s += go[d] * vj[d];
                        dvj[d] += hc.pd[t] * go[d];
                    }
                    dp[t] = hc.drop.empty() ? s : s * hc.drop[t];
                }
            }
            const auto sv = slots.w_v[static_cast<std::size_t>(hd)];
            params.grad(sv) += matmul_tn(lc.h_in, dv);
            dh_in += matmul_nt(dv, params.value(sv));

            if (!cfg.use_attention) continue;
            const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
            Matrix dq(n, dh), dk(n, dh);
            for (std::size_t i = 0; i < n; ++i) {
                const auto b = csr.offsets[i], e = csr.offsets[i + 1];
                double dot = 0.0;
                for (auto t = b; t < e; ++t) dot += hc.p[t] * dp[t];
                const auto qi = hc.q.row(i);
                auto dqi = dq.row(i);
                for (auto t = b; t < e; ++t) {
                    const double ds = hc.p[t] * (dp[t] - dot) * scale;
                    if (ds == 0.0) continue;
                    const auto j = csr.cols[t];
                    const auto kj = hc.k.row(j);
                    auto dkj = dk.row(j);
                    for (std::size_t d = 0; d < dh; ++d) {
                        dqi[d] += ds * kj[d];
                        dkj[d] += ds * qi[d];
                    }
                }
            }
            const auto sq = slots.w_q[static_cast<std::size_t>(hd)];
            const auto sk = slots.w_k[static_cast<std::size_t>(hd)];
            params.grad(sq) += matmul_tn(lc.h_in, dq);
            params.grad(sk) += matmul_tn(lc.h_in, dk);
            dh_in += matmul_nt(dq, params.value(sq));
            dh_in += matmul_nt(dk, params.value(sk));
        }
        dh_cur = std::move(dh_in);
    }

    // H0 = X W_in + b_in (+ PE, constant).
    params.grad(params.w_in) += matmul_tn(g.features, dh_cur);
    accumulate_colsum(dh_cur, params.grad(params.b_in));
    return terms.loss;
}

namespace {

std::string hex_bits(double v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(std::bit_cast<std::uint64_t>(v)));
    return buf;
}

double from_hex_bits(const std::string& s) {
    if (s.size() != 16) throw Error("checkpoint: bad hex value '" + s + "'");
    std::uint64_t bits = 0;
    for (char c : s) {
        bits <<= 4;
        if (c >= '0' && c <= '9') bits |= static_cast<std::uint64_t>(c - '0');
        else if (c >= 'a' && c <= 'f') bits |= static_cast<std::uint64_t>(c - 'a' + 10);
        else if (c >= 'A' && c <= 'F') bits |= static_cast<std::uint64_t>(c - 'A' + 10);
        else throw Error("checkpoint: bad hex value '" + s + "'");
    }
    return std::bit_cast<double>(bits);
}

}  // namespace

nlohmann::ordered_json checkpoint_json(const TgtnParams& params, const EdgeRule& rule, const EncoderConfig& enc) {
    nlohmann::ordered_json j;
    j["format"] = "tgtn-checkpoint/1";
    j["config"] = nlohmann::json(params.config);
    j["d_in"] = params.d_in;
    j["seed"] = params.seed;
    j["edge_rule"] = nlohmann::json(rule);
    j["encoder"] = nlohmann::json(enc);
    auto tensors = nlohmann::ordered_json::array();
    for (const auto& p : params.store) {
        nlohmann::ordered_json t;
        t["name"] = p.name;
        t["shape"] = {p.value.rows(), p.value.cols()};
        t["values"] = p.value.values();
        auto hex = nlohmann::ordered_json::array();
        for (double v : p.value.values()) hex.push_back(hex_bits(v));
        t["hex"] = std::move(hex);
        tensors.push_back(std::move(t));
    }
    j["tensors"] = std::move(tensors);
    return j;
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
    try {
        if (j.value("format", "") != "tgtn-checkpoint/1") throw Error("checkpoint: unknown format");
        Checkpoint ck;
        const auto config = j.at("config").get<TgtnConfig>();
        ck.params = init_params(config, j.at("d_in").get<int>(), j.at("seed").get<std::uint64_t>());
        ck.rule = j.at("edge_rule").get<EdgeRule>();
        ck.encoder = j.at("encoder").get<EncoderConfig>();
        std::size_t seen = 0;
        for (const auto& t : j.at("tensors")) {
            const auto name = t.at("name").get<std::string>();
            auto& p = ck.params.store.get(name);
            const auto shape = t.at("shape").get<std::vector<std::size_t>>();
            if (shape.size() != 2 || shape[0] != p.value.rows() || shape[1] != p.value.cols())
                throw Error("checkpoint: tensor '" + name + "' has shape mismatch, expected " + p.value.shape_string());
            const auto hex = t.at("hex").get<std::vector<std::string>>();
            if (hex.size() != p.value.size()) throw Error("checkpoint: tensor '" + name + "' has wrong value count");
            for (std::size_t i = 0; i < hex.size(); ++i) p.value.values()[i] = from_hex_bits(hex[i]);
            ++seen;
        }
        if (seen != ck.params.store.size()) throw Error("checkpoint: missing tensors");
        return ck;
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("checkpoint: ") + e.what());
    }
}

void save_checkpoint(const std::filesystem::path& path, const TgtnParams& params, const EdgeRule& rule,
                     const EncoderConfig& enc) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << checkpoint_json(params, rule, enc).dump(1) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error("checkpoint " + path.string() + ": " + e.what());
    }
    return checkpoint_from_json(j);
}

}  // namespace tgtn
