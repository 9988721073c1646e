#include "tgtn/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "tgtn/error.hpp"
#include "tgtn/rng.hpp"

namespace tgtn {

void validate(const TrainConfig& c) {
    auto fail = [](const char* field, const char* why) {
        throw Error(std::string("invalid TrainConfig field '") + field + "': " + why);
    };
    if (c.epochs < 1) fail("epochs", "must be >= 1");
    if (!(c.lr > 0.0)) fail("lr", "must be > 0");
    if (c.patience < 0) fail("patience", "must be >= 0");
    if (!(c.beta1 >= 0.0 && c.beta1 < 1.0)) fail("beta1", "must be in [0, 1)");
    if (!(c.beta2 >= 0.0 && c.beta2 < 1.0)) fail("beta2", "must be in [0, 1)");
    if (!(c.eps > 0.0)) fail("eps", "must be > 0");
    if (!(c.val_fraction >= 0.0 && c.val_fraction < 1.0)) fail("val_fraction", "must be in [0, 1)");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"epochs", c.epochs},       {"lr", c.lr},
         {"beta1", c.beta1},         {"beta2", c.beta2},
         {"eps", c.eps},             {"pos_weight", c.pos_weight},
         {"patience", c.patience},   {"val_fraction", c.val_fraction},
         {"seed", c.seed},           {"batch_mode", "full-graph"}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    TrainConfig d;
    auto get = [&j](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    get("epochs", d.epochs);
    get("lr", d.lr);
    get("beta1", d.beta1);
    get("beta2", d.beta2);
    get("eps", d.eps);
    get("pos_weight", d.pos_weight);
    get("patience", d.patience);
    get("val_fraction", d.val_fraction);
    get("seed", d.seed);
    if (j.contains("batch_mode") && j.at("batch_mode") != "full-graph")
        throw Error("TrainConfig: only batch_mode 'full-graph' is supported");
    c = d;
}

std::vector<int> node_labels(const TxGraph& g) {
    std::vector<int> labels(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        const auto l = g.label(i);
        labels[i] = l == Label::fraud ? 1 : l == Label::legitimate ? 0 : -1;
    }
    return labels;
}

namespace {

struct Selection {
    std::vector<double> scores;
    std::vector<int> labels;
};

Selection select(std::span<const double> probs, std::span<const int> labels, std::span<const std::size_t> nodes) {
    Selection s;
    for (const auto i : nodes) {
        s.scores.push_back(probs[i]);
        s.labels.push_back(labels[i]);
    }
    return s;
}

FoldScore score_nodes(std::span<const double> probs, std::span<const int> labels, std::span<const std::size_t> nodes) {
    const auto s = select(probs, labels, nodes);
    const auto pos = static_cast<std::size_t>(std::count(s.labels.begin(), s.labels.end(), 1));
    FoldScore out;
    if (pos > 0) out.ap = average_precision(s.scores, s.labels);
    if (pos > 0 && pos < s.labels.size()) out.auc = roc_auc(s.scores, s.labels);
    return out;
}

}  // namespace

TrainResult train(const GraphInput& g, std::span<const int> labels, std::span<const std::uint8_t> train_mask,
                  const TrainConfig& config, const TgtnConfig& model_config) {
    validate(config);
    validate(model_config);
    if (labels.size() != g.size() || train_mask.size() != g.size())
        throw Error("train: labels / train_mask length does not match the graph");

    std::vector<std::size_t> by_class[2];
    for (std::size_t i = 0; i < g.size(); ++i)
        if (train_mask[i] && (labels[i] == 0 || labels[i] == 1)) by_class[labels[i]].push_back(i);
    if (by_class[0].empty() || by_class[1].empty())
        throw Error("train: training mask must contain both fraud and legitimate nodes (got " +
                    std::to_string(by_class[1].size()) + " fraud, " + std::to_string(by_class[0].size()) +
                    " legitimate)");

    // Stratified validation hold-out.
    Rng rng(derive_seed(config.seed, 0xA11D));
    std::vector<std::uint8_t> fit(g.size(), 0);
    std::vector<std::size_t> val_nodes;
    for (auto& cls : by_class) {
        auto members = cls;
        std::size_t n_val = 0;
        if (members.size() >= 2 && config.val_fraction > 0.0)
            n_val = std::max<std::size_t>(1, static_cast<std::size_t>(config.val_fraction * static_cast<double>(members.size())));
        for (std::size_t i = members.size(); i > 1; --i) std::swap(members[i - 1], members[rng.below(i)]);
        for (std::size_t i = 0; i < members.size(); ++i) {
            if (i < n_val) val_nodes.push_back(members[i]);
            else fit[members[i]] = 1;
        }
    }
    std::sort(val_nodes.begin(), val_nodes.end());
    const bool val_has_fraud =
        std::any_of(val_nodes.begin(), val_nodes.end(), [&](std::size_t i) { return labels[i] == 1; });

    std::size_t n_fit_pos = 0, n_fit = 0;
    for (std::size_t i = 0; i < g.size(); ++i)
        if (fit[i]) {
            ++n_fit;
            n_fit_pos += labels[i] == 1 ? 1 : 0;
        }

    TrainResult result;
    result.pos_weight = config.pos_weight > 0.0
                            ? config.pos_weight
                            : static_cast<double>(n_fit - n_fit_pos) / static_cast<double>(n_fit_pos);
    result.n_fit = n_fit;
    result.n_val = val_nodes.size();

    std::vector<double> targets(g.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) targets[i] = labels[i] == 1 ? 1.0 : 0.0;

    TgtnParams params = init_params(model_config, static_cast<int>(g.features.cols()), config.seed);
    const AdamConfig adam{config.lr, config.beta1, config.beta2, config.eps};
    std::optional<double> best_ap;
    result.params = params;

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        EpochRecord rec;
        rec.epoch = epoch;
        rec.loss = backward(g, params, targets, fit, result.pos_weight, true,
                            derive_seed(config.seed, 0xE0000000ULL + static_cast<std::uint64_t>(epoch)));
        adam_step(params.store, adam, epoch);
        if (val_has_fraud) {
            const auto probs = forward(g, params);
            const auto s = score_nodes(probs, labels, val_nodes);
            rec.val_ap = s.ap;
            rec.val_auc = s.auc;
        }
        result.history.push_back(rec);

        if (!val_has_fraud) {
            result.params = params;
            result.best_epoch = epoch;
            continue;
        }
        if (!best_ap || *rec.val_ap > *best_ap) {
            best_ap = rec.val_ap;
            result.best_epoch = epoch;
            result.params = params;
        } else if (epoch - result.best_epoch > config.patience) {
            break;
        }
    }
    return result;
}

TrainResult train(const TxGraph& g, const TrainConfig& config, const TgtnConfig& model_config) {
    const auto labels = node_labels(g);
    std::vector<std::uint8_t> mask(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) mask[i] = labels[i] >= 0 ? 1 : 0;
    return train(graph_input(g), labels, mask, config, model_config);
}

std::string history_csv(const std::vector<EpochRecord>& history) {
    std::ostringstream out;
    out << "epoch,loss,val_ap,val_auc\n";
    char buf[64];
    auto opt = [&buf](const std::optional<double>& v) -> std::string {
        if (!v) return "";
        std::snprintf(buf, sizeof buf, "%.10f", *v);
        return buf;
    };
    for (const auto& r : history) {
        std::snprintf(buf, sizeof buf, "%.10f", r.loss);
        const std::string loss = buf;
        out << r.epoch << ',' << loss << ',' << opt(r.val_ap) << ',' << opt(r.val_auc) << '\n';
    }
    return out.str();
}

std::vector<std::vector<std::size_t>> stratified_time_folds(std::span<const int> labels, int k) {
    if (k < 2) throw Error("kfold: k must be >= 2");
    std::vector<std::size_t> by_class[2];
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == 0 || labels[i] == 1) by_class[labels[i]].push_back(i);
    const std::size_t labeled = by_class[0].size() + by_class[1].size();
    if (static_cast<std::size_t>(k) > labeled)
        throw Error("kfold: k = " + std::to_string(k) + " exceeds the " + std::to_string(labeled) + " labeled nodes");
    std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(k));
    for (const auto& cls : by_class) {
        const auto n = cls.size();
        for (std::size_t f = 0; f < folds.size(); ++f) {
            const auto b = f * n / folds.size(), e = (f + 1) * n / folds.size();
            folds[f].insert(folds[f].end(), cls.begin() + static_cast<std::ptrdiff_t>(b),
                            cls.begin() + static_cast<std::ptrdiff_t>(e));
        }
    }
    for (auto& f : folds) std::sort(f.begin(), f.end());
    return folds;
}

CVReport kfold_cv(const Dataset& ds, int k, const std::vector<GridEntry>& grid, const EdgeRule& rule,
                  const EncoderConfig& enc) {
    if (grid.empty()) throw Error("kfold_cv: empty grid");
    if (count_label(ds, Label::fraud) == 0 || count_label(ds, Label::legitimate) == 0)
        throw Error("kfold_cv: dataset must contain both classes");
    const TxGraph g = build_graph(ds.transactions, rule, enc);
    const GraphInput input = graph_input(g);
    const auto labels = node_labels(g);

    CVReport report;
    report.k = k;
    report.folds = stratified_time_folds(labels, k);
    for (const auto& entry : grid) {
        CVEntryReport er;
        for (const auto& fold : report.folds) {
            std::vector<std::uint8_t> mask(g.size(), 0);
            for (std::size_t i = 0; i < g.size(); ++i) mask[i] = labels[i] >= 0 ? 1 : 0;
            for (const auto i : fold) mask[i] = 0;
            const auto trained = train(input, labels, mask, entry.train, entry.model);
            const auto probs = forward(input, trained.params);
            er.folds.push_back(score_nodes(probs, labels, fold));
        }
        auto stats = [&er](auto member, double& mean, double& sd) {
            std::vector<double> v;
            for (const auto& f : er.folds)
                if ((f.*member).has_value()) v.push_back(*(f.*member));
            if (v.empty()) {
                mean = sd = std::nan("");
                return;
            }
            mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
            double ss = 0.0;
            for (double x : v) ss += (x - mean) * (x - mean);
            sd = std::sqrt(ss / static_cast<double>(v.size()));
        };
        stats(&FoldScore::ap, er.mean_ap, er.std_ap);
        stats(&FoldScore::auc, er.mean_auc, er.std_auc);
        report.entries.push_back(std::move(er));
    }
    for (std::size_t i = 1; i < report.entries.size(); ++i) {
        const double best = report.entries[report.selected].mean_ap;
        const double cur = report.entries[i].mean_ap;
        if (!std::isnan(cur) && (std::isnan(best) || cur > best)) report.selected = i;
    }
    report.selected_entry = grid[report.selected];
    return report;
}

nlohmann::ordered_json to_json(const CVReport& r) {
    auto num = [](double v) { return std::isnan(v) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(v); };
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr); };
    nlohmann::ordered_json j;
    j["k"] = r.k;
    j["fold_sizes"] = nlohmann::ordered_json::array();
    for (const auto& f : r.folds) j["fold_sizes"].push_back(f.size());
    j["entries"] = nlohmann::ordered_json::array();
    for (const auto& e : r.entries) {
        nlohmann::ordered_json je;
        je["folds"] = nlohmann::ordered_json::array();
        for (const auto& f : e.folds) je["folds"].push_back({{"ap", opt(f.ap)}, {"auc", opt(f.auc)}});
        je["mean_ap"] = num(e.mean_ap);
        je["std_ap"] = num(e.std_ap);
        je["mean_auc"] = num(e.mean_auc);
        je["std_auc"] = num(e.std_auc);
        j["entries"].push_back(std::move(je));
    }
    j["selected"] = r.selected;
    j["selected_model"] = nlohmann::json(r.selected_entry.model);
    j["selected_train"] = nlohmann::json(r.selected_entry.train);
    return j;
}

std::vector<std::vector<double>> rfm_features(std::span<const Transaction> txs, std::span<const std::int64_t> windows,
                                              std::int64_t as_of_ts) {
    for (std::size_t i = 1; i < txs.size(); ++i)
        if (txs[i].timestamp < txs[i - 1].timestamp) throw Error("rfm_features: transactions not sorted by timestamp");

    struct History {
        std::vector<std::int64_t> ts;
        std::vector<std::int64_t> prefix_cents{0};
    };
    std::unordered_map<std::string, History> cards, merchants;

    std::vector<std::vector<double>> out(txs.size());
    auto describe = [&windows](const History* h, std::int64_t t, std::vector<double>& row, std::size_t offset) {
        for (std::size_t w = 0; w < windows.size(); ++w) {
            const auto win = windows[w];
            double recency = static_cast<double>(win), freq = 0.0, money = 0.0;
            if (h && !h->ts.empty()) {
                recency = static_cast<double>(std::min(win, t - h->ts.back()));
                const auto first = std::lower_bound(h->ts.begin(), h->ts.end(), t - win) - h->ts.begin();
                const auto n = static_cast<std::ptrdiff_t>(h->ts.size());
                freq = static_cast<double>(n - first);
                money = static_cast<double>(h->prefix_cents.back() - h->prefix_cents[static_cast<std::size_t>(first)]) / 100.0;
            }
            row[offset + w * 6 + 0] = recency;
            row[offset + w * 6 + 1] = freq;
            row[offset + w * 6 + 2] = money;
        }
    };
    for (std::size_t b = 0; b < txs.size();) {
        std::size_t e = b;
        while (e < txs.size() && txs[e].timestamp == txs[b].timestamp) ++e;
        // Features for the whole equal-timestamp group before any of it
        // enters history.
        for (std::size_t i = b; i < e; ++i) {
            const auto& tx = txs[i];
            out[i].assign(windows.size() * 6, 0.0);
            const auto c = cards.find(tx.card_id);
            const auto m = merchants.find(tx.merchant_id);
            describe(c == cards.end() ? nullptr : &c->second, tx.timestamp, out[i], 0);
            describe(m == merchants.end() ? nullptr : &m->second, tx.timestamp, out[i], 3);
        }
        for (std::size_t i = b; i < e; ++i) {
            const auto& tx = txs[i];
            if (tx.timestamp >= as_of_ts) continue;
            for (auto* h : {&cards[tx.card_id], &merchants[tx.merchant_id]}) {
                h->ts.push_back(tx.timestamp);
                h->prefix_cents.push_back(h->prefix_cents.back() + tx.amount_cents);
            }
        }
        b = e;
    }
    return out;
}

std::vector<double> LogisticModel::standardize(std::span<const double> x) const {
    if (x.size() != mean.size()) throw Error("logistic model: feature length mismatch");
    std::vector<double> z(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) z[i] = (x[i] - mean[i]) * inv_std[i];
    return z;
}

double LogisticModel::predict(std::span<const double> x) const {
    const auto z = standardize(x);
    double s = bias;
    for (std::size_t i = 0; i < z.size(); ++i) s += weights[i] * z[i];
    return sigmoid(s);
}

LogisticLoss logistic_loss(std::span<const double> weights, double bias, const std::vector<std::vector<double>>& x,
                           std::span<const int> labels) {
    if (x.size() != labels.size() || x.empty()) throw Error("logistic_loss: bad input sizes");
    LogisticLoss out;
    out.grad_w.assign(weights.size(), 0.0);
    const double inv_n = 1.0 / static_cast<double>(x.size());
    for (std::size_t r = 0; r < x.size(); ++r) {
        double z = bias;
        for (std::size_t c = 0; c < weights.size(); ++c) z += weights[c] * x[r][c];
        const double y = labels[r] == 1 ? 1.0 : 0.0;
        // log(1 + e^z) - y z, evaluated stably
        const double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
        out.loss += (softplus - y * z) * inv_n;
        const double d = (sigmoid(z) - y) * inv_n;
        for (std::size_t c = 0; c < weights.size(); ++c) out.grad_w[c] += d * x[r][c];
        out.grad_b += d;
    }
    return out;
}

LogisticModel train_logistic_baseline(const std::vector<std::vector<double>>& features, std::span<const int> labels,
                                      double lr, int epochs, std::uint64_t seed) {
    if (features.size() != labels.size() || features.empty()) throw Error("logistic baseline: bad input sizes");
    const auto pos = std::count(labels.begin(), labels.end(), 1);
    if (pos == 0 || pos == static_cast<std::ptrdiff_t>(labels.size()))
        throw Error("logistic baseline: both classes are required");
    const std::size_t d = features.front().size();
    LogisticModel m;
    m.mean.assign(d, 0.0);
    m.inv_std.assign(d, 0.0);
    const auto n = static_cast<double>(features.size());
    for (const auto& row : features) {
        if (row.size() != d) throw Error("logistic baseline: ragged feature rows");
        for (std::size_t c = 0; c < d; ++c) m.mean[c] += row[c] / n;
    }
    for (std::size_t c = 0; c < d; ++c) {
        double ss = 0.0;
        for (const auto& row : features) ss += (row[c] - m.mean[c]) * (row[c] - m.mean[c]);
        const double sd = std::sqrt(ss / n);
        if (sd > 1e-12) {
            m.inv_std[c] = 1.0 / sd;
        } else {
            m.warnings.push_back("feature " + std::to_string(c) + " has zero variance; standardized to 0");
        }
    }
    std::vector<std::vector<double>> z;
    z.reserve(features.size());
    for (const auto& row : features) z.push_back(m.standardize(row));

    Rng rng(derive_seed(seed, 0x1061));
    m.weights.resize(d);
    for (auto& w : m.weights) w = rng.uniform(-0.01, 0.01);
    for (int e = 0; e < epochs; ++e) {
        const auto g = logistic_loss(m.weights, m.bias, z, labels);
        for (std::size_t c = 0; c < d; ++c) m.weights[c] -= lr * g.grad_w[c];
        m.bias -= lr * g.grad_b;
    }
    return m;
}

void to_json(nlohmann::json& j, const AblationConfig& c) {
    j = {{"boundary_ts", c.boundary_ts},
         {"keep_ratio", c.keep_ratio},
         {"model", c.model},
         {"train", c.train},
         {"edge_rule", c.edge_rule},
         {"encoder", c.encoder},
         {"logistic_lr", c.logistic_lr},
         {"logistic_epochs", c.logistic_epochs},
         {"threshold", c.threshold}};
}

void from_json(const nlohmann::json& j, AblationConfig& c) {
    AblationConfig d;
    auto get = [&j](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    get("boundary_ts", d.boundary_ts);
    get("keep_ratio", d.keep_ratio);
    get("model", d.model);
    get("train", d.train);
    get("edge_rule", d.edge_rule);
    get("encoder", d.encoder);
    get("logistic_lr", d.logistic_lr);
    get("logistic_epochs", d.logistic_epochs);
    get("threshold", d.threshold);
    c = d;
}

namespace {

std::vector<ScoredTx> scored(std::span<const Transaction> txs, std::span<const double> scores) {
    std::vector<ScoredTx> out;
    for (std::size_t i = 0; i < txs.size(); ++i) {
        if (txs[i].label == Label::unknown) continue;
        out.push_back({txs[i].timestamp, scores[i], txs[i].label == Label::fraud ? 1 : 0});
    }
    return out;
}

}  // namespace

AblationResult run_ablation(const Dataset& ds, const AblationConfig& config) {
    // Sampling happens before the split so that train and test graphs have
    // the same legit density.
    const Dataset sampled = config.keep_ratio > 0.0 ? negative_sample(ds, config.keep_ratio, config.train.seed) : ds;
    auto [train_ds, test_ds] = temporal_split(sampled, config.boundary_ts);
    if (test_ds.empty()) throw Error("ablation: no transactions at or after boundary_ts");

    AblationResult result;
    result.n_train = train_ds.size();
    result.n_test = test_ds.size();

    const TxGraph train_graph = build_graph(train_ds.transactions, config.edge_rule, config.encoder);
    const TxGraph test_graph = build_graph(test_ds.transactions, config.edge_rule, config.encoder);
    const GraphInput test_input = graph_input(test_graph);

    struct Variant {
        const char* name;
        bool use_pe;
        bool use_attention;
    };
    for (const Variant v : {Variant{"TGTN", true, true}, Variant{"TGTN-noPE", false, true},
                            Variant{"TGTN-noAT", true, false}}) {
        TgtnConfig mc = config.model;
        mc.use_pe = v.use_pe;
        mc.use_attention = v.use_attention;
        const auto trained = train(train_graph, config.train, mc);
        auto probs = forward(test_input, trained.params);
        AblationRow row{v.name, monthly_report(scored(test_ds.transactions, probs), config.threshold), std::move(probs)};
        result.rows.push_back(std::move(row));
    }

    // RFM baseline: causal history over the sampled corpus, fit on the training split.
    const auto features = rfm_features(sampled.transactions, kDefaultRfmWindows);
    std::unordered_map<std::uint64_t, std::size_t> index;
    for (std::size_t i = 0; i < sampled.transactions.size(); ++i) index[sampled.transactions[i].tx_id] = i;
    std::vector<std::vector<double>> fx;
    std::vector<int> fy;
    for (const auto& tx : train_ds.transactions) {
        if (tx.label == Label::unknown) continue;
        fx.push_back(features[index.at(tx.tx_id)]);
        fy.push_back(tx.label == Label::fraud ? 1 : 0);
    }
    const auto logistic =
        train_logistic_baseline(fx, fy, config.logistic_lr, config.logistic_epochs, config.train.seed);
    std::vector<double> rfm_scores;
    for (const auto& tx : test_ds.transactions) rfm_scores.push_back(logistic.predict(features[index.at(tx.tx_id)]));
    result.rows.push_back(
        {"RFM-logistic", monthly_report(scored(test_ds.transactions, rfm_scores), config.threshold), rfm_scores});
    return result;
}

nlohmann::ordered_json to_json(const AblationResult& r) {
    nlohmann::ordered_json j;
    j["n_train"] = r.n_train;
    j["n_test"] = r.n_test;
    j["models"] = nlohmann::ordered_json::array();
    for (const auto& row : r.rows) j["models"].push_back({{"name", row.name}, {"report", to_json(row.report)}});
    return j;
}

std::string render_table(const AblationResult& r) {
    std::vector<std::pair<std::string, MetricsReport>> rows;
    for (const auto& row : r.rows) rows.emplace_back(row.name, row.report);
    return render_table(rows);
}

}  // namespace tgtn
