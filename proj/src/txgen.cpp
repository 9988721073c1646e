#include "tgtn/txgen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "tgtn/error.hpp"
#include "tgtn/rng.hpp"

namespace tgtn {

namespace {

enum : std::uint64_t { kLegitStream = 1, kRingStream = 2, kSampleStream = 3 };

std::string make_id(char prefix, std::int64_t n, int width) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%c%0*lld", prefix, width, static_cast<long long>(n));
    return buf;
}

std::int64_t draw_amount(Rng& rng, double median, double sigma, double scale) {
    const double amount = median * std::exp(sigma * rng.normal()) * scale;
    return std::max<std::int64_t>(1, std::llround(amount * 100.0));
}

void sort_transactions(std::vector<Transaction>& txs) {
    std::stable_sort(txs.begin(), txs.end(), tx_before);
}

}  // namespace

std::string_view to_string(Label label) {
    switch (label) {
        case Label::fraud: return "fraud";
        case Label::legitimate: return "legit";
        case Label::unknown: return "unknown";
    }
    return "unknown";
}

Label parse_label(std::string_view text) {
    if (text == "fraud") return Label::fraud;
    if (text == "legit") return Label::legitimate;
    if (text == "unknown") return Label::unknown;
    throw Error("unknown label '" + std::string(text) + "'");
}

void validate(const GenConfig& c) {
    auto fail = [](const char* field, const std::string& why) {
        throw Error(std::string("invalid GenConfig field '") + field + "': " + why);
    };
    if (c.end_ts <= c.start_ts) fail("end_ts", "must be greater than start_ts");
    if (c.n_cards < 0) fail("n_cards", "must be >= 0");
    if (c.n_merchants < 0) fail("n_merchants", "must be >= 0");
    if (c.n_rings < 0) fail("n_rings", "must be >= 0");
    if (!(c.legit_rate >= 0.0) || !std::isfinite(c.legit_rate)) fail("legit_rate", "must be finite and >= 0");
    if (c.n_cards > 0 && c.legit_rate > 0 && c.n_merchants == 0)
        fail("n_merchants", "must be >= 1 when legitimate traffic is generated");
    if (!(c.fraud_amount_scale > 0.0)) fail("fraud_amount_scale", "must be > 0");
    if (!(c.amount_median > 0.0)) fail("amount_median", "must be > 0");
    if (!(c.amount_sigma >= 0.0)) fail("amount_sigma", "must be >= 0");
    if (c.n_rings > 0) {
        if (c.ring_size < 2) fail("ring_size", "must be >= 2 when n_rings > 0");
        if (c.ring_merchants < 1) fail("ring_merchants", "must be >= 1 when n_rings > 0");
        if (c.ring_merchants > c.n_merchants) fail("ring_merchants", "must not exceed n_merchants");
        if (c.ring_tx_per_card < 1) fail("ring_tx_per_card", "must be >= 1 when n_rings > 0");
        if (c.ring_burst_seconds < 1) fail("ring_burst_seconds", "must be >= 1");
        if (c.ring_burst_seconds > c.end_ts - c.start_ts)
            fail("ring_burst_seconds", "must fit inside [start_ts, end_ts)");
    }
}

void to_json(nlohmann::json& j, const GenConfig& c) {
    j = nlohmann::json{{"seed", c.seed},
                       {"n_cards", c.n_cards},
                       {"n_merchants", c.n_merchants},
                       {"start_ts", c.start_ts},
                       {"end_ts", c.end_ts},
                       {"legit_rate", c.legit_rate},
                       {"n_rings", c.n_rings},
                       {"ring_size", c.ring_size},
                       {"ring_merchants", c.ring_merchants},
                       {"ring_burst_seconds", c.ring_burst_seconds},
                       {"ring_tx_per_card", c.ring_tx_per_card},
                       {"fraud_amount_scale", c.fraud_amount_scale},
                       {"amount_median", c.amount_median},
                       {"amount_sigma", c.amount_sigma}};
}

void from_json(const nlohmann::json& j, GenConfig& c) {
    GenConfig d;
    auto get = [&j](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    get("seed", d.seed);
    get("n_cards", d.n_cards);
    get("n_merchants", d.n_merchants);
    get("start_ts", d.start_ts);
    get("end_ts", d.end_ts);
    get("legit_rate", d.legit_rate);
    get("n_rings", d.n_rings);
    get("ring_size", d.ring_size);
    get("ring_merchants", d.ring_merchants);
    get("ring_burst_seconds", d.ring_burst_seconds);
    get("ring_tx_per_card", d.ring_tx_per_card);
    get("fraud_amount_scale", d.fraud_amount_scale);
    get("amount_median", d.amount_median);
    get("amount_sigma", d.amount_sigma);
    c = d;
}

Dataset generate(const GenConfig& config) {
    validate(config);
    std::vector<Transaction> txs;
    const double span = static_cast<double>(config.end_ts - config.start_ts);

    Rng legit(derive_seed(config.seed, kLegitStream));
    if (config.legit_rate > 0.0) {
        const double rate = config.legit_rate / span;
        for (std::int64_t c = 0; c < config.n_cards; ++c) {
            const std::string card = make_id('C', c, 6);
            double t = static_cast<double>(config.start_ts) + legit.exponential(rate);
            while (t < static_cast<double>(config.end_ts)) {
                Transaction tx;
                tx.timestamp = static_cast<std::int64_t>(std::floor(t));
                tx.card_id = card;
                tx.merchant_id = make_id('M', static_cast<std::int64_t>(legit.below(config.n_merchants)), 5);
                tx.amount_cents = draw_amount(legit, config.amount_median, config.amount_sigma, 1.0);
                tx.label = Label::legitimate;
                txs.push_back(std::move(tx));
                t += legit.exponential(rate);
            }
        }
    }

    Rng rings(derive_seed(config.seed, kRingStream));
    for (std::int64_t r = 0; r < config.n_rings; ++r) {
        const auto latest_start = config.end_ts - config.ring_burst_seconds;
        const std::int64_t burst_start =
            config.start_ts + static_cast<std::int64_t>(rings.below(static_cast<std::uint64_t>(latest_start - config.start_ts) + 1));

        // Distinct merchants via partial Fisher-Yates over merchant indices.
        std::vector<std::int64_t> pool(static_cast<std::size_t>(config.n_merchants));
        std::iota(pool.begin(), pool.end(), 0);
        std::vector<std::string> merchants;
        for (std::int64_t m = 0; m < config.ring_merchants; ++m) {
            const auto pick = m + static_cast<std::int64_t>(rings.below(static_cast<std::uint64_t>(config.n_merchants - m)));
            std::swap(pool[m], pool[pick]);
            merchants.push_back(make_id('M', pool[m], 5));
        }

        for (std::int64_t k = 0; k < config.ring_size; ++k) {
            char card[64];
            std::snprintf(card, sizeof card, "R%04lld-%03lld", static_cast<long long>(r), static_cast<long long>(k));
            for (std::int64_t n = 0; n < config.ring_tx_per_card; ++n) {
                Transaction tx;
                tx.timestamp = burst_start + static_cast<std::int64_t>(rings.below(static_cast<std::uint64_t>(config.ring_burst_seconds)));
                tx.card_id = card;
                const auto m = n == 0 ? 0 : rings.below(merchants.size());
                tx.merchant_id = merchants[m];
                tx.amount_cents =
                    draw_amount(rings, config.amount_median, config.amount_sigma, config.fraud_amount_scale);
                tx.label = Label::fraud;
                txs.push_back(std::move(tx));
            }
        }
    }

    // Ids follow (timestamp, generation order), so the dataset is sorted by
    // (timestamp, tx_id) by construction.
    std::stable_sort(txs.begin(), txs.end(),
                     [](const Transaction& a, const Transaction& b) { return a.timestamp < b.timestamp; });
    for (std::size_t i = 0; i < txs.size(); ++i) txs[i].tx_id = i + 1;

    Dataset ds;
    ds.transactions = std::move(txs);
    ds.meta = nlohmann::json{{"source", "generate"}, {"config", config}};
    return ds;
}

std::pair<Dataset, Dataset> temporal_split(const Dataset& ds, std::int64_t boundary_ts) {
    const auto mid = std::partition_point(ds.transactions.begin(), ds.transactions.end(),
                                          [boundary_ts](const Transaction& t) { return t.timestamp < boundary_ts; });
    Dataset left, right;
    left.transactions.assign(ds.transactions.begin(), mid);
    right.transactions.assign(mid, ds.transactions.end());
    left.meta = {{"source", "temporal_split"}, {"side", "left"}, {"boundary_ts", boundary_ts}};
    right.meta = {{"source", "temporal_split"}, {"side", "right"}, {"boundary_ts", boundary_ts}};
    return {std::move(left), std::move(right)};
}

Dataset negative_sample(const Dataset& ds, double keep_ratio, std::uint64_t seed) {
    if (!(keep_ratio > 0.0)) throw Error("negative_sample: keep_ratio must be > 0");
    std::vector<std::size_t> legit_idx;
    std::size_t n_fraud = 0;
    for (std::size_t i = 0; i < ds.transactions.size(); ++i) {
        const auto label = ds.transactions[i].label;
        if (label == Label::fraud) ++n_fraud;
        if (label == Label::legitimate) legit_idx.push_back(i);
    }
    const auto requested = static_cast<std::size_t>(std::floor(keep_ratio * static_cast<double>(n_fraud) + 1e-9));
    const std::size_t want = std::min(requested, legit_idx.size());

    Rng rng(derive_seed(seed, kSampleStream));
    for (std::size_t i = 0; i < want; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.below(legit_idx.size() - i));
        std::swap(legit_idx[i], legit_idx[j]);
    }
    std::vector<bool> keep(ds.transactions.size(), false);
    for (std::size_t i = 0; i < want; ++i) keep[legit_idx[i]] = true;

    Dataset out;
    for (std::size_t i = 0; i < ds.transactions.size(); ++i) {
        const auto& tx = ds.transactions[i];
        if (tx.label != Label::legitimate || keep[i]) out.transactions.push_back(tx);
    }
    out.meta = {{"source", "negative_sample"},
                {"keep_ratio", keep_ratio},
                {"seed", seed},
                {"fraud", n_fraud},
                {"legit_kept", want},
                {"legit_available", legit_idx.size()}};
    if (n_fraud == 0) {
        out.warnings.emplace_back("negative_sample: dataset has no fraud transactions; no legitimate transactions kept");
        out.meta["warning"] = out.warnings.back();
    }
    return out;
}

std::string format_cents(std::int64_t cents) {
    char buf[48];
    const char* sign = cents < 0 ? "-" : "";
    const auto mag = cents < 0 ? -static_cast<unsigned long long>(cents) : static_cast<unsigned long long>(cents);
    std::snprintf(buf, sizeof buf, "%s%llu.%02llu", sign, mag / 100, mag % 100);
    return buf;
}

std::int64_t parse_cents(std::string_view text) {
    auto bad = [&text](const char* why) {
        return Error("bad amount '" + std::string(text) + "': " + why);
    };
    if (text.empty()) throw bad("empty");
    if (text.front() == '-') throw bad("negative amount");
    const auto dot = text.find('.');
    const auto whole = text.substr(0, dot);
    const auto frac = dot == std::string_view::npos ? std::string_view{} : text.substr(dot + 1);
    if (whole.empty() || frac.size() > 2) throw bad("expected digits with at most 2 decimals");
    std::int64_t units = 0;
    auto [p, ec] = std::from_chars(whole.data(), whole.data() + whole.size(), units);
    if (ec != std::errc() || p != whole.data() + whole.size()) throw bad("not a number");
    std::int64_t cents = 0;
    for (std::size_t i = 0; i < 2; ++i) {
        cents *= 10;
        if (i < frac.size()) {
            if (frac[i] < '0' || frac[i] > '9') throw bad("not a number");
            cents += frac[i] - '0';
        }
    }
    return units * 100 + cents;
}

void write_jsonl(std::ostream& out, const Dataset& ds) {
    for (const auto& tx : ds.transactions) {
        nlohmann::ordered_json j;
        j["tx_id"] = tx.tx_id;
        j["ts"] = tx.timestamp;
        j["card"] = tx.card_id;
        j["merchant"] = tx.merchant_id;
        j["amount"] = format_cents(tx.amount_cents);
        j["label"] = to_string(tx.label);
        out << j.dump() << '\n';
    }
}

Dataset read_jsonl(std::istream& in, ReadOrder order) {
    Dataset ds;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = "line " + std::to_string(line_no);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw Error(where + ": malformed JSON: " + e.what());
        }
        Transaction tx;
        const char* field = "";
        try {
            field = "tx_id";
            tx.tx_id = j.at(field).get<std::uint64_t>();
            field = "ts";
            tx.timestamp = j.at(field).get<std::int64_t>();
            field = "card";
            tx.card_id = j.at(field).get<std::string>();
            field = "merchant";
            tx.merchant_id = j.at(field).get<std::string>();
            field = "amount";
            const auto& amount = j.at(field);
            if (amount.is_string()) {
                tx.amount_cents = parse_cents(amount.get<std::string>());
            } else {
                const double value = amount.get<double>();
                if (!(value >= 0.0)) throw Error("negative amount");
                tx.amount_cents = std::llround(value * 100.0);
            }
            field = "label";
            tx.label = parse_label(j.at(field).get<std::string>());
        } catch (const std::exception& e) {
            throw Error(where + ": field '" + field + "': " + e.what());
        }
        ds.transactions.push_back(std::move(tx));
    }
    if (!std::is_sorted(ds.transactions.begin(), ds.transactions.end(), tx_before)) {
        if (order == ReadOrder::sorted) {
            sort_transactions(ds.transactions);
            ds.warnings.emplace_back("input was not sorted by (ts, tx_id); re-sorted");
        } else {
            ds.warnings.emplace_back("input is not sorted by (ts, tx_id); kept in file order");
        }
    }
    std::unordered_set<std::uint64_t> seen;
    for (const auto& tx : ds.transactions)
        if (!seen.insert(tx.tx_id).second) throw Error("duplicate tx_id " + std::to_string(tx.tx_id));
    ds.meta = {{"source", "jsonl"}};
    return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    write_jsonl(out, ds);
    if (!out) throw Error("write failed: " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path, ReadOrder order) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    auto ds = read_jsonl(in, order);
    ds.meta["path"] = path.string();
    return ds;
}

std::size_t count_label(const Dataset& ds, Label label) {
    return static_cast<std::size_t>(std::count_if(ds.transactions.begin(), ds.transactions.end(),
                                                  [label](const Transaction& t) { return t.label == label; }));
}

}  // namespace tgtn
