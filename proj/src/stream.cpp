#include "tgtn/stream.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <limits>
#include <sstream>

#include "tgtn/error.hpp"

namespace tgtn {

void to_json(nlohmann::json& j, const RuleEngine& e) {
    j = nlohmann::json{{"card_blacklist", e.card_blacklist}, {"merchant_blacklist", e.merchant_blacklist}};
    j["max_amount"] = e.max_amount_cents ? nlohmann::json(format_cents(*e.max_amount_cents)) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, RuleEngine& e) {
    RuleEngine out;
    if (j.contains("card_blacklist")) j.at("card_blacklist").get_to(out.card_blacklist);
    if (j.contains("merchant_blacklist")) j.at("merchant_blacklist").get_to(out.merchant_blacklist);
    if (j.contains("max_amount") && !j.at("max_amount").is_null()) {
        const auto& m = j.at("max_amount");
        if (m.is_string()) {
            out.max_amount_cents = parse_cents(m.get<std::string>());
        } else {
            const double v = m.get<double>();
            if (!(v >= 0.0)) throw Error("RuleEngine: max_amount must be >= 0");
            out.max_amount_cents = std::llround(v * 100.0);
        }
    }
    e = std::move(out);
}

Verdict prescreen(const Transaction& tx, const RuleEngine& engine) {
    if (engine.card_blacklist.contains(tx.card_id)) return Verdict::block("card_blacklist");
    if (engine.merchant_blacklist.contains(tx.merchant_id)) return Verdict::block("merchant_blacklist");
    if (engine.max_amount_cents && tx.amount_cents > *engine.max_amount_cents) return Verdict::block("max_amount");
    return Verdict::pass();
}

void validate(const WindowConfig& w, const EdgeRule& rule) {
    if (w.window_seconds < rule.max_gap_seconds)
        throw Error("WindowConfig: window_seconds (" + std::to_string(w.window_seconds) +
                    ") must be >= the edge rule's max_gap_seconds (" + std::to_string(rule.max_gap_seconds) + ")");
}

void to_json(nlohmann::json& j, const WindowConfig& w) {
    j = {{"window_seconds", w.window_seconds},
         {"score_on", "every_arrival"},
         {"late_event_policy", w.late_policy == LatePolicy::reject ? "reject" : "clamp"}};
}

void from_json(const nlohmann::json& j, WindowConfig& w) {
    WindowConfig out;
    if (j.contains("window_seconds")) j.at("window_seconds").get_to(out.window_seconds);
    if (j.contains("score_on") && j.at("score_on") != "every_arrival")
        throw Error("WindowConfig: score_on must be 'every_arrival'");
    if (j.contains("late_event_policy")) {
        const auto p = j.at("late_event_policy").get<std::string>();
        if (p == "reject") out.late_policy = LatePolicy::reject;
        else if (p == "clamp") out.late_policy = LatePolicy::clamp;
        else throw Error("WindowConfig: late_event_policy must be 'reject' or 'clamp', got '" + p + "'");
    }
    w = out;
}

namespace {

double percentile(std::vector<double> v, double q) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size()))) ;
    return v[std::min(v.size() - 1, k == 0 ? 0 : k - 1)];
}

// Drives both the incremental replay and its batch oracle so that they see the
// same admission decisions.
template <class OnAdmit>
void run_stream(const Dataset& ds, const WindowConfig& window, const RuleEngine& engine, ReplayResult& out,
                OnAdmit&& on_admit) {
    std::int64_t newest = std::numeric_limits<std::int64_t>::min();
    for (const auto& original : ds.transactions) {
        StreamRecord rec;
        rec.tx_id = original.tx_id;
        ++out.stats.processed;

        const auto verdict = prescreen(original, engine);
        if (verdict.blocked) {
            rec.verdict = "blocked";
            rec.reason = verdict.reason;
            ++out.stats.flagged;
            out.records.push_back(std::move(rec));
            continue;
        }
        Transaction tx = original;
        if (tx.timestamp < newest) {
            if (window.late_policy == LatePolicy::reject) {
                rec.verdict = "late";
                rec.reason = "out_of_order";
                ++out.stats.late_rejected;
                out.records.push_back(std::move(rec));
                continue;
            }
            tx.timestamp = newest;
            rec.clamped = true;
            ++out.stats.late_clamped;
        }
        newest = tx.timestamp;
        rec.verdict = "pass";
        on_admit(tx, rec);
        ++out.stats.scored;
        out.stats.max_window_nodes = std::max(out.stats.max_window_nodes, rec.window_nodes);
        out.records.push_back(std::move(rec));
    }
}

}  // namespace

nlohmann::ordered_json to_json(const StreamStats& s, bool include_latency) {
    nlohmann::ordered_json j;
    j["processed"] = s.processed;
    j["flagged"] = s.flagged;
    j["late_rejected"] = s.late_rejected;
    j["late_clamped"] = s.late_clamped;
    j["scored"] = s.scored;
    j["max_window_nodes"] = s.max_window_nodes;
    if (include_latency) {
        double sum = 0.0;
        for (double v : s.latency_us) sum += v;
        const auto n = s.latency_us.size();
        j["latency_us"] = {{"count", n},
                           {"mean", n ? sum / static_cast<double>(n) : 0.0},
                           {"p50", percentile(s.latency_us, 0.50)},
                           {"p95", percentile(s.latency_us, 0.95)},
                           {"max", n ? *std::max_element(s.latency_us.begin(), s.latency_us.end()) : 0.0}};
    }
    return j;
}

ReplayResult replay(const Dataset& ds, const TgtnParams& params, const EdgeRule& rule, const EncoderConfig& enc,
                    const WindowConfig& window, const RuleEngine& engine) {
    validate(window, rule);
    if (params.d_in != enc.d_in())
        throw Error("replay: checkpoint expects d_in " + std::to_string(params.d_in) + ", encoder gives " +
                    std::to_string(enc.d_in()));
    TxGraph graph(rule, enc);
    ReplayResult out;
    run_stream(ds, window, engine, out, [&](const Transaction& tx, StreamRecord& rec) {
        const auto t0 = std::chrono::steady_clock::now();
        graph.evict_before(tx.timestamp - window.window_seconds);
        const std::size_t idx = graph.add_transaction(tx);
        const auto input = graph_input(graph);
        const std::size_t target[] = {idx};
        rec.score = forward_targets(input, params, target)[0];
        rec.window_nodes = graph.size();
        rec.latency_us = std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - t0).count();
        out.stats.latency_us.push_back(rec.latency_us);
    });
    return out;
}

std::string records_jsonl(const std::vector<StreamRecord>& records, bool include_latency) {
    std::ostringstream os;
    for (const auto& r : records) {
        nlohmann::ordered_json j;
        j["tx_id"] = r.tx_id;
        j["verdict"] = r.verdict;
        j["reason"] = r.reason.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(r.reason);
        j["score"] = r.score ? nlohmann::ordered_json(*r.score) : nlohmann::ordered_json(nullptr);
        j["window_nodes"] = r.window_nodes;
        if (r.clamped) j["clamped"] = true;
        if (include_latency) j["latency_us"] = r.latency_us;
        os << j.dump() << '\n';
    }
    return os.str();
}

double consistency_check(const Dataset& ds, const TgtnParams& params, const EdgeRule& rule, const EncoderConfig& enc,
                         const WindowConfig& window, const RuleEngine& engine) {
    const auto streamed = replay(ds, params, rule, enc, window, engine);

    // Batch side: a plain list of window contents, rebuilt from scratch.
    std::deque<Transaction> contents;
    ReplayResult batch;
    run_stream(ds, window, engine, batch, [&](const Transaction& tx, StreamRecord& rec) {
        const auto cutoff = tx.timestamp - window.window_seconds;
        while (!contents.empty() && contents.front().timestamp < cutoff) contents.pop_front();
        contents.push_back(tx);
        const std::vector<Transaction> txs(contents.begin(), contents.end());
        const auto g = build_graph(txs, rule, enc);
        rec.score = forward(g, params).back();
        rec.window_nodes = g.size();
    });

    double worst = 0.0;
    for (std::size_t i = 0; i < streamed.records.size(); ++i) {
        const auto& a = streamed.records[i];
        const auto& b = batch.records[i];
        if (a.score.has_value() != b.score.has_value() || a.window_nodes != b.window_nodes)
            return std::numeric_limits<double>::infinity();
        if (a.score) worst = std::max(worst, std::abs(*a.score - *b.score));
    }
    return worst;
}

}  // namespace tgtn
