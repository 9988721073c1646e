#include "tgtn/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include "tgtn/error.hpp"

namespace tgtn {

namespace {

void check_lengths(std::span<const double> scores, std::span<const int> labels, const char* who) {
    if (scores.size() != labels.size())
        throw Error(std::string(who) + ": length mismatch (" + std::to_string(scores.size()) + " scores, " +
                    std::to_string(labels.size()) + " labels)");
}

std::pair<std::size_t, std::size_t> class_counts(std::span<const int> labels) {
    std::size_t pos = 0;
    for (int y : labels) pos += y == 1 ? 1 : 0;
    return {pos, labels.size() - pos};
}

// Howard Hinnant's civil_from_days.
std::pair<std::int64_t, unsigned> year_month(std::int64_t days) {
    days += 719468;
    const std::int64_t era = (days >= 0 ? days : days - 146096) / 146097;
    const auto doe = static_cast<unsigned>(days - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    const unsigned m = mp < 10 ? mp + 3 : mp - 9;
    return {m <= 2 ? y + 1 : y, m};
}

}  // namespace

double average_precision(std::span<const double> scores, std::span<const int> labels) {
    check_lengths(scores, labels, "average_precision");
    const auto [n_pos, n_neg] = class_counts(labels);
    if (n_pos == 0) throw Error("average_precision: no positive labels, AP is undefined");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    double total = 0.0;
    std::size_t hits = 0;
    for (std::size_t r = 0; r < order.size(); ++r) {
        if (labels[order[r]] != 1) continue;
        ++hits;
        total += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
    return total / static_cast<double>(n_pos);
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
    check_lengths(scores, labels, "roc_auc");
    const auto [n_pos, n_neg] = class_counts(labels);
    if (n_pos == 0 || n_neg == 0)
        throw Error("roc_auc: single-class input (" + std::to_string(n_pos) + " positive, " + std::to_string(n_neg) +
                    " negative); AUC is undefined");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Sweep tie groups in ascending score order; integer pair counts are exact.
    std::uint64_t concordant2 = 0;  // 2 * (concordant + 0.5 * tied)
    std::uint64_t neg_below = 0;
    for (std::size_t b = 0; b < order.size();) {
        std::size_t e = b;
        std::uint64_t pos_here = 0, neg_here = 0;
        while (e < order.size() && scores[order[e]] == scores[order[b]]) {
            (labels[order[e]] == 1 ? pos_here : neg_here) += 1;
            ++e;
        }
        concordant2 += 2 * pos_here * neg_below + pos_here * neg_here;
        neg_below += neg_here;
        b = e;
    }
    return static_cast<double>(concordant2) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

Confusion confusion_at(std::span<const double> scores, std::span<const int> labels, double threshold) {
    check_lengths(scores, labels, "confusion_at");
    Confusion c;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool predicted = scores[i] >= threshold;
        const bool actual = labels[i] == 1;
        if (predicted && actual) ++c.tp;
        else if (predicted) ++c.fp;
        else if (actual) ++c.fn;
        else ++c.tn;
    }
    return c;
}

std::string utc_month(std::int64_t timestamp) {
    const std::int64_t days = timestamp >= 0 ? timestamp / 86400 : -((-timestamp + 86399) / 86400);
    const auto [y, m] = year_month(days);
    char buf[24];
    std::snprintf(buf, sizeof buf, "%04lld-%02u", static_cast<long long>(y), m);
    return buf;
}

BucketMetrics bucket_metrics(std::span<const double> scores, std::span<const int> labels, double threshold) {
    BucketMetrics b;
    std::tie(b.n_pos, b.n_neg) = class_counts(labels);
    b.confusion = confusion_at(scores, labels, threshold);
    if (b.n_pos > 0 && b.n_neg > 0) b.ap = average_precision(scores, labels);
    if (b.n_pos > 0 && b.n_neg > 0) b.auc = roc_auc(scores, labels);
    return b;
}

MetricsReport evaluate(std::span<const double> scores, std::span<const int> labels, double threshold) {
    MetricsReport r;
    r.threshold = threshold;
    roc_auc(scores, labels);  // throws on a single class
    r.overall = bucket_metrics(scores, labels, threshold);
    return r;
}

MetricsReport monthly_report(std::span<const ScoredTx> scored, double threshold) {
    MetricsReport r;
    r.threshold = threshold;
    std::map<std::string, std::pair<std::vector<double>, std::vector<int>>> buckets;
    std::vector<double> all_scores;
    std::vector<int> all_labels;
    for (const auto& s : scored) {
        auto& [sc, lb] = buckets[utc_month(s.timestamp)];
        sc.push_back(s.score);
        lb.push_back(s.label);
        all_scores.push_back(s.score);
        all_labels.push_back(s.label);
    }
    r.overall = bucket_metrics(all_scores, all_labels, threshold);
    for (const auto& [month, data] : buckets) r.months[month] = bucket_metrics(data.first, data.second, threshold);
    return r;
}

nlohmann::ordered_json to_json(const BucketMetrics& m) {
    nlohmann::ordered_json j;
    j["ap"] = m.ap ? nlohmann::ordered_json(*m.ap) : nlohmann::ordered_json(nullptr);
    j["auc"] = m.auc ? nlohmann::ordered_json(*m.auc) : nlohmann::ordered_json(nullptr);
    j["n_pos"] = m.n_pos;
    j["n_neg"] = m.n_neg;
    j["confusion"] = {{"tp", m.confusion.tp}, {"fp", m.confusion.fp}, {"tn", m.confusion.tn}, {"fn", m.confusion.fn}};
    return j;
}

nlohmann::ordered_json to_json(const MetricsReport& r) {
    nlohmann::ordered_json j;
    j["threshold"] = r.threshold;
    j["overall"] = to_json(r.overall);
    auto months = nlohmann::ordered_json::object();
    for (const auto& [k, v] : r.months) months[k] = to_json(v);
    j["months"] = std::move(months);
    return j;
}

namespace {

BucketMetrics bucket_from_json(const nlohmann::json& j) {
    BucketMetrics b;
    if (!j.at("ap").is_null()) b.ap = j.at("ap").get<double>();
    if (!j.at("auc").is_null()) b.auc = j.at("auc").get<double>();
    b.n_pos = j.at("n_pos").get<std::size_t>();
    b.n_neg = j.at("n_neg").get<std::size_t>();
    const auto& c = j.at("confusion");
    b.confusion = {c.at("tp").get<std::size_t>(), c.at("fp").get<std::size_t>(), c.at("tn").get<std::size_t>(),
                   c.at("fn").get<std::size_t>()};
    return b;
}

std::string cell(const std::optional<double>& v) {
    if (!v) return "-";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", *v);
    return buf;
}

}  // namespace

MetricsReport metrics_report_from_json(const nlohmann::json& j) {
    try {
        MetricsReport r;
        r.threshold = j.at("threshold").get<double>();
        r.overall = bucket_from_json(j.at("overall"));
        for (const auto& [k, v] : j.at("months").items()) r.months[k] = bucket_from_json(v);
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("metrics report: ") + e.what());
    }
}

std::string render_table(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
    std::set<std::string> months;
    for (const auto& [name, r] : rows)
        for (const auto& [m, b] : r.months) months.insert(m);

    std::vector<std::string> header{"Model"};
    for (const auto& m : months) {
        header.push_back(m + " AP");
        header.push_back(m + " AUC");
    }
    header.emplace_back("All AP");
    header.emplace_back("All AUC");

    std::vector<std::vector<std::string>> table{header};
    for (const auto& [name, r] : rows) {
        std::vector<std::string> line{name};
        for (const auto& m : months) {
            const auto it = r.months.find(m);
            line.push_back(it == r.months.end() ? "-" : cell(it->second.ap));
            line.push_back(it == r.months.end() ? "-" : cell(it->second.auc));
        }
        line.push_back(cell(r.overall.ap));
        line.push_back(cell(r.overall.auc));
        table.push_back(std::move(line));
    }
    std::vector<std::size_t> width(header.size(), 0);
    for (const auto& line : table)
        for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());

    std::ostringstream out;
    for (std::size_t r = 0; r < table.size(); ++r) {
        for (std::size_t c = 0; c < table[r].size(); ++c) {
            if (c == 0) out << table[r][c] << std::string(width[c] - table[r][c].size(), ' ');
            else out << "  " << std::string(width[c] - table[r][c].size(), ' ') << table[r][c];
        }
        out << '\n';
        if (r == 0) {
            std::size_t total = 0;
            for (auto w : width) total += w + 2;
            out << std::string(total - 2, '-') << '\n';
        }
    }
    return out.str();
}

}  // namespace tgtn
