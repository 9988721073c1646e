#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "support/fixtures.hpp"
#include "tgtn/error.hpp"
#include "tgtn/metrics.hpp"

namespace tgtn {
namespace {

double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
    double num = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j)
            if (y[i] == 1 && y[j] == 0) {
                pairs += 1.0;
                if (s[i] > s[j]) num += 1.0;
                else if (s[i] == s[j]) num += 0.5;
            }
    return num / pairs;
}

// Walks the ranked list (descending score, stable) one item at a time.
double ranked_sweep_ap(const std::vector<double>& s, const std::vector<int>& y) {
    std::vector<std::size_t> order(s.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
    double hits = 0.0, sum = 0.0;
    for (std::size_t r = 0; r < order.size(); ++r)
        if (y[order[r]] == 1) {
            hits += 1.0;
            sum += hits / static_cast<double>(r + 1);
        }
    return sum / hits;
}

struct Instance {
    std::vector<double> scores;
    std::vector<int> labels;
};

Instance random_instance(Rng& rng, bool ties) {
    Instance in;
    const auto n = 2 + rng.below(199);
    for (std::size_t i = 0; i < n; ++i) {
        in.scores.push_back(ties ? static_cast<double>(rng.below(6)) / 5.0 : rng.uniform());
        in.labels.push_back(rng.bernoulli(0.3) ? 1 : 0);
    }
    in.labels[0] = 1;
    in.labels[1] = 0;
    return in;
}

TEST(AveragePrecision, HandExample) {
    const std::vector<double> s = {0.9, 0.8, 0.1};
    const std::vector<int> y = {1, 0, 1};
    EXPECT_NEAR(average_precision(s, y), (1.0 + 2.0 / 3.0) / 2.0, 1e-15);
}

TEST(AveragePrecision, EdgeCases) {
    const std::vector<double> s = {0.9, 0.2, 0.5};
    EXPECT_EQ(average_precision(s, std::vector<int>{1, 1, 1}), 1.0);
    EXPECT_EQ(average_precision(s, std::vector<int>{1, 0, 1}), 1.0);
    EXPECT_THROW(average_precision(s, std::vector<int>{0, 0, 0}), Error);
    EXPECT_THROW(average_precision(s, std::vector<int>{0, 1}), Error);
}

TEST(AveragePrecision, TiesFollowInputOrder) {
    const std::vector<double> s = {0.5, 0.5};
    EXPECT_EQ(average_precision(s, std::vector<int>{1, 0}), 1.0);
    EXPECT_EQ(average_precision(s, std::vector<int>{0, 1}), 0.5);
}

TEST(RocAuc, HandExamples) {
    const std::vector<double> s = {0.9, 0.8, 0.1};
    EXPECT_EQ(roc_auc(s, std::vector<int>{1, 0, 1}), 0.5);
    EXPECT_EQ(roc_auc(s, std::vector<int>{1, 1, 0}), 1.0);
    const std::vector<double> flat = {0.3, 0.3, 0.3, 0.3};
    EXPECT_EQ(roc_auc(flat, std::vector<int>{1, 0, 1, 0}), 0.5);
    EXPECT_THROW(roc_auc(s, std::vector<int>{1, 1, 1}), Error);
}

TEST(Metrics, MatchBruteForceOracles) {
    Rng rng(11);
    for (int t = 0; t < 300; ++t) {
        const auto in = random_instance(rng, t % 2 == 0);
        EXPECT_NEAR(roc_auc(in.scores, in.labels), pairwise_auc(in.scores, in.labels), 1e-12);
        EXPECT_NEAR(average_precision(in.scores, in.labels), ranked_sweep_ap(in.scores, in.labels), 1e-12);
    }
}

TEST(Metrics, InvariantUnderMonotoneTransforms) {
    Rng rng(12);
    for (int t = 0; t < 200; ++t) {
        const auto in = random_instance(rng, t % 2 == 0);
        const double a = rng.uniform(0.1, 10.0), b = rng.uniform(-5.0, 5.0);
        const int kind = static_cast<int>(rng.below(3));
        std::vector<double> mapped;
        for (const double s : in.scores) {
            if (kind == 0) mapped.push_back(a * s + b);
            else if (kind == 1) mapped.push_back(std::exp(a * s));
            else mapped.push_back(std::atan(a * (s - 0.5)) + s * s * s);
        }
        EXPECT_NEAR(roc_auc(mapped, in.labels), roc_auc(in.scores, in.labels), 1e-12);
        EXPECT_NEAR(average_precision(mapped, in.labels), average_precision(in.scores, in.labels), 1e-12);
    }
}

TEST(RocAuc, NegationComplementsWithoutTies) {
    Rng rng(13);
    for (int t = 0; t < 100; ++t) {
        const auto in = random_instance(rng, false);
        std::vector<double> neg;
        for (const double s : in.scores) neg.push_back(-s);
        EXPECT_NEAR(roc_auc(in.scores, in.labels) + roc_auc(neg, in.labels), 1.0, 1e-12);
    }
}

TEST(Confusion, Examples) {
    const std::vector<double> s = {0.9, 0.2};
    const std::vector<int> y = {1, 0};
    EXPECT_EQ(confusion_at(s, y, 0.5), (Confusion{1, 0, 1, 0}));
    EXPECT_EQ(confusion_at(s, y, 0.0), (Confusion{1, 1, 0, 0}));
    EXPECT_EQ(confusion_at(s, y, 0.95), (Confusion{0, 0, 1, 1}));
    EXPECT_EQ(confusion_at(s, y, 0.9), (Confusion{1, 0, 1, 0}));  // >= threshold is positive
    EXPECT_THROW(confusion_at(s, std::vector<int>{1}, 0.5), Error);
}

TEST(Confusion, CountsAddUp) {
    Rng rng(14);
    for (int t = 0; t < 50; ++t) {
        const auto in = random_instance(rng, true);
        const auto b = bucket_metrics(in.scores, in.labels, rng.uniform());
        EXPECT_EQ(b.confusion.tp + b.confusion.fn, b.n_pos);
        EXPECT_EQ(b.confusion.fp + b.confusion.tn, b.n_neg);
    }
}

TEST(UtcMonth, Boundaries) {
    EXPECT_EQ(utc_month(0), "1970-01");
    EXPECT_EQ(utc_month(1688169600 - 1), "2023-06");
    EXPECT_EQ(utc_month(1688169600), "2023-07");
    EXPECT_EQ(utc_month(1709164800), "2024-02");  // 2024-02-29
}

TEST(MonthlyReport, SingleMonthEqualsGlobal) {
    Rng rng(15);
    const auto in = random_instance(rng, false);
    std::vector<ScoredTx> scored;
    for (std::size_t i = 0; i < in.scores.size(); ++i)
        scored.push_back({1688169600 + static_cast<std::int64_t>(i), in.scores[i], in.labels[i]});
    const auto r = monthly_report(scored, 0.5);
    ASSERT_EQ(r.months.size(), 1u);
    const auto& m = r.months.at("2023-07");
    EXPECT_EQ(m.ap, r.overall.ap);
    EXPECT_EQ(m.auc, r.overall.auc);
    EXPECT_EQ(m.confusion, r.overall.confusion);
}

TEST(MonthlyReport, EmptyAndDegenerate) {
    const auto empty = monthly_report(std::vector<ScoredTx>{}, 0.5);
    EXPECT_TRUE(empty.months.empty());
    const std::vector<ScoredTx> s = {{1688169600, 0.9, 1}, {1688169601, 0.1, 0}, {1690848000, 0.4, 0}};
    const auto r = monthly_report(s, 0.5);
    ASSERT_EQ(r.months.size(), 2u);
    EXPECT_TRUE(r.months.at("2023-07").ap.has_value());
    EXPECT_FALSE(r.months.at("2023-08").ap.has_value());
    EXPECT_FALSE(r.months.at("2023-08").auc.has_value());
    EXPECT_EQ(r.months.at("2023-08").n_neg, 1u);
}

TEST(MonthlyReport, IdenticalMonthsAgree) {
    Rng rng(16);
    const auto in = random_instance(rng, false);
    std::vector<ScoredTx> s;
    for (std::size_t i = 0; i < in.scores.size(); ++i) {
        s.push_back({1688169600 + static_cast<std::int64_t>(i), in.scores[i], in.labels[i]});
        s.push_back({1690848000 + static_cast<std::int64_t>(i), in.scores[i], in.labels[i]});
    }
    const auto r = monthly_report(s, 0.5);
    EXPECT_EQ(r.months.at("2023-07").ap, r.months.at("2023-08").ap);
    EXPECT_EQ(r.months.at("2023-07").auc, r.months.at("2023-08").auc);
}

TEST(Evaluate, SingleClassThrows) {
    const std::vector<double> s = {0.1, 0.2};
    EXPECT_THROW(evaluate(s, std::vector<int>{0, 0}, 0.5), Error);
    EXPECT_NO_THROW(evaluate(s, std::vector<int>{0, 1}, 0.5));
}

TEST(Report, JsonRoundTripAndTable) {
    const std::vector<ScoredTx> s = {{1688169600, 0.9, 1}, {1688169601, 0.1, 0}, {1690848000, 0.4, 0}};
    const auto r = monthly_report(s, 0.5);
    const auto back = metrics_report_from_json(nlohmann::json::parse(to_json(r).dump()));
    EXPECT_EQ(to_json(back).dump(), to_json(r).dump());
    const auto table = render_table({{"TGTN", r}});
    EXPECT_NE(table.find("TGTN"), std::string::npos);
    EXPECT_NE(table.find("2023-07 AP"), std::string::npos);
    EXPECT_NE(table.find("All AUC"), std::string::npos);
}

}  // namespace
}  // namespace tgtn
