#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <tuple>

#include <gtest/gtest.h>

#include "bikt/evaluation.hpp"
#include "micro_ap_oracle.hpp"

using namespace bikt;

namespace {

PointSet scored(std::vector<std::tuple<double, double, double>> pts) {
    PointSet s;
    for (auto [x, y, score] : pts) {
        s.points.push_back({x, y});
        s.scores.push_back(score);
    }
    return s;
}

PointSet truth_of(std::vector<Point> pts) {
    PointSet s;
    s.points = std::move(pts);
    return s;
}

}  // namespace

TEST(CountMetrics, Examples) {
    const auto zero = count_metrics({3, 4}, {3, 4});
    EXPECT_EQ(zero.mae, 0.0);
    EXPECT_EQ(zero.mse, 0.0);
    const auto m = count_metrics({10, 20}, {12, 16});
    EXPECT_DOUBLE_EQ(m.mae, 3.0);
    EXPECT_NEAR(m.mse, 3.16227766, 1e-8);
    EXPECT_EQ(m.n_images, 2u);
    const auto one = count_metrics({5}, {0});
    EXPECT_EQ(one.mae, 5.0);
    EXPECT_EQ(one.mse, 5.0);
    EXPECT_THROW(count_metrics({}, {}), std::invalid_argument);
    EXPECT_THROW(count_metrics({1}, {1, 2}), std::invalid_argument);
}

TEST(CountMetrics, MaeNotAboveRmse) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0, 50);
    for (int t = 0; t < 50; ++t) {
        std::vector<double> a(7), b(7);
        for (auto& v : a) v = u(rng);
        for (auto& v : b) v = u(rng);
        const auto m = count_metrics(a, b);
        EXPECT_LE(m.mae, m.mse + 1e-12);
    }
}

TEST(MatchPoints, Examples) {
    const auto truth = truth_of({{10, 10}});
    EXPECT_EQ(match_points(scored({{12, 10, 0.9}}), truth, 5), std::vector<bool>{true});
    EXPECT_EQ(match_points(scored({{12, 10, 0.9}}), truth, 1), std::vector<bool>{false});
    EXPECT_EQ(match_points(scored({{11, 10, 0.9}, {9, 10, 0.8}}), truth, 5), (std::vector<bool>{true, false}));
    EXPECT_EQ(match_points(scored({{9, 10, 0.8}, {11, 10, 0.9}}), truth, 5), (std::vector<bool>{false, true}));
}

TEST(MatchPoints, NearestTruthOnly) {
    // the prediction's nearest truth is (20,10), already matched by a better one
    const auto truth = truth_of({{10, 10}, {20, 10}});
    const auto labels = match_points(scored({{20, 10, 0.9}, {16, 10, 0.5}}), truth, 10);
    EXPECT_EQ(labels, (std::vector<bool>{true, false}));
}

TEST(MatchPoints, PartitionAndBound) {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 100; ++t) {
        const auto inst = random_micro_instance(rng, 1, 6, 6);
        const auto labels = match_points(inst.preds[0], inst.truths[0], 8);
        EXPECT_EQ(labels.size(), inst.preds[0].size());
        EXPECT_LE(static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true)), inst.truths[0].size());
        EXPECT_EQ(labels, oracle_match(inst.preds[0], inst.truths[0], 8));
    }
}

TEST(AveragePrecision, PerfectAndEmpty) {
    std::vector<PointSet> truths{truth_of({{5, 5}, {30, 30}}), truth_of({{12, 40}})};
    std::vector<PointSet> perfect{scored({{5, 5, 0.3}, {30, 30, 0.9}}), scored({{12, 40, 0.1}})};
    const auto curve = localization_map(perfect, truths);
    EXPECT_EQ(curve.ap.size(), 100u);
    for (double ap : curve.ap) EXPECT_DOUBLE_EQ(ap, 1.0);
    EXPECT_DOUBLE_EQ(curve.map, 1.0);
    EXPECT_FALSE(curve.undefined);
    const auto none = localization_map({PointSet{}, PointSet{}}, truths);
    EXPECT_EQ(none.map, 0.0);
}

TEST(AveragePrecision, UndefinedWithoutTruth) {
    const auto curve = localization_map({scored({{1, 1, 0.5}})}, {PointSet{}});
    EXPECT_TRUE(curve.undefined);
    EXPECT_EQ(curve.map, 0.0);
    EXPECT_TRUE(metrics_json(CountMetrics{}, curve).value("map_undefined", false));
}

TEST(AveragePrecision, HandComputed) {
    // ranked: TP(0.9), FP(0.8), TP(0.7); 2 truths -> 0.5*1 + 0.5*(2/3)
    std::vector<PointSet> truths{truth_of({{0, 0}, {50, 50}})};
    std::vector<PointSet> preds{scored({{1, 0, 0.9}, {25, 25, 0.8}, {50, 51, 0.7}})};
    EXPECT_NEAR(average_precision(preds, truths, 5), 0.5 + 0.5 * 2.0 / 3.0, 1e-15);
}

TEST(AveragePrecision, MatchesOracleOnMicroInstances) {
    std::mt19937_64 rng(7);
    for (int t = 0; t < 200; ++t) {
        const auto inst = random_micro_instance(rng, 1 + static_cast<int>(rng() % 3), 4, 4);
        const auto curve = localization_map(inst.preds, inst.truths);
        const auto expected = oracle_map(inst.preds, inst.truths, 1, 100);
        EXPECT_EQ(curve.map, expected) << "instance " << t;
    }
}

TEST(AveragePrecision, MonotoneInC) {
    std::mt19937_64 rng(11);
    for (int t = 0; t < 100; ++t) {
        const auto inst = random_micro_instance(rng, 1, 4, 4);
        // nested matching: single truth point, so larger c only adds candidates
        PointSet one_truth = inst.truths[0];
        if (one_truth.empty()) continue;
        one_truth.points.resize(1);
        double prev = -1;
        for (int c = 1; c <= 60; ++c) {
            const double ap = average_precision(inst.preds, {one_truth}, c);
            EXPECT_GE(ap, prev);
            EXPECT_GE(ap, 0.0);
            EXPECT_LE(ap, 1.0);
            prev = ap;
        }
    }
}

TEST(PatchProfile, RowsAndZeroError) {
    std::vector<DensityMap> maps{Grid(64, 96, 0.0), Grid(40, 40, 0.0)};
    PointSet a;
    a.points = {{3, 3}, {40, 10}};
    maps[0].at(3, 3) = 1.0;
    maps[0].at(10, 40) = 1.0;
    const auto rows = patch_error_profile(maps, {a, PointSet{}}, 32, "regressor");
    EXPECT_EQ(rows.size(), 2u * 3u + 1u);
    for (const auto& r : rows) EXPECT_NEAR(r.signed_error(), 0.0, 1e-12);
    EXPECT_EQ(rows[1].true_count, 1.0);
    const auto path = std::filesystem::temp_directory_path() / "bikt_profile.csv";
    write_profile_csv(rows, path);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "image_id,patch_x,patch_y,true_count,pred_count,model");
}

TEST(MetricsJson, Keys) {
    const auto j = metrics_json(count_metrics({1}, {2}), localization_map({PointSet{}}, {truth_of({{1, 1}})}, 1, 3));
    EXPECT_EQ(j["mae"], 1.0);
    EXPECT_EQ(j["ap_by_c"].size(), 3u);
    EXPECT_TRUE(j.contains("map"));
    EXPECT_FALSE(j.contains("map_undefined"));
}
