#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "fixtures.hpp"
#include "rfae/metrics.hpp"

using namespace rfae;

namespace {

Schema mixed_schema() {
    return Schema({{"x", ColumnKind::Continuous, {}},
                   {"c", ColumnKind::Categorical, {"a", "b", "c"}},
                   {"y", ColumnKind::Continuous, {}}});
}

Table random_mixed(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> cells;
    for (std::size_t i = 0; i < n; ++i) {
        cells.push_back(rng.normal());
        cells.push_back(static_cast<double>(rng.index(3)));
        cells.push_back(5.0 + 2.0 * rng.normal());
    }
    return Table(mixed_schema(), cells);
}

Table perturb(const Table& t, double noise, double flip, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> cells = t.cells();
    for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t j = 0; j < t.cols(); ++j) {
            double& v = cells[i * t.cols() + j];
            if (t.schema()[j].categorical()) {
                if (rng.uniform() < flip) v = static_cast<double>(rng.index(3));
            } else {
                v += noise * rng.normal();
            }
        }
    return Table(t.schema(), cells);
}

}  // namespace

TEST(Distortion, PerfectReconstructionIsZero) {
    auto t = random_mixed(50, 1);
    auto r = distortion(t, t);
    EXPECT_EQ(r.combined, 0.0);
    EXPECT_EQ(r.continuous, 2u);
    EXPECT_EQ(r.categorical, 1u);
}

TEST(Distortion, ColumnMeanScoresOne) {
    auto t = fixtures::continuous_table(1, {1, 2, 3, 6});
    auto m = fixtures::continuous_table(1, {3, 3, 3, 3});
    EXPECT_DOUBLE_EQ(distortion(t, m).per_feature[0], 1.0);
}

TEST(Distortion, CategoricalMismatchRate) {
    Schema s({{"c", ColumnKind::Categorical, {"a", "b"}}});
    Table a(s, {0, 0, 0, 0, 0, 1, 1, 1, 1, 1});
    Table b(s, {1, 1, 1, 0, 0, 1, 1, 1, 1, 1});
    EXPECT_DOUBLE_EQ(distortion(a, b).per_feature[0], 0.3);
}

TEST(Distortion, BadReconstructionIsClippedToOne) {
    auto t = fixtures::continuous_table(1, {0, 1});
    auto r = fixtures::continuous_table(1, {10, -10});
    EXPECT_DOUBLE_EQ(distortion(t, r).combined, 1.0);
}

TEST(Distortion, ConstantColumn) {
    auto t = fixtures::continuous_table(1, {2, 2, 2});
    EXPECT_DOUBLE_EQ(distortion(t, t).combined, 0.0);
    EXPECT_DOUBLE_EQ(distortion(t, fixtures::continuous_table(1, {2, 2, 2.5})).combined, 1.0);
}

TEST(Distortion, CombinedIsTheMeanOfFeatures) {
    auto t = random_mixed(200, 2);
    auto r = distortion(t, perturb(t, 0.5, 0.2, 3));
    double m = 0.0;
    for (double v : r.per_feature) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
        m += v;
    }
    EXPECT_NEAR(r.combined, m / 3.0, 1e-15);
    // Oracle for the first column: 1 - R^2 computed directly.
    double mean = 0.0, res = 0.0, tot = 0.0;
    auto p = perturb(t, 0.5, 0.2, 3);
    for (std::size_t i = 0; i < t.rows(); ++i) mean += t(i, 0) / 200.0;
    for (std::size_t i = 0; i < t.rows(); ++i) {
        res += std::pow(t(i, 0) - p(i, 0), 2);
        tot += std::pow(t(i, 0) - mean, 2);
    }
    EXPECT_NEAR(r.per_feature[0], res / tot, 1e-12);
}

TEST(Distortion, RowPermutationInvariantAndColumnEquivariant) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto t = random_mixed(40, seed);
        auto p = perturb(t, 0.7, 0.3, seed + 100);
        auto base = distortion(t, p);
        Rng rng(seed);
        std::vector<std::size_t> order(40);
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        auto rr = distortion(t.select_rows(order), p.select_rows(order));
        for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(rr.per_feature[j], base.per_feature[j], 1e-12);

        // Swap the two continuous columns.
        Schema swapped({{"y", ColumnKind::Continuous, {}},
                        {"c", ColumnKind::Categorical, {"a", "b", "c"}},
                        {"x", ColumnKind::Continuous, {}}});
        auto swap = [&](const Table& in) {
            std::vector<double> c;
            for (std::size_t i = 0; i < in.rows(); ++i) c.insert(c.end(), {in(i, 2), in(i, 1), in(i, 0)});
            return Table(swapped, c);
        };
        auto sc = distortion(swap(t), swap(p));
        EXPECT_NEAR(sc.per_feature[0], base.per_feature[2], 1e-12);
        EXPECT_NEAR(sc.per_feature[2], base.per_feature[0], 1e-12);
        EXPECT_NEAR(sc.combined, base.combined, 1e-12);
    }
}

TEST(Distortion, AffineRescalingInvariance) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto t = fixtures::uniform_table(30, 2, seed);
        auto p = perturb(t, 0.2, 0.0, seed + 7);
        auto scale = [](const Table& in) {
            std::vector<double> c = in.cells();
            for (auto& v : c) v = -3.5 * v + 12.0;
            return fixtures::continuous_table(2, c);
        };
        EXPECT_NEAR(distortion(scale(t), scale(p)).combined, distortion(t, p).combined, 1e-12);
    }
}

TEST(Distortion, RejectsMismatches) {
    auto t = fixtures::continuous_table(1, {1, 2});
    EXPECT_THROW(distortion(t, fixtures::continuous_table(1, {1, 2, 3})), Error);
    EXPECT_THROW(distortion(t, fixtures::continuous_table(2, {1, 2, 3, 4})), Error);
    EXPECT_THROW(distortion(fixtures::continuous_table(1, {1}), fixtures::continuous_table(1, {1})), Error);
}

TEST(Distortion, ReportJson) {
    auto t = random_mixed(10, 5);
    auto j = distortion(t, t).to_json();
    EXPECT_EQ(j["combined"], 0.0);
    EXPECT_EQ(j["per_feature"]["c"], 0.0);
    EXPECT_EQ(j["categorical_features"], 1);
}

TEST(SeparationRatio, ZeroSpreadHitsTheSentinel) {
    Eigen::MatrixXd Z(4, 1);
    Z << 0, 0, 1, 1;
    EXPECT_EQ(separation_ratio(Z, {0, 0, 1, 1}), separation_sentinel);
}

TEST(SeparationRatio, HandComputedValue) {
    Eigen::MatrixXd Z(4, 2);
    Z << -1, 0, 1, 0, 9, 0, 11, 0;
    // Centroids 0 and 10; every point is 1 from its centroid.
    EXPECT_DOUBLE_EQ(separation_ratio(Z, {0, 0, 1, 1}), 10.0);
}

TEST(SeparationRatio, TrueLabelsBeatShuffledLabels) {
    auto b = fixtures::blobs(200, 2, {{0, 0}, {4, 0}, {0, 4}}, 1.0, 3);
    Eigen::MatrixXd Z(200, 2);
    for (std::size_t i = 0; i < 200; ++i) Z.row(static_cast<Eigen::Index>(i)) << b.table(i, 0), b.table(i, 1);
    const double truth = separation_ratio(Z, b.labels);
    Rng rng(1);
    auto labels = b.labels;
    for (int rep = 0; rep < 100; ++rep) {
        rng.shuffle(labels);
        EXPECT_LT(separation_ratio(Z, labels), truth);
    }
}

TEST(SeparationRatio, SharedCentroidGivesSamplingNoiseOnly) {
    // Two classes drawn from one isotropic Gaussian: the centroid gap is pure
    // sampling noise, about sqrt(2 / m) times the mean radius.
    const std::size_t m = 2000, d = 3;
    Rng rng(9);
    Eigen::MatrixXd Z(2 * m, d);
    std::vector<double> labels;
    for (Eigen::Index i = 0; i < Z.rows(); ++i) {
        for (Eigen::Index j = 0; j < Z.cols(); ++j) Z(i, j) = rng.normal();
        labels.push_back(static_cast<double>(i % 2));
    }
    const double r = separation_ratio(Z, labels);
    EXPECT_LT(r, 4.0 * std::sqrt(2.0 / m));
}

TEST(SeparationRatio, RejectsTinyClasses) {
    Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(3, 1);
    EXPECT_THROW(separation_ratio(Z, {0, 0, 1}), Error);
    EXPECT_THROW(separation_ratio(Z, {0, 0, 0}), Error);
}
