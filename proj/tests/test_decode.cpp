#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "fixtures.hpp"
#include "rfae/decode.hpp"

using namespace rfae;

namespace {

ForestParams params(std::size_t trees, std::uint64_t seed = 1) {
    ForestParams p;
    p.n_trees = trees;
    p.seed = seed;
    return p;
}

using rfae::Node;

// Balanced two-level tree on one feature with thresholds t1 < t2 < t3.
Tree four_bins(std::size_t f, double t1, double t2, double t3) {
    return Tree({Node::internal(SplitRule::less_than(f, t2), 1, 2), Node::internal(SplitRule::less_than(f, t1), 3, 4),
                 Node::internal(SplitRule::less_than(f, t3), 5, 6), Node::make_leaf(0), Node::make_leaf(1),
                 Node::make_leaf(2), Node::make_leaf(3)});
}

// 20 points, each alone in a cell of the partition jointly induced by three
// trees (x1 bins from two trees, x2 bins from the third).
struct Toy {
    Table table;
    Forest forest;
};

Toy injective_toy() {
    const std::vector<double> x1{0.0625, 0.1875, 0.3125, 0.4375, 0.5625, 0.6875, 0.875};
    const std::vector<double> x2{0.125, 0.375, 0.625, 0.875};
    std::vector<double> cells;
    std::size_t c = 0;
    for (double a : x1)
        for (double b : x2)
            if (c++ < 20) {
                cells.push_back(a);
                cells.push_back(b);
            }
    // Fix the feature ranges to the unit square.
    cells.insert(cells.end(), {0.0, 0.0, 1.0, 1.0});
    Table all = fixtures::continuous_table(2, cells);
    std::vector<std::size_t> first(20);
    std::iota(first.begin(), first.end(), 0);
    Table t = all.select_rows(first);
    auto f = Forest::from_trees(all, {four_bins(0, 0.25, 0.5, 0.75), four_bins(0, 0.125, 0.375, 0.625),
                                      four_bins(1, 0.25, 0.5, 0.75)});
    return {t, f};
}

Eigen::VectorXd kernel_row(const KernelReference& ref, std::span<const double> x) {
    const auto a = ref.forest().route(x);
    Eigen::VectorXd k(static_cast<Eigen::Index>(ref.size()));
    for (std::size_t j = 0; j < ref.size(); ++j) k(static_cast<Eigen::Index>(j)) = ref.value(a.leaves, j);
    return k;
}

double brute_objective(const Eigen::MatrixXd& phi, const Eigen::VectorXd& s, const Eigen::VectorXd& y,
                       const Eigen::VectorXd& psi, double lambda) {
    const Eigen::VectorXd r = y - phi * s.asDiagonal() * psi;
    return r.squaredNorm() + lambda * psi.sum() * psi.sum();
}

}  // namespace

// ---------------------------------------------------------------- synthetic

TEST(SyntheticTraining, RoutesLikeTheOriginals) {
    auto b = fixtures::two_blobs(300, 3, 4.0, 7);
    auto f = fit_supervised(b.table, Labels::classes_of(b.labels, 2), params(50, 7));
    auto s = build_synthetic_training(f, b.table, 11, 2);
    ASSERT_EQ(s.x.rows(), b.table.rows());
    for (std::size_t i = 0; i < b.table.rows(); ++i) EXPECT_EQ(f.route(s.x.row(i)), f.route(b.table.row(i))) << i;
}

TEST(SyntheticTraining, DeepForestShrinksToTheData) {
    auto t = fixtures::uniform_table(200, 2, 3);
    auto f = fit_completely_random(t, params(100, 3));
    auto s = build_synthetic_training(f, t, 5);
    // Oracle: each synthetic row lies in the box spanned by its row's leaf
    // intersection, whose width shrinks as trees are added.
    LeafRegions regions(f);
    double worst_width = 0.0, mean_err = 0.0;
    for (std::size_t i = 0; i < t.rows(); ++i) {
        Region r = regions.intersect(f.route(t.row(i)));
        for (std::size_t j = 0; j < 2; ++j) {
            worst_width = std::max(worst_width, r[j].hi - r[j].lo);
            EXPECT_LE(std::abs(s.x(i, j) - t(i, j)), r[j].hi - r[j].lo + 1e-15);
            mean_err += std::abs(s.x(i, j) - t(i, j));
        }
    }
    EXPECT_LT(mean_err / 400.0, 0.02);
    EXPECT_LT(worst_width, 0.5);
}

TEST(SyntheticTraining, SingleLeafForestIsUniformOverTheBox) {
    auto t = fixtures::continuous_table(1, {0.0, 2.0, 1.0});
    auto f = Forest::from_trees(t, {Tree({Node::make_leaf(0)})});
    std::vector<double> cells;
    for (int r = 0; r < 3000; ++r) cells.push_back(1.0);
    auto big = fixtures::continuous_table(1, cells);
    auto s = build_synthetic_training(f, big, 9);
    double mean = 0.0;
    for (std::size_t i = 0; i < big.rows(); ++i) {
        ASSERT_GE(s.x(i, 0), 0.0);
        ASSERT_LE(s.x(i, 0), 2.0);
        mean += s.x(i, 0);
    }
    EXPECT_NEAR(mean / 3000.0, 1.0, 0.05);
}

TEST(SyntheticTraining, DeterministicAcrossJobCounts) {
    auto t = fixtures::uniform_table(80, 3, 1);
    auto f = fit_completely_random(t, params(20, 1));
    EXPECT_EQ(build_synthetic_training(f, t, 4, 1).x, build_synthetic_training(f, t, 4, 4).x);
}

// ---------------------------------------------------------------- k-NN

TEST(KnnNeighbors, ExactMatchGetsAllWeight) {
    Eigen::MatrixXd Z(3, 2);
    Z << 0, 0, 1, 0, 0, 2;
    Eigen::RowVectorXd q(2);
    q << 1, 0;
    auto s = knn_neighbors(q, Z, 1);
    ASSERT_EQ(s.indices.size(), 1u);
    EXPECT_EQ(s.indices[0], 1u);
    EXPECT_DOUBLE_EQ(s.weights[0], 1.0);
}

TEST(KnnNeighbors, EquidistantPairSplitsEvenly) {
    Eigen::MatrixXd Z(3, 1);
    Z << -1, 1, 5;
    Eigen::RowVectorXd q(1);
    q << 0;
    auto s = knn_neighbors(q, Z, 2);
    EXPECT_EQ(s.indices, (std::vector<std::uint32_t>{0, 1}));
    EXPECT_DOUBLE_EQ(s.weights[0], 0.5);
    EXPECT_DOUBLE_EQ(s.weights[1], 0.5);
}

TEST(KnnNeighbors, ZeroDistanceTiesShareWeight) {
    Eigen::MatrixXd Z(3, 1);
    Z << 2, 2, 3;
    Eigen::RowVectorXd q(1);
    q << 2;
    auto s = knn_neighbors(q, Z, 3);
    EXPECT_DOUBLE_EQ(s.weights[0], 0.5);
    EXPECT_DOUBLE_EQ(s.weights[1], 0.5);
    EXPECT_DOUBLE_EQ(s.weights[2], 0.0);
}

TEST(KnnNeighbors, WeightsFormAMonotoneSimplex) {
    Rng rng(4);
    for (int rep = 0; rep < 20; ++rep) {
        Eigen::MatrixXd Z = Eigen::MatrixXd::Random(60, 3);
        Eigen::RowVectorXd q = Eigen::RowVectorXd::Random(3);
        auto s = knn_neighbors(q, Z, 10);
        double sum = 0.0;
        for (std::size_t i = 0; i < s.weights.size(); ++i) {
            EXPECT_GE(s.weights[i], 0.0);
            sum += s.weights[i];
            if (i) {
                EXPECT_LE(s.distances[i - 1], s.distances[i]);
                EXPECT_GE(s.weights[i - 1], s.weights[i]);
            }
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
    }
}

TEST(KnnNeighbors, KdTreeMatchesBruteForce) {
    for (int d : {1, 2, 5, 14}) {
        Rng rng(static_cast<std::uint64_t>(d));
        Eigen::MatrixXd Z(400, d);
        for (Eigen::Index i = 0; i < Z.size(); ++i) Z.data()[i] = std::round(rng.uniform() * 8.0);  // many ties
        KdTree tree(Z);
        for (int rep = 0; rep < 30; ++rep) {
            Eigen::RowVectorXd q(d);
            for (int j = 0; j < d; ++j) q(j) = rng.uniform() * 8.0;
            std::vector<std::pair<double, std::uint32_t>> all;
            for (Eigen::Index i = 0; i < Z.rows(); ++i)
                all.push_back({(Z.row(i) - q).squaredNorm(), static_cast<std::uint32_t>(i)});
            std::sort(all.begin(), all.end());
            all.resize(17);
            EXPECT_EQ(tree.query(q, 17), all);
        }
    }
}

TEST(KnnNeighbors, RejectsBadK) {
    Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(3, 1);
    Eigen::RowVectorXd q = Eigen::RowVectorXd::Zero(1);
    EXPECT_THROW(knn_neighbors(q, Z, 4), Error);
    EXPECT_THROW(knn_neighbors(q, Z, 0), Error);
}

TEST(KnnDecode, SingleNeighbourReturnsTheSyntheticRow) {
    auto b = fixtures::two_blobs(120, 3, 3.0, 2);
    auto f = fit_supervised(b.table, Labels::classes_of(b.labels, 2), params(40, 2));
    auto model = eigendecompose(rf_kernel_train(f, b.table), 5);
    auto s = build_synthetic_training(f, b.table, 3);
    auto out = knn_decode(model.Z, model, s, 1, 0);
    EXPECT_EQ(out, s.x);
}

TEST(KnnDecode, UnanimousCategoricalLevel) {
    Schema schema({{"c", ColumnKind::Categorical, {"x", "y"}}});
    SyntheticTrainingSet s{Table(schema, {1, 1, 1, 0}), 0};
    SpectralModel m;
    m.n = 4;
    m.lambda = Eigen::VectorXd::Ones(1);
    m.Z.resize(4, 1);
    m.Z << 0.0, 0.1, 0.2, 5.0;
    Eigen::MatrixXd q(1, 1);
    q << 0.05;
    auto out = knn_decode(q, m, s, 3, 1);
    EXPECT_EQ(out(0, 0), 1.0);
}

TEST(KnnDecode, CategoricalTiesAreSeededAndValid) {
    Schema schema({{"c", ColumnKind::Categorical, {"x", "y"}}});
    SyntheticTrainingSet s{Table(schema, {0, 1}), 0};
    SpectralModel m;
    m.n = 2;
    m.lambda = Eigen::VectorXd::Ones(1);
    m.Z.resize(2, 1);
    m.Z << -1.0, 1.0;
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(200, 1);
    auto a = knn_decode(q, m, s, 2, 5), b = knn_decode(q, m, s, 2, 5, 4);
    EXPECT_EQ(a, b);
    std::set<double> seen(a.cells().begin(), a.cells().end());
    EXPECT_EQ(seen, (std::set<double>{0.0, 1.0}));
}

TEST(KnnDecode, OutputStaysWithinFeatureRanges) {
    auto b = fixtures::two_blobs(150, 2, 3.0, 8);
    auto f = fit_completely_random(b.table, params(30, 8));
    auto model = eigendecompose(rf_kernel_train(f, b.table), 2);
    auto s = build_synthetic_training(f, b.table, 8);
    Eigen::MatrixXd q = Eigen::MatrixXd::Random(50, 2) * 10.0;
    auto out = knn_decode(q, model, s, 20, 8);
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < 2; ++j) {
            EXPECT_GE(out(i, j), f.feature_ranges()[j].first);
            EXPECT_LE(out(i, j), f.feature_ranges()[j].second);
        }
}

// ---------------------------------------------------------------- relabel

TEST(Relabel, SeparableEmbeddingGivesPerfectMatch) {
    Eigen::MatrixXd Z(6, 2);
    Z << 0.3, 5, 0.1, -2, 0.2, 1, 0.9, 0, 0.8, 3, 0.7, -1;
    std::vector<std::uint32_t> idx{0, 1, 2, 3, 4, 5};
    std::vector<std::uint8_t> left{0, 0, 0, 1, 1, 1};
    auto s = best_latent_split(Z, idx, left);
    EXPECT_EQ(s.dim, 0);
    EXPECT_DOUBLE_EQ(s.smc, 1.0);
    EXPECT_NEAR(s.threshold, 0.5, 1e-15);
    EXPECT_FALSE(s.left_below);
    for (auto i : idx) EXPECT_EQ(s.goes_left(Z.row(i)), left[i] != 0);
}

TEST(Relabel, OneSidedTargetsGiveAConstantSplit) {
    Eigen::MatrixXd Z = Eigen::MatrixXd::Random(5, 2);
    auto s = best_latent_split(Z, {0, 1, 2, 3, 4}, {0, 0, 0, 0, 0});
    EXPECT_TRUE(s.constant());
    EXPECT_FALSE(s.constant_left);
}

TEST(Relabel, KeepsTopologyAndAgreesWithOriginalRouting) {
    auto b = fixtures::two_blobs(200, 2, 4.0, 3);
    ForestParams p = params(20, 3);
    p.max_depth = 3;
    auto f = fit_supervised(b.table, Labels::classes_of(b.labels, 2), p);
    KernelReference ref(f, b.table);
    auto model = eigendecompose(ref.train(), 2);
    auto rf = relabel_forest(ref, model, 64, 3, 2);
    ASSERT_EQ(rf.splits.size(), f.size());
    for (std::size_t t = 0; t < f.size(); ++t) ASSERT_EQ(rf.splits[t].size(), f.tree(t).nodes().size());
    std::size_t agree = 0, total = 0;
    for (std::size_t i = 0; i < b.table.rows(); ++i) {
        auto a = rf.route(f, model.Z.row(static_cast<Eigen::Index>(i)));
        auto o = f.route(b.table.row(i));
        for (std::size_t t = 0; t < f.size(); ++t) agree += a.leaves[t] == o.leaves[t] ? 1 : 0;
        total += f.size();
    }
    EXPECT_GE(static_cast<double>(agree) / static_cast<double>(total), 0.7);
}

TEST(Relabel, T2x4TrainingEmbeddingsRouteLikeTheData) {
    auto f = fixtures::t2x4_forest();
    auto t = fixtures::t2x4_table();
    KernelReference ref(f, t);
    auto model = eigendecompose(ref.train(), 2);
    auto rf = relabel_forest(ref, model, 256, 1);
    for (std::size_t i = 0; i < 4; ++i)
        EXPECT_EQ(rf.route(f, model.Z.row(static_cast<Eigen::Index>(i))), f.route(t.row(i))) << i;
    for (std::size_t b = 0; b < 2; ++b) EXPECT_DOUBLE_EQ(rf.splits[b][0].smc, 1.0);
    std::vector<RelabelRowTrace> trace;
    auto out = relabel_decode(rf, f, LeafRegions(f), model.Z, 2, 1, &trace);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_FALSE(trace[i].fallback);
        EXPECT_EQ(f.route(out.row(i)), f.route(t.row(i)));
    }
}

TEST(Relabel, EmptyIntersectionFallsBackToGreedy) {
    // Tree 1 splits x < 0.3, tree 2 splits x < 0.7: "left of 0.3" and
    // "right of 0.7" cannot hold together.
    auto t = fixtures::continuous_table(1, {0.0, 0.5, 1.0});
    auto f = Forest::from_trees(t, {fixtures::stump(0, 0.3), fixtures::stump(0, 0.7)});
    RelabeledForest rf;
    rf.splits.resize(2);
    for (auto& s : rf.splits) s.assign(3, LatentSplit{});
    rf.splits[0][0].constant_left = true;
    rf.splits[1][0].constant_left = false;
    LeafRegions regions(f);
    Eigen::MatrixXd Z0 = Eigen::MatrixXd::Zero(10, 1);
    std::vector<RelabelRowTrace> trace;
    auto out = relabel_decode(rf, f, regions, Z0, 3, 1, &trace);
    for (std::size_t i = 0; i < 10; ++i) {
        EXPECT_TRUE(trace[i].fallback);
        EXPECT_GT(trace[i].repaired, 0u);
        EXPECT_FALSE(regions.intersect(trace[i].assigned).empty());
        EXPECT_EQ(f.route(out.row(i)), trace[i].assigned);
    }
}

TEST(Relabel, DecodedRowsLieInTheirAssignedRegions) {
    auto b = fixtures::two_blobs(150, 3, 3.0, 5);
    ForestParams p = params(15, 5);
    p.max_depth = 4;
    auto f = fit_supervised(b.table, Labels::classes_of(b.labels, 2), p);
    KernelReference ref(f, b.table);
    auto model = eigendecompose(ref.train(), 3);
    auto rf = relabel_forest(ref, model, 32, 5, 2);
    Eigen::MatrixXd Z0 = model.Z.topRows(60) + 0.05 * Eigen::MatrixXd::Random(60, 3);
    std::vector<RelabelRowTrace> trace;
    auto out = relabel_decode(rf, f, LeafRegions(f), Z0, 5, 2, &trace);
    for (std::size_t i = 0; i < 60; ++i) EXPECT_EQ(f.route(out.row(i)), trace[i].assigned);
}

// ---------------------------------------------------------------- exclusive lasso

TEST(ExclusiveLasso, LargePenaltyDrivesToZero) {
    Eigen::MatrixXd phi(3, 3);
    phi << 1, 0, 0, 1, 0, 0, 0, 1, 1;
    Eigen::VectorXd s(3), y(3);
    s << 0.5, 1.0, 1.0;
    y << 1, 1, 2;
    auto f = exclusive_lasso(phi, s, y, 1e6, {0, 0, 0});
    for (double v : f.values) EXPECT_LT(v, 1e-5);
}

TEST(ExclusiveLasso, MatchesGridSearchOnThreeLeaves) {
    // One tree, leaves {0,1}, {2,3,4}, {5}; the target is leaf 1's column.
    Eigen::MatrixXd phi = Eigen::MatrixXd::Zero(6, 3);
    phi(0, 0) = phi(1, 0) = 1;
    phi(2, 1) = phi(3, 1) = phi(4, 1) = 1;
    phi(5, 2) = 1;
    Eigen::VectorXd s(3);
    s << 0.5, 1.0 / 3.0, 1.0;
    Eigen::VectorXd y = Eigen::VectorXd::Zero(6);
    y(2) = y(3) = y(4) = 1.0 / 3.0;
    const double lambda = 1e-4;
    auto f = exclusive_lasso(phi, s, y, lambda, {0, 0, 0});
    ASSERT_TRUE(f.converged);
    const auto top = std::max_element(f.values.begin(), f.values.end()) - f.values.begin();
    EXPECT_EQ(top, 1);

    double best = std::numeric_limits<double>::infinity();
    Eigen::VectorXd arg(3);
    for (int a = 0; a <= 100; ++a)
        for (int b = 0; b <= 100; ++b)
            for (int c = 0; c <= 100; ++c) {
                Eigen::VectorXd psi(3);
                psi << a / 100.0, b / 100.0, c / 100.0;
                const double o = brute_objective(phi, s, y, psi, lambda);
                if (o < best) {
                    best = o;
                    arg = psi;
                }
            }
    Eigen::Index grid_top;
    arg.maxCoeff(&grid_top);
    EXPECT_EQ(grid_top, 1);
    Eigen::VectorXd psi = Eigen::Map<const Eigen::VectorXd>(f.values.data(), 3);
    EXPECT_LE(brute_objective(phi, s, y, psi, lambda), best + 1e-12);
    EXPECT_NEAR(f.objective.back(), brute_objective(phi, s, y, psi, lambda), 1e-12);
}

TEST(ExclusiveLasso, ObjectiveNeverIncreases) {
    Rng rng(12);
    for (int rep = 0; rep < 25; ++rep) {
        const Eigen::Index k = 12, m = 9;
        Eigen::MatrixXd phi(k, m);
        for (Eigen::Index i = 0; i < phi.size(); ++i) phi.data()[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;
        Eigen::VectorXd s(m), y(k);
        for (Eigen::Index l = 0; l < m; ++l) s(l) = 1.0 / (1.0 + static_cast<double>(rng.index(5)));
        for (Eigen::Index i = 0; i < k; ++i) y(i) = 2.0 * rng.uniform();
        std::vector<std::uint32_t> groups;
        for (Eigen::Index l = 0; l < m; ++l) groups.push_back(static_cast<std::uint32_t>(l / 3));
        auto f = exclusive_lasso(phi, s, y, 0.01 + rng.uniform(), groups);
        for (std::size_t t = 1; t < f.objective.size(); ++t) EXPECT_LE(f.objective[t], f.objective[t - 1] + 1e-12);
        EXPECT_LE(f.objective.back(), y.squaredNorm() + 1e-12);
        for (double v : f.values) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
}

TEST(ExclusiveLasso, RejectsNonPositiveLambda) {
    Eigen::MatrixXd phi = Eigen::MatrixXd::Ones(1, 1);
    Eigen::VectorXd s = Eigen::VectorXd::Ones(1), y = Eigen::VectorXd::Ones(1);
    EXPECT_THROW(exclusive_lasso(phi, s, y, 0.0, {0}), Error);
}

// ---------------------------------------------------------------- greedy

TEST(MaximalCliques, MatchBruteForce) {
    Rng rng(6);
    for (int rep = 0; rep < 40; ++rep) {
        const std::size_t n = 2 + rng.index(7);
        TreeGraph g(n);
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = a + 1; b < n; ++b)
                if (rng.uniform() < 0.5) g.connect(a, b);
        std::vector<std::vector<std::size_t>> oracle;
        auto is_clique = [&](std::uint32_t mask) {
            for (std::size_t a = 0; a < n; ++a)
                for (std::size_t b = a + 1; b < n; ++b)
                    if ((mask >> a & 1) && (mask >> b & 1) && !g.adjacent(a, b)) return false;
            return true;
        };
        for (std::uint32_t mask = 1; mask < (1u << n); ++mask) {
            if (!is_clique(mask)) continue;
            bool maximal = true;
            for (std::size_t v = 0; v < n && maximal; ++v)
                if (!(mask >> v & 1) && is_clique(mask | (1u << v))) maximal = false;
            if (!maximal) continue;
            std::vector<std::size_t> c;
            for (std::size_t v = 0; v < n; ++v)
                if (mask >> v & 1) c.push_back(v);
            oracle.push_back(c);
        }
        std::sort(oracle.begin(), oracle.end());
        EXPECT_EQ(maximal_cliques(g).cliques, oracle);
    }
}

TEST(Greedy, ConsistentOneHotIsAFixedPoint) {
    auto b = fixtures::two_blobs(100, 2, 3.0, 1);
    auto f = fit_completely_random(b.table, params(10, 1));
    LeafRegions regions(f);
    for (std::size_t i = 0; i < 10; ++i) {
        auto a = f.route(b.table.row(i));
        auto g = greedy_leaf_assign(one_hot_scores(a, regions), regions, 1);
        EXPECT_EQ(g.assignment, a);
        EXPECT_EQ(g.rounds, 1u);
        EXPECT_EQ(g.repaired, 0u);
    }
}

TEST(Greedy, T2x4AcceptsAAndDInOneRound) {
    auto f = fixtures::t2x4_forest();
    LeafScores p{{0.9, 0.1}, {0.2, 0.8}};
    auto g = greedy_leaf_assign(p, f, 4);
    EXPECT_EQ(g.assignment.leaves, (std::vector<std::uint32_t>{0, 1}));
    EXPECT_EQ(g.rounds, 1u);
}

TEST(Greedy, RepairsConflictingChoices) {
    auto t = fixtures::continuous_table(1, {0.0, 0.5, 1.0});
    auto f = Forest::from_trees(t, {fixtures::stump(0, 0.3), fixtures::stump(0, 0.7)});
    LeafRegions regions(f);
    // Tree 1 prefers x < 0.3, tree 2 prefers x >= 0.7. The two singleton
    // cliques are disjoint, so one is kept at random and the other tree moves.
    std::set<std::vector<std::uint32_t>> outcomes;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto g = greedy_leaf_assign(LeafScores{{0.9, 0.1}, {0.3, 0.6}}, regions, seed);
        EXPECT_EQ(g.rounds, 2u);
        EXPECT_EQ(g.repaired, 1u);
        EXPECT_TRUE(g.random_clique);
        EXPECT_FALSE(g.region.empty());
        outcomes.insert(g.assignment.leaves);
    }
    EXPECT_EQ(outcomes, (std::set<std::vector<std::uint32_t>>{{0, 0}, {1, 1}}));
}

TEST(Greedy, RandomFiveTreeInstancesTerminateConsistently) {
    for (std::uint64_t rep = 0; rep < 100; ++rep) {
        auto t = fixtures::uniform_table(60, 3, rep);
        ForestParams p = params(5, rep);
        p.max_depth = 1 + rep % 4;
        auto f = fit_completely_random(t, p);
        LeafRegions regions(f);
        Rng rng(rep + 1000);
        LeafScores s(5);
        std::size_t max_leaves = 0;
        for (std::size_t b = 0; b < 5; ++b) {
            max_leaves = std::max(max_leaves, regions.leaves(b));
            for (std::size_t l = 0; l < regions.leaves(b); ++l)
                s[b].push_back(rng.uniform() < 0.3 ? 0.0 : rng.uniform());
        }
        auto g = greedy_leaf_assign(s, regions, rep);
        ASSERT_EQ(g.assignment.leaves.size(), 5u);
        EXPECT_LE(g.rounds, 5 * max_leaves);
        std::vector<Region> chosen;
        for (std::size_t b = 0; b < 5; ++b) {
            ASSERT_LT(g.assignment.leaves[b], regions.leaves(b));
            chosen.push_back(regions(b, g.assignment.leaves[b]));
        }
        for (std::size_t a = 0; a < 5; ++a)
            for (std::size_t b = a + 1; b < 5; ++b)
                EXPECT_FALSE(region_intersect(std::vector<Region>{chosen[a], chosen[b]}).empty());
        EXPECT_FALSE(region_intersect(chosen).empty());
    }
}

TEST(Greedy, CategoricalMasksWithoutACommonLevelAreRepaired) {
    // Three one-vs-rest splits on a 3-level column: the "not a", "not b" and
    // "not c" leaves overlap pairwise but share no level.
    Schema s({{"c", ColumnKind::Categorical, {"a", "b", "c"}}});
    Table t(s, {0, 1, 2});
    auto ovr = [](std::size_t level) {
        return Tree({Node::internal(SplitRule::equals(0, level), 1, 2), Node::make_leaf(0), Node::make_leaf(1)});
    };
    auto f = Forest::from_trees(t, {ovr(0), ovr(1), ovr(2)});
    LeafScores p{{0.1, 0.9}, {0.2, 0.8}, {0.3, 0.7}};
    auto g = greedy_leaf_assign(p, f, 1);
    LeafRegions regions(f);
    EXPECT_FALSE(regions.intersect(g.assignment).empty());
    EXPECT_GE(g.rounds, 2u);
}

// ---------------------------------------------------------------- lasso decode

TEST(LassoDecode, RecoversTrainingAssignmentsAtFullRank) {
    auto t = fixtures::uniform_table(20, 2, 17);
    ForestParams p = params(10, 17);
    p.min_leaf_size = 2;
    auto f = fit_completely_random(t, p);
    KernelReference ref(f, t);
    auto model = eigendecompose(ref.train(), 19);
    LeafRegions regions(f);
    LassoDecodeTrace trace;
    auto out = lasso_decode(model.Z, model, ref, regions, {}, 3, 1, &trace);
    for (std::size_t i = 0; i < 20; ++i) {
        EXPECT_EQ(trace.rows[i].greedy.assignment, f.route(t.row(i))) << i;
        EXPECT_EQ(f.route(out.row(i)), trace.rows[i].greedy.assignment);
    }
}

TEST(LassoDecode, LargeCapIsANoOp) {
    auto b = fixtures::two_blobs(60, 2, 3.0, 4);
    auto f = fit_completely_random(b.table, params(15, 4));
    KernelReference ref(f, b.table);
    auto model = eigendecompose(ref.train(), 3);
    LeafRegions regions(f);
    LassoDecodeOptions a, c;
    a.sparsity_cap = 60;
    c.sparsity_cap = 6000;
    Eigen::MatrixXd Z0 = model.Z.topRows(10);
    EXPECT_EQ(lasso_decode(Z0, model, ref, regions, a, 1), lasso_decode(Z0, model, ref, regions, c, 1));
}

TEST(LassoDecode, RowsLieInAssignedRegions) {
    auto b = fixtures::two_blobs(80, 3, 3.0, 9);
    auto f = fit_completely_random(b.table, params(20, 9));
    KernelReference ref(f, b.table);
    auto model = eigendecompose(ref.train(), 2);
    LeafRegions regions(f);
    Eigen::MatrixXd Z0 = model.Z.topRows(20) + 0.1 * Eigen::MatrixXd::Random(20, 2);
    LassoDecodeTrace trace;
    auto out = lasso_decode(Z0, model, ref, regions, {}, 9, 2, &trace);
    for (std::size_t i = 0; i < 20; ++i) {
        EXPECT_EQ(f.route(out.row(i)), trace.rows[i].greedy.assignment);
        EXPECT_LE(trace.rows[i].neighbors.size(), 80u);
    }
}

// ---------------------------------------------------------------- ILP

TEST(Ilp, InjectiveToyRecoversEveryPointUniquely) {
    auto toy = injective_toy();
    KernelReference ref(toy.forest, toy.table);
    LeafRegions regions(toy.forest);
    for (std::size_t i = 0; i < 20; ++i) {
        auto r = ilp_decode_exact(kernel_row(ref, toy.table.row(i)), ref, regions);
        EXPECT_EQ(r.assignment, toy.forest.route(toy.table.row(i))) << i;
        EXPECT_NEAR(r.objective, 0.0, 1e-12);
        EXPECT_EQ(r.ties.size(), 1u);
    }
}

TEST(Ilp, CounterexampleHasTwoTiedOptima) {
    // Binary features, one tree per feature, training points (0,0), (1,1).
    Schema s({{"x1", ColumnKind::Continuous, {}}, {"x2", ColumnKind::Continuous, {}}});
    Table t(s, {0, 0, 1, 1});
    auto f = Forest::from_trees(t, {fixtures::stump(0, 0.5), fixtures::stump(1, 0.5)});
    Eigen::VectorXd k(2);
    k << 0.5, 0.5;
    auto r = ilp_decode_exact(k, f, t);
    ASSERT_EQ(r.ties.size(), 2u);
    EXPECT_NEAR(r.objective, 0.0, 1e-12);
    EXPECT_EQ(r.ties[0].leaves, (std::vector<std::uint32_t>{0, 1}));
    EXPECT_EQ(r.ties[1].leaves, (std::vector<std::uint32_t>{1, 0}));
    EXPECT_EQ(r.assignment, r.ties[0]);
}

TEST(Ilp, InfeasibleRegionsAreRejected) {
    auto t = fixtures::continuous_table(1, {0.0, 1.0});
    auto f = Forest::from_trees(t, {Tree({Node::make_leaf(0)}), Tree({Node::make_leaf(0)})});
    Region lo = Region::full(f.schema(), f.feature_ranges()), hi = lo;
    lo[0].hi = 0.5;
    lo[0].hi_closed = false;
    hi[0].lo = 0.5;
    LeafRegions fabricated({{lo}, {hi}});
    Eigen::VectorXd k = Eigen::VectorXd::Constant(2, 0.5);
    EXPECT_THROW(ilp_decode_exact(k, KernelReference(f, t), fabricated), Error);
}

TEST(Ilp, OversizedInstanceIsRejected) {
    auto t = fixtures::uniform_table(400, 2, 2);
    auto f = fit_completely_random(t, params(10, 2));
    Eigen::VectorXd k = Eigen::VectorXd::Constant(400, 1.0 / 400);
    try {
        ilp_decode_exact(k, f, t);
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("lasso"), std::string::npos);
    }
}

TEST(Ilp, ExactObjectiveDominatesLassoAndGreedy) {
    auto toy = injective_toy();
    KernelReference ref(toy.forest, toy.table);
    LeafRegions regions(toy.forest);
    Rng rng(3);
    for (std::size_t i = 0; i < 20; ++i) {
        Eigen::VectorXd k = kernel_row(ref, toy.table.row(i));
        for (Eigen::Index j = 0; j < k.size(); ++j) k(j) += 0.05 * rng.uniform();
        auto exact = ilp_decode_exact(k, ref, regions);
        auto pr = reduce_problem(k, ref, 100);
        auto fz = exclusive_lasso(pr.cols, pr.y, 1e-4, pr.tree);
        fz.leaf = pr.leaf;
        auto g = greedy_leaf_assign(lasso_scores(fz, regions), regions, i);
        EXPECT_LE(exact.objective, ilp_objective(k, ref, g.assignment) + 1e-12);
        EXPECT_NEAR(exact.objective, ilp_objective(k, ref, exact.assignment), 1e-9);
        LeafScores random(3);
        for (std::size_t b = 0; b < 3; ++b)
            for (std::size_t l = 0; l < regions.leaves(b); ++l) random[b].push_back(rng.uniform());
        auto gr = greedy_leaf_assign(random, regions, i);
        EXPECT_LE(exact.objective, ilp_objective(k, ref, gr.assignment) + 1e-12);
    }
}
