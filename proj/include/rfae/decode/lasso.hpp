#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "rfae/core.hpp"
#include "rfae/data.hpp"
#include "rfae/decode/greedy.hpp"
#include "rfae/forest.hpp"
#include "rfae/kernel.hpp"
#include "rfae/region.hpp"
#include "rfae/spectral.hpp"

namespace rfae {

/// Sparse fuzzy leaf membership over a reduced leaf set.
struct FuzzyAssignment {
    std::vector<std::uint32_t> tree;    // group (tree) of each reduced column
    std::vector<std::uint32_t> leaf;    // local leaf id within its tree
    std::vector<double> values;         // in [0, 1]
    std::vector<double> objective;      // after each sweep, starting at psi = 0
    std::size_t sweeps = 0;
    bool converged = false;
};

struct LassoOptions {
    double tolerance = 1e-8;
    std::size_t max_sweeps = 10000;
};

/// Column of the reduced design: rows (neighbours) in the leaf and the leaf's
/// weight s = 1 / reference count.
struct LassoColumn {
    std::vector<std::uint32_t> rows;
    double scale = 0.0;
};

namespace detail {

inline double lasso_objective(const Eigen::VectorXd& r, const std::vector<double>& group_sum, double lambda) {
    double pen = 0.0;
    for (double g : group_sum) pen += g * g;
    return r.squaredNorm() + lambda * pen;
}

}  // namespace detail

/// Coordinate descent for
///   min_{psi in [0,1]^m} ||y - A psi||^2 + lambda * sum_g (sum_{l in g} psi_l)^2
/// with A[:, l] = scale_l on rows(l). Each update is the exact minimizer of
/// the objective in one coordinate, so the objective never increases.
inline FuzzyAssignment exclusive_lasso(const std::vector<LassoColumn>& cols, const Eigen::VectorXd& y, double lambda,
                                       const std::vector<std::uint32_t>& groups, const LassoOptions& opt = {}) {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw Error("decode", "lambda must be positive");
    if (groups.size() != cols.size()) throw Error("decode", "every column needs a group");
    if (!y.allFinite()) throw Error("decode", "kernel row has non-finite entries");
    const std::size_t m = cols.size();
    std::unordered_map<std::uint32_t, std::size_t> gidx;
    std::vector<std::size_t> g(m);
    for (std::size_t l = 0; l < m; ++l) g[l] = gidx.try_emplace(groups[l], gidx.size()).first->second;

    FuzzyAssignment out;
    out.tree = groups;
    out.values.assign(m, 0.0);
    std::vector<double> norm2(m), gsum(gidx.size(), 0.0);
    for (std::size_t l = 0; l < m; ++l) {
        for (auto i : cols[l].rows)
            if (i >= static_cast<std::size_t>(y.size())) throw Error("decode", "lasso column row out of range");
        norm2[l] = static_cast<double>(cols[l].rows.size()) * cols[l].scale * cols[l].scale;
    }
    Eigen::VectorXd r = y;
    out.objective.push_back(detail::lasso_objective(r, gsum, lambda));

    while (out.sweeps < opt.max_sweeps) {
        ++out.sweeps;
        double change = 0.0;
        for (std::size_t l = 0; l < m; ++l) {
            const double old = out.values[l], s = cols[l].scale;
            double ar = 0.0;
            for (auto i : cols[l].rows) ar += s * r(i);
            const double ar_minus = ar + norm2[l] * old;
            const double g_minus = gsum[g[l]] - old;
            const double v = std::clamp((ar_minus - lambda * g_minus) / (norm2[l] + lambda), 0.0, 1.0);
            if (v == old) continue;
            for (auto i : cols[l].rows) r(i) -= s * (v - old);
            gsum[g[l]] += v - old;
            out.values[l] = v;
            change = std::max(change, std::abs(v - old));
        }
        out.objective.push_back(detail::lasso_objective(r, gsum, lambda));
        if (change < opt.tolerance) {
            out.converged = true;
            break;
        }
    }
    return out;
}

/// Dense form: phi is the k x m 0/1 membership matrix, s the leaf weights.
inline FuzzyAssignment exclusive_lasso(const Eigen::MatrixXd& phi, const Eigen::VectorXd& s, const Eigen::VectorXd& y,
                                       double lambda, const std::vector<std::uint32_t>& groups,
                                       const LassoOptions& opt = {}) {
    if (s.size() != phi.cols() || y.size() != phi.rows()) throw Error("decode", "lasso dimensions do not agree");
    std::vector<LassoColumn> cols(static_cast<std::size_t>(phi.cols()));
    for (Eigen::Index l = 0; l < phi.cols(); ++l) {
        cols[static_cast<std::size_t>(l)].scale = s(l);
        for (Eigen::Index i = 0; i < phi.rows(); ++i)
            if (phi(i, l) != 0.0) {
                if (phi(i, l) != 1.0) throw Error("decode", "membership matrix must be 0/1");
                cols[static_cast<std::size_t>(l)].rows.push_back(static_cast<std::uint32_t>(i));
            }
    }
    return exclusive_lasso(cols, y, lambda, groups, opt);
}

struct LassoDecodeOptions {
    double lambda = 1e-4;
    std::size_t sparsity_cap = 100;
    LassoOptions solver;
    ReconstructOptions reconstruct;
};

struct LassoRowTrace {
    std::vector<std::uint32_t> neighbors;
    std::vector<double> objective;
    bool converged = false;
    GreedyResult greedy;
};

struct LassoDecodeTrace {
    std::vector<LassoRowTrace> rows;
};

/// Reduced problem for one reconstructed kernel row: the `cap` largest
/// entries by magnitude, and every leaf holding at least one of them.
struct ReducedProblem {
    std::vector<std::uint32_t> neighbors;
    Eigen::VectorXd y;  // B * khat restricted to neighbours
    std::vector<LassoColumn> cols;
    std::vector<std::uint32_t> tree, leaf;
};

inline ReducedProblem reduce_problem(const Eigen::VectorXd& khat, const KernelReference& ref, std::size_t cap) {
    const std::size_t n = static_cast<std::size_t>(khat.size());
    const std::size_t B = ref.forest().size();
    ReducedProblem pr;
    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    const std::size_t keep = std::min(cap, n);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return std::abs(khat(a)) > std::abs(khat(b)); });
    order.resize(keep);
    std::sort(order.begin(), order.end());
    pr.neighbors = order;
    pr.y.resize(static_cast<Eigen::Index>(keep));
    for (std::size_t p = 0; p < keep; ++p) pr.y(static_cast<Eigen::Index>(p)) = static_cast<double>(B) * khat(order[p]);
    for (std::size_t b = 0; b < B; ++b) {
        std::vector<std::pair<std::uint32_t, std::uint32_t>> hits;  // (leaf, position)
        for (std::size_t p = 0; p < keep; ++p) hits.push_back({ref.leaves()(order[p], b), static_cast<std::uint32_t>(p)});
        std::sort(hits.begin(), hits.end());
        for (std::size_t h = 0; h < hits.size();) {
            LassoColumn c;
            const auto l = hits[h].first;
            c.scale = 1.0 / static_cast<double>(ref.count(b, l));
            for (; h < hits.size() && hits[h].first == l; ++h) c.rows.push_back(hits[h].second);
            pr.cols.push_back(std::move(c));
            pr.tree.push_back(static_cast<std::uint32_t>(b));
            pr.leaf.push_back(l);
        }
    }
    return pr;
}

/// Scores for the greedy step. Trees whose group is all zero get a uniform
/// value over their reduced leaves.
inline LeafScores lasso_scores(const FuzzyAssignment& f, const LeafRegions& regions) {
    LeafScores p(regions.trees());
    for (std::size_t b = 0; b < p.size(); ++b) p[b].assign(regions.leaves(b), 0.0);
    std::vector<bool> active(p.size(), false);
    for (std::size_t c = 0; c < f.values.size(); ++c) {
        p[f.tree[c]][f.leaf[c]] = f.values[c];
        active[f.tree[c]] = active[f.tree[c]] || f.values[c] > 0.0;
    }
    for (std::size_t c = 0; c < f.values.size(); ++c)
        if (!active[f.tree[c]]) p[f.tree[c]][f.leaf[c]] = 1.0;
    return p;
}

/// Per row: reconstruct the kernel row, reduce, solve the exclusive lasso,
/// repair with greedy leaf assignment and sample the assigned region.
inline Table lasso_decode(const Embedding& Z0, const SpectralModel& model, const KernelReference& ref,
                          const LeafRegions& regions, const LassoDecodeOptions& opt, std::uint64_t seed,
                          std::size_t jobs = 1, LassoDecodeTrace* trace = nullptr) {
    if (ref.size() != model.n) throw Error("decode", "reference size does not match the model");
    if (!(opt.lambda > 0.0)) throw Error("decode", "lambda must be positive");
    if (opt.sparsity_cap == 0) throw Error("decode", "sparsity cap must be positive");
    const Forest& forest = ref.forest();
    const std::size_t m = static_cast<std::size_t>(Z0.rows()), d = forest.schema().size();
    std::vector<double> cells(m * d);
    std::vector<LassoRowTrace> rows(trace ? m : 0);
    parallel_for(m, jobs, [&](std::size_t r) {
        const Eigen::RowVectorXd z = Z0.row(static_cast<Eigen::Index>(r));
        const Eigen::VectorXd khat = reconstruct_kernel_row(z, model, opt.reconstruct);
        ReducedProblem pr = reduce_problem(khat, ref, opt.sparsity_cap);
        FuzzyAssignment f = exclusive_lasso(pr.cols, pr.y, opt.lambda, pr.tree, opt.solver);
        f.leaf = pr.leaf;
        GreedyResult g = greedy_leaf_assign(lasso_scores(f, regions), regions, derive_seed(seed, 2 * r));
        Rng rng(derive_seed(seed, 2 * r + 1));
        const auto x = region_sample(g.region, rng);
        std::copy(x.begin(), x.end(), cells.begin() + static_cast<std::ptrdiff_t>(r * d));
        if (trace) rows[r] = {std::move(pr.neighbors), std::move(f.objective), f.converged, std::move(g)};
    });
    if (trace) trace->rows = std::move(rows);
    return Table(forest.schema(), std::move(cells));
}

}  // namespace rfae
