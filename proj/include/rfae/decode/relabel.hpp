#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
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

/// Axis-aligned split in embedding space. With dim < 0 every point goes to
/// the side given by `constant_left`.
struct LatentSplit {
    int dim = -1;
    double threshold = 0.0;
    bool left_below = true;  // left when z[dim] < threshold, else left when z[dim] >= threshold
    bool constant_left = true;
    double smc = 1.0;        // agreement with the original split on the synthetic points

    bool constant() const { return dim < 0; }
    bool goes_left(const Eigen::Ref<const Eigen::RowVectorXd>& z) const {
        if (constant()) return constant_left;
        return (z(dim) < threshold) == left_below;
    }
};

/// Best (dimension, midpoint threshold, orientation) by simple matching
/// coefficient on points `idx` of `Z` with binary targets `left`.
inline LatentSplit best_latent_split(const Eigen::MatrixXd& Z, const std::vector<std::uint32_t>& idx,
                                     const std::vector<std::uint8_t>& left) {
    LatentSplit best;
    const std::size_t m = idx.size();
    std::size_t n_left = 0;
    for (auto i : idx) n_left += left[i];
    best.constant_left = 2 * n_left >= m;
    best.smc = m ? static_cast<double>(std::max(n_left, m - n_left)) / static_cast<double>(m) : 1.0;
    if (m == 0 || n_left == 0 || n_left == m) return best;

    std::size_t best_hits = 0;
    bool found = false;
    std::vector<std::uint32_t> order(idx);
    for (Eigen::Index k = 0; k < Z.cols(); ++k) {
        std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) { return Z(a, k) < Z(b, k); });
        std::size_t left_below = 0;
        for (std::size_t p = 1; p < m; ++p) {
            left_below += left[order[p - 1]];
            const double lo = Z(order[p - 1], k), hi = Z(order[p], k);
            if (!(lo < hi)) continue;
            // below = first p points; orientation A: below goes left.
            const std::size_t hits_a = left_below + ((m - p) - (n_left - left_below));
            const std::size_t hits_b = m - hits_a;
            const std::size_t hits = std::max(hits_a, hits_b);
            if (!found || hits > best_hits) {
                found = true;
                best_hits = hits;
                best.dim = static_cast<int>(k);
                best.threshold = lo + (hi - lo) / 2;
                best.left_below = hits_a >= hits_b;
            }
        }
    }
    if (found) best.smc = static_cast<double>(best_hits) / static_cast<double>(m);
    return best;
}

/// A forest with the topology of the original and embedding-space splits.
struct RelabeledForest {
    std::vector<std::vector<LatentSplit>> splits;  // per tree, indexed like the original nodes
    std::size_t degenerate = 0;                    // nodes given a constant split

    LeafAssignment route(const Forest& original, const Eigen::Ref<const Eigen::RowVectorXd>& z) const {
        LeafAssignment a;
        a.leaves.resize(original.size());
        for (std::size_t b = 0; b < original.size(); ++b) {
            const auto& nodes = original.tree(b).nodes();
            std::size_t i = 0;
            while (!nodes[i].is_leaf())
                i = static_cast<std::size_t>(splits[b][i].goes_left(z) ? nodes[i].left : nodes[i].right);
            a.leaves[b] = static_cast<std::uint32_t>(nodes[i].leaf);
        }
        return a;
    }
};

/// Relabels every internal node. For each tree, `n_synth` points are drawn
/// uniformly from each internal node's region into one pool, which is
/// embedded with the cross kernel and the Nystrom formula. A node's split is
/// then learned from every pooled point that reaches it.
inline RelabeledForest relabel_forest(const KernelReference& ref, const SpectralModel& model, std::size_t n_synth,
                                      std::uint64_t seed, std::size_t jobs = 1) {
    const Forest& forest = ref.forest();
    if (ref.size() != model.n) throw Error("decode", "reference size does not match the model");
    if (n_synth == 0) throw Error("decode", "n_synth must be positive");
    const std::size_t B = forest.size();
    RelabeledForest out;
    out.splits.resize(B);
    std::vector<std::size_t> degenerate(B, 0);

    parallel_for(B, jobs, [&](std::size_t b) {
        const auto& nodes = forest.tree(b).nodes();
        std::vector<Region> region(nodes.size());
        region[0] = Region::full(forest.schema(), forest.feature_ranges());
        std::vector<std::size_t> stack{0};
        while (!stack.empty()) {
            const std::size_t i = stack.back();
            stack.pop_back();
            if (nodes[i].is_leaf()) continue;
            Region l = region[i], r = region[i];
            Forest::apply_split(nodes[i].split, l, r);
            region[static_cast<std::size_t>(nodes[i].left)] = std::move(l);
            region[static_cast<std::size_t>(nodes[i].right)] = std::move(r);
            stack.push_back(static_cast<std::size_t>(nodes[i].left));
            stack.push_back(static_cast<std::size_t>(nodes[i].right));
        }
        Rng rng(derive_seed(seed, b));
        std::vector<double> cells;
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            if (nodes[i].is_leaf()) continue;
            for (std::size_t s = 0; s < n_synth; ++s) {
                const auto x = region_sample(region[i], rng);
                cells.insert(cells.end(), x.begin(), x.end());
            }
        }
        auto& splits = out.splits[b];
        splits.assign(nodes.size(), LatentSplit{});
        if (cells.empty()) return;
        const Table pool(forest.schema(), std::move(cells));
        const Eigen::MatrixXd Zp = nystrom_embed(ref.cross(pool), model);

        std::vector<std::vector<std::uint32_t>> bucket(nodes.size());
        std::vector<std::uint8_t> left(pool.rows(), 0);
        std::vector<std::vector<std::uint8_t>> target(nodes.size());
        for (std::size_t p = 0; p < pool.rows(); ++p) {
            std::size_t i = 0;
            const auto x = pool.row(p);
            while (!nodes[i].is_leaf()) {
                bucket[i].push_back(static_cast<std::uint32_t>(p));
                const bool l = nodes[i].split.goes_left(x);
                target[i].push_back(l);
                i = static_cast<std::size_t>(l ? nodes[i].left : nodes[i].right);
            }
        }
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            if (nodes[i].is_leaf()) continue;
            for (std::size_t q = 0; q < bucket[i].size(); ++q) left[bucket[i][q]] = target[i][q];
            LatentSplit s = best_latent_split(Zp, bucket[i], left);
            if (s.constant()) {
                ++degenerate[b];
                if (bucket[i].empty())
                    s.constant_left = nodes[static_cast<std::size_t>(nodes[i].left)].count >=
                                      nodes[static_cast<std::size_t>(nodes[i].right)].count;
            }
            splits[i] = s;
        }
    });
    for (auto c : degenerate) out.degenerate += c;
    return out;
}

struct RelabelRowTrace {
    LeafAssignment routed;
    LeafAssignment assigned;  // after any repair
    bool fallback = false;
    std::size_t repaired = 0;
};

/// Routes each embedding through the relabeled trees and samples the
/// intersection of the original leaf regions. An empty intersection is
/// repaired by greedy leaf assignment started from the routed leaves.
inline Table relabel_decode(const RelabeledForest& relabeled, const Forest& original, const LeafRegions& regions,
                            const Embedding& Z0, std::uint64_t seed, std::size_t jobs = 1,
                            std::vector<RelabelRowTrace>* trace = nullptr) {
    const std::size_t m = static_cast<std::size_t>(Z0.rows()), d = original.schema().size();
    if (relabeled.splits.size() != original.size()) throw Error("decode", "relabeled forest does not match the original");
    std::vector<double> cells(m * d);
    std::vector<RelabelRowTrace> rows(trace ? m : 0);
    parallel_for(m, jobs, [&](std::size_t r) {
        RelabelRowTrace t;
        t.routed = relabeled.route(original, Z0.row(static_cast<Eigen::Index>(r)));
        t.assigned = t.routed;
        Region region = regions.intersect(t.routed);
        if (region.empty()) {
            t.fallback = true;
            GreedyResult g = greedy_leaf_assign(one_hot_scores(t.routed, regions), regions, derive_seed(seed, 2 * r));
            t.repaired = g.repaired;
            t.assigned = g.assignment;
            region = std::move(g.region);
        }
        Rng rng(derive_seed(seed, 2 * r + 1));
        const auto x = region_sample(region, rng);
        std::copy(x.begin(), x.end(), cells.begin() + static_cast<std::ptrdiff_t>(r * d));
        if (trace) rows[r] = std::move(t);
    });
    if (trace) *trace = std::move(rows);
    return Table(original.schema(), std::move(cells));
}

}  // namespace rfae
