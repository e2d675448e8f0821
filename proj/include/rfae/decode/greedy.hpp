#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "rfae/core.hpp"
#include "rfae/forest.hpp"
#include "rfae/region.hpp"

namespace rfae {

/// Fuzzy leaf scores, one vector per tree indexed by local leaf id.
using LeafScores = std::vector<std::vector<double>>;

/// Adjacency over trees as bitsets packed into 64-bit words.
class TreeGraph {
public:
    explicit TreeGraph(std::size_t n) : n_(n), words_((n + 63) / 64), adj_(n * words_, 0) {}

    std::size_t size() const { return n_; }
    void connect(std::size_t a, std::size_t b) {
        set(a, b);
        set(b, a);
    }
    bool adjacent(std::size_t a, std::size_t b) const { return (adj_[a * words_ + b / 64] >> (b % 64)) & 1u; }
    bool complete() const {
        for (std::size_t a = 0; a < n_; ++a)
            for (std::size_t b = a + 1; b < n_; ++b)
                if (!adjacent(a, b)) return false;
        return true;
    }

private:
    void set(std::size_t a, std::size_t b) { adj_[a * words_ + b / 64] |= std::uint64_t{1} << (b % 64); }

    std::size_t n_, words_;
    std::vector<std::uint64_t> adj_;
};

struct CliqueEnumeration {
    std::vector<std::vector<std::size_t>> cliques;  // each sorted ascending
    bool truncated = false;
};

/// Maximal cliques by Bron-Kerbosch with pivoting, stopping after `cap`.
inline CliqueEnumeration maximal_cliques(const TreeGraph& g, std::size_t cap = 10000) {
    CliqueEnumeration out;
    std::vector<std::size_t> r;
    auto neighbours = [&](std::size_t v, const std::vector<std::size_t>& s) {
        std::vector<std::size_t> o;
        for (auto u : s)
            if (u != v && g.adjacent(u, v)) o.push_back(u);
        return o;
    };
    auto rec = [&](auto&& self, std::vector<std::size_t> p, std::vector<std::size_t> x) -> void {
        if (out.truncated) return;
        if (p.empty() && x.empty()) {
            if (out.cliques.size() >= cap) {
                out.truncated = true;
                return;
            }
            auto c = r;
            std::sort(c.begin(), c.end());
            out.cliques.push_back(std::move(c));
            return;
        }
        // Pivot with the most neighbours in P.
        std::size_t pivot = p.empty() ? x.front() : p.front(), best = 0;
        for (const auto* set : {&p, &x})
            for (auto u : *set) {
                std::size_t c = 0;
                for (auto v : p) c += (v != u && g.adjacent(u, v)) ? 1 : 0;
                if (c > best || (c == best && u < pivot)) {
                    best = c;
                    pivot = u;
                }
            }
        std::vector<std::size_t> todo;
        for (auto v : p)
            if (v != pivot && !g.adjacent(v, pivot)) todo.push_back(v);
        if (std::find(p.begin(), p.end(), pivot) != p.end()) todo.insert(todo.begin(), pivot);
        for (auto v : todo) {
            r.push_back(v);
            self(self, neighbours(v, p), neighbours(v, x));
            r.pop_back();
            p.erase(std::find(p.begin(), p.end(), v));
            x.push_back(v);
        }
    };
    std::vector<std::size_t> all(g.size());
    std::iota(all.begin(), all.end(), 0);
    rec(rec, all, {});
    std::sort(out.cliques.begin(), out.cliques.end());
    return out;
}

struct GreedyResult {
    LeafAssignment assignment;
    Region region;              // intersection of the assigned leaf regions, non-empty
    std::size_t rounds = 0;
    std::size_t repaired = 0;   // trees whose final leaf is not their unconstrained argmax
    bool random_clique = false; // a round had to pick among disjoint maximal cliques
};

/// Hard, mutually consistent leaf assignment from fuzzy scores.
///
/// Each round assigns every tree its best-scoring leaf among those meeting
/// the feasible region S. If the assigned regions share a common point the
/// search stops. Otherwise a maximal clique of the overlap graph is chosen
/// (the unique one, else the intersection of all of them, else one at
/// random) and its members are folded into S in score order while S stays
/// non-empty. Trees already folded in are always adjacent to every other
/// tree, so each round adds at least one tree and at most B + 1 rounds run.
inline GreedyResult greedy_leaf_assign(const LeafScores& p, const LeafRegions& regions, std::uint64_t seed) {
    const std::size_t B = regions.trees();
    if (p.size() != B) throw Error("decode", "fuzzy scores must cover every tree");
    for (std::size_t b = 0; b < B; ++b)
        if (p[b].size() != regions.leaves(b)) throw Error("decode", "fuzzy score vector has the wrong leaf count");

    Rng rng(seed);
    GreedyResult res;
    std::vector<std::uint32_t> q(B, 0), first(B, 0);
    std::vector<bool> in_c(B, false), have_prev(B, false);
    Region S = regions(0, 0);
    bool unconstrained = true;

    for (;;) {
        ++res.rounds;
        for (std::size_t b = 0; b < B; ++b) {
            double best = -std::numeric_limits<double>::infinity();
            std::vector<std::uint32_t> ties;
            for (std::size_t l = 0; l < p[b].size(); ++l) {
                if (!unconstrained && !regions(b, l).intersects(S)) continue;
                const double v = p[b][l];
                if (v > best) {
                    best = v;
                    ties.assign(1, static_cast<std::uint32_t>(l));
                } else if (v == best) {
                    ties.push_back(static_cast<std::uint32_t>(l));
                }
            }
            if (ties.empty()) throw Error("decode", "no leaf of tree " + std::to_string(b) + " meets the feasible region");
            if (have_prev[b] && std::find(ties.begin(), ties.end(), q[b]) != ties.end()) continue;
            q[b] = ties.size() == 1 ? ties[0] : ties[rng.index(ties.size())];
            have_prev[b] = true;
            if (res.rounds == 1) first[b] = q[b];
        }

        Region all = regions(0, q[0]);
        for (std::size_t b = 1; b < B; ++b) all.intersect(regions(b, q[b]));
        if (!all.empty()) {
            res.region = std::move(all);
            break;
        }

        TreeGraph g(B);
        for (std::size_t a = 0; a < B; ++a)
            for (std::size_t b = a + 1; b < B; ++b)
                if (in_c[a] || in_c[b] || regions(a, q[a]).intersects(regions(b, q[b]))) g.connect(a, b);

        const auto cl = maximal_cliques(g);
        std::vector<std::size_t> chosen;
        if (cl.cliques.size() == 1 && !cl.truncated) {
            chosen = cl.cliques[0];
        } else {
            std::vector<bool> common(B, true);
            for (const auto& c : cl.cliques) {
                std::vector<bool> m(B, false);
                for (auto v : c) m[v] = true;
                for (std::size_t b = 0; b < B; ++b) common[b] = common[b] && m[b];
            }
            bool grows = false;
            for (std::size_t b = 0; b < B; ++b) {
                if (common[b]) chosen.push_back(b);
                grows = grows || (common[b] && !in_c[b]);
            }
            if (!grows) {
                chosen = cl.cliques[rng.index(cl.cliques.size())];
                res.random_clique = true;
            }
        }

        std::vector<std::size_t> add;
        for (auto b : chosen)
            if (!in_c[b]) add.push_back(b);
        std::stable_sort(add.begin(), add.end(), [&](std::size_t a, std::size_t b) { return p[a][q[a]] > p[b][q[b]]; });
        std::size_t added = 0;
        for (auto b : add) {
            const Region& r = regions(b, q[b]);
            if (unconstrained) {
                S = r;
                unconstrained = false;
            } else if (r.intersects(S)) {
                S.intersect(r);
            } else {
                continue;
            }
            in_c[b] = true;
            ++added;
        }
        if (added == 0) throw Error("decode", "greedy leaf assignment made no progress");
    }

    res.assignment.leaves = q;
    for (std::size_t b = 0; b < B; ++b) res.repaired += q[b] != first[b] ? 1 : 0;
    return res;
}

inline GreedyResult greedy_leaf_assign(const LeafScores& p, const Forest& forest, std::uint64_t seed) {
    return greedy_leaf_assign(p, LeafRegions(forest), seed);
}

/// One-hot scores for a hard assignment.
inline LeafScores one_hot_scores(const LeafAssignment& a, const LeafRegions& regions) {
    LeafScores p(regions.trees());
    for (std::size_t b = 0; b < p.size(); ++b) {
        p[b].assign(regions.leaves(b), 0.0);
        p[b][a.leaves[b]] = 1.0;
    }
    return p;
}

}  // namespace rfae
