#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "rfae/core.hpp"
#include "rfae/forest.hpp"
#include "rfae/kernel.hpp"
#include "rfae/region.hpp"

namespace rfae {

struct IlpResult {
    LeafAssignment assignment;          // lexicographically first optimum
    double objective = 0.0;
    std::vector<LeafAssignment> ties;   // every optimum, including `assignment`
    std::size_t explored = 0;           // complete feasible assignments scored
};

constexpr double ilp_max_combinations = 1e6;
constexpr double ilp_tie_tolerance = 1e-12;

/// L1 objective sum_i |B khat_i - sum_b 1{leaf_b(i) = a_b} / count_b(a_b)|.
inline double ilp_objective(const Eigen::VectorXd& khat, const KernelReference& ref, const LeafAssignment& a) {
    const double B = static_cast<double>(ref.forest().size());
    double total = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i)
        total += std::abs(B * khat(static_cast<Eigen::Index>(i)) - B * ref.value(a.leaves, i));
    return total;
}

/// Exact minimizer of the L1 objective over one leaf per tree with a
/// non-empty joint region, by depth-first enumeration that abandons any
/// prefix whose regions no longer intersect.
inline IlpResult ilp_decode_exact(const Eigen::VectorXd& khat, const KernelReference& ref, const LeafRegions& regions) {
    const Forest& forest = ref.forest();
    const std::size_t B = forest.size(), n = ref.size();
    if (static_cast<std::size_t>(khat.size()) != n) throw Error("decode", "kernel row length does not match the reference");
    if (regions.trees() != B) throw Error("decode", "leaf regions do not match the forest");
    double combos = 1.0;
    for (std::size_t b = 0; b < B; ++b) combos *= static_cast<double>(regions.leaves(b));
    if (combos > ilp_max_combinations)
        throw Error("decode", "exact decoding needs at most 1e6 leaf combinations; this forest has " +
                                  std::to_string(static_cast<long double>(combos)) + ". Use the lasso decoder instead");

    const double Bd = static_cast<double>(B);
    std::vector<double> fit(n, 0.0);
    std::vector<std::uint32_t> cur(B, 0);
    std::vector<Region> prefix(B + 1);
    IlpResult res;
    res.objective = std::numeric_limits<double>::infinity();

    auto rec = [&](auto&& self, std::size_t b) -> void {
        if (b == B) {
            ++res.explored;
            double obj = 0.0;
            for (std::size_t i = 0; i < n; ++i) obj += std::abs(Bd * khat(static_cast<Eigen::Index>(i)) - fit[i]);
            if (obj < res.objective - ilp_tie_tolerance) {
                res.objective = obj;
                res.ties.clear();
            }
            if (obj <= res.objective + ilp_tie_tolerance) res.ties.push_back({cur});
            return;
        }
        for (std::size_t l = 0; l < regions.leaves(b); ++l) {
            Region r = b == 0 ? regions(0, l) : prefix[b];
            if (b > 0) r.intersect(regions(b, l));
            if (r.empty()) continue;
            prefix[b + 1] = std::move(r);
            cur[b] = static_cast<std::uint32_t>(l);
            const std::size_t c = ref.count(b, l);
            const double s = c ? 1.0 / static_cast<double>(c) : 0.0;
            for (auto i : ref.members(b, l)) fit[i] += s;
            self(self, b + 1);
            for (auto i : ref.members(b, l)) fit[i] -= s;
        }
    };
    if (B == 0) throw Error("decode", "empty forest");
    rec(rec, 0);
    if (res.ties.empty()) throw Error("decode", "no leaf combination has a non-empty joint region");
    res.assignment = res.ties.front();
    return res;
}

inline IlpResult ilp_decode_exact(const Eigen::VectorXd& khat, const Forest& forest, const Table& reference) {
    return ilp_decode_exact(khat, KernelReference(forest, reference), LeafRegions(forest));
}

}  // namespace rfae
