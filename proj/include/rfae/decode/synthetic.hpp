#pragma once

#include <cstdint>
#include <vector>

#include "rfae/core.hpp"
#include "rfae/data.hpp"
#include "rfae/forest.hpp"
#include "rfae/region.hpp"

namespace rfae {

/// Row i is a uniform draw from the intersection of training row i's leaf
/// regions, so it routes to exactly the same leaves.
struct SyntheticTrainingSet {
    Table x;
    std::uint64_t seed = 0;
};

inline SyntheticTrainingSet build_synthetic_training(const Forest& forest, const LeafRegions& regions, const Table& table,
                                                     std::uint64_t seed, std::size_t jobs = 1) {
    const std::size_t n = table.rows(), d = table.cols();
    std::vector<double> cells(n * d);
    parallel_for(n, jobs, [&](std::size_t i) {
        const Region r = regions.intersect(forest.route(table.row(i)));
        if (r.empty()) throw Error("decode", "training row " + std::to_string(i) + " has an empty leaf intersection");
        Rng rng(derive_seed(seed, i));
        const auto x = region_sample(r, rng);
        std::copy(x.begin(), x.end(), cells.begin() + static_cast<std::ptrdiff_t>(i * d));
    });
    return {Table(table.schema(), std::move(cells)), seed};
}

inline SyntheticTrainingSet build_synthetic_training(const Forest& forest, const Table& table, std::uint64_t seed,
                                                     std::size_t jobs = 1) {
    return build_synthetic_training(forest, LeafRegions(forest), table, seed, jobs);
}

}  // namespace rfae
