#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "rfae/data.hpp"
#include "rfae/forest.hpp"

namespace fixtures {

inline rfae::Schema continuous_schema(std::size_t d) {
    std::vector<rfae::Column> cols;
    for (std::size_t j = 0; j < d; ++j) cols.push_back({"x" + std::to_string(j + 1), rfae::ColumnKind::Continuous, {}});
    return rfae::Schema(cols);
}

inline rfae::Table continuous_table(std::size_t d, std::vector<double> cells) {
    return rfae::Table(continuous_schema(d), std::move(cells));
}

// Four corners of the unit square, p1..p4 = (.2,.2) (.2,.8) (.8,.2) (.8,.8).
inline rfae::Table t2x4_table() { return continuous_table(2, {0.2, 0.2, 0.2, 0.8, 0.8, 0.2, 0.8, 0.8}); }

inline rfae::Tree stump(std::size_t feature, double threshold) {
    using rfae::Node;
    return rfae::Tree({Node::internal(rfae::SplitRule::less_than(feature, threshold), 1, 2), Node::make_leaf(0),
                       Node::make_leaf(1)});
}

// Tree 1 splits x1 < 0.5 (A = {p1,p2}, B = {p3,p4}); tree 2 splits x2 < 0.5
// (C = {p1,p3}, D = {p2,p4}).
inline rfae::Forest t2x4_forest() {
    return rfae::Forest::from_trees(t2x4_table(), {stump(0, 0.5), stump(1, 0.5)});
}

inline const std::vector<std::vector<double>>& t2x4_kernel() {
    static const std::vector<std::vector<double>> k{
        {.5, .25, .25, 0}, {.25, .5, 0, .25}, {.25, 0, .5, .25}, {0, .25, .25, .5}};
    return k;
}

// Isotropic Gaussian blobs in d dimensions; labels are blob indices.
struct Blobs {
    rfae::Table table;
    std::vector<double> labels;
};

inline Blobs blobs(std::size_t n, std::size_t d, const std::vector<std::vector<double>>& centers, double sd,
                   std::uint64_t seed) {
    rfae::Rng rng(seed);
    std::vector<double> cells, labels;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = i % centers.size();
        for (std::size_t j = 0; j < d; ++j) cells.push_back(centers[c][j] + sd * rng.normal());
        labels.push_back(static_cast<double>(c));
    }
    return {continuous_table(d, std::move(cells)), std::move(labels)};
}

inline Blobs two_blobs(std::size_t n, std::size_t d, double gap, std::uint64_t seed) {
    return blobs(n, d, {std::vector<double>(d, 0.0), std::vector<double>(d, gap)}, 1.0, seed);
}

inline rfae::Table uniform_table(std::size_t n, std::size_t d, std::uint64_t seed) {
    rfae::Rng rng(seed);
    std::vector<double> cells(n * d);
    for (auto& c : cells) c = rng.uniform();
    return continuous_table(d, std::move(cells));
}

}  // namespace fixtures
