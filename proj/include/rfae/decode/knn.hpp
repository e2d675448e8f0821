#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "rfae/core.hpp"
#include "rfae/data.hpp"
#include "rfae/decode/synthetic.hpp"
#include "rfae/kdtree.hpp"
#include "rfae/spectral.hpp"

namespace rfae {

/// k nearest training embeddings, ascending by distance, with inverse
/// distance weights summing to 1.
struct NeighborSet {
    std::vector<std::uint32_t> indices;
    std::vector<double> distances;
    std::vector<double> weights;
};

constexpr double knn_epsilon = 1e-12;

/// Weights proportional to 1/(d + eps). When some distances are exactly
/// zero, those neighbours share all the weight equally.
inline std::vector<double> inverse_distance_weights(const std::vector<double>& dist) {
    std::vector<double> w(dist.size(), 0.0);
    std::size_t zeros = 0;
    for (double d : dist) zeros += d == 0.0 ? 1 : 0;
    if (zeros > 0) {
        for (std::size_t i = 0; i < dist.size(); ++i)
            if (dist[i] == 0.0) w[i] = 1.0 / static_cast<double>(zeros);
        return w;
    }
    double total = 0.0;
    for (std::size_t i = 0; i < dist.size(); ++i) total += (w[i] = 1.0 / (dist[i] + knn_epsilon));
    for (auto& v : w) v /= total;
    return w;
}

inline NeighborSet knn_neighbors(const KdTree& index, const Eigen::Ref<const Eigen::RowVectorXd>& z0, std::size_t k) {
    NeighborSet s;
    for (const auto& [d2, i] : index.query(z0, k)) {
        s.indices.push_back(i);
        s.distances.push_back(std::sqrt(d2));
    }
    s.weights = inverse_distance_weights(s.distances);
    return s;
}

inline NeighborSet knn_neighbors(const Eigen::Ref<const Eigen::RowVectorXd>& z0, const Embedding& Z, std::size_t k) {
    return knn_neighbors(KdTree(Z), z0, k);
}

struct KnnTrace {
    std::vector<NeighborSet> neighbors;
};

/// Continuous columns: weighted mean of the neighbours' synthetic values.
/// Categorical columns: level with the largest summed weight; ties are
/// broken uniformly at random with a per-row stream of `seed`.
inline Table knn_decode(const Embedding& Z0, const SpectralModel& model, const SyntheticTrainingSet& synth, std::size_t k,
                        std::uint64_t seed, std::size_t jobs = 1, KnnTrace* trace = nullptr) {
    const Table& X = synth.x;
    if (X.rows() != model.n) throw Error("decode", "synthetic training set size does not match the model");
    if (k == 0 || k > model.n) throw Error("decode", "k must lie in [1, n]");
    if (static_cast<std::size_t>(Z0.cols()) != model.dz()) throw Error("decode", "embedding width does not match d_Z");
    const KdTree index(model.Z);
    const std::size_t m = static_cast<std::size_t>(Z0.rows()), d = X.cols();
    std::vector<double> cells(m * d);
    std::vector<NeighborSet> sets(trace ? m : 0);
    parallel_for(m, jobs, [&](std::size_t r) {
        NeighborSet nb = knn_neighbors(index, Z0.row(static_cast<Eigen::Index>(r)), k);
        Rng rng(derive_seed(seed, r));
        for (std::size_t j = 0; j < d; ++j) {
            const Column& col = X.schema()[j];
            double out = 0.0;
            if (!col.categorical()) {
                for (std::size_t q = 0; q < nb.indices.size(); ++q) out += nb.weights[q] * X(nb.indices[q], j);
            } else {
                std::vector<double> votes(col.levels.size(), 0.0);
                for (std::size_t q = 0; q < nb.indices.size(); ++q)
                    votes[static_cast<std::size_t>(X(nb.indices[q], j))] += nb.weights[q];
                const double best = *std::max_element(votes.begin(), votes.end());
                std::vector<std::size_t> tied;
                for (std::size_t l = 0; l < votes.size(); ++l)
                    if (votes[l] >= best - 1e-12) tied.push_back(l);
                out = static_cast<double>(tied.size() == 1 ? tied[0] : tied[rng.index(tied.size())]);
            }
            cells[r * d + j] = out;
        }
        if (trace) sets[r] = std::move(nb);
    });
    if (trace) trace->neighbors = std::move(sets);
    return Table(X.schema(), std::move(cells));
}

}  // namespace rfae
