#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <queue>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "rfae/core.hpp"

namespace rfae {

/// Exact k-nearest-neighbour search over the rows of a dense matrix.
/// Uses a kd-tree for low dimension and a linear scan otherwise. Results are
/// ordered by (distance, row index).
class KdTree {
public:
    static constexpr std::size_t leaf_size = 8;
    static constexpr Eigen::Index max_tree_dim = 12;

    KdTree() = default;

    explicit KdTree(Eigen::MatrixXd points) : pts_(std::move(points)) {
        idx_.resize(static_cast<std::size_t>(pts_.rows()));
        std::iota(idx_.begin(), idx_.end(), 0u);
        if (pts_.cols() <= max_tree_dim && pts_.rows() > static_cast<Eigen::Index>(leaf_size)) build(0, idx_.size());
    }

    std::size_t size() const { return idx_.size(); }
    Eigen::Index dim() const { return pts_.cols(); }
    const Eigen::MatrixXd& points() const { return pts_; }

    /// (squared distance, row) pairs, nearest first.
    std::vector<std::pair<double, std::uint32_t>> query(const Eigen::Ref<const Eigen::RowVectorXd>& q, std::size_t k) const {
        if (k == 0 || k > size()) throw Error("decode", "k must lie in [1, n]");
        if (q.size() != pts_.cols()) throw Error("decode", "query dimension does not match the embedding");
        Heap heap;
        if (nodes_.empty()) {
            for (std::size_t i = 0; i < idx_.size(); ++i) offer(heap, k, dist2(q, idx_[i]), idx_[i]);
        } else {
            search(0, q, k, heap);
        }
        std::vector<std::pair<double, std::uint32_t>> out;
        out.reserve(heap.size());
        while (!heap.empty()) {
            out.push_back(heap.top());
            heap.pop();
        }
        std::reverse(out.begin(), out.end());
        return out;
    }

private:
    using Entry = std::pair<double, std::uint32_t>;
    // Max-heap on (distance, index): the top is the current worst neighbour.
    using Heap = std::priority_queue<Entry>;

    struct KdNode {
        std::size_t begin = 0, end = 0;
        Eigen::Index axis = -1;  // -1: leaf
        double split = 0.0;
        int left = -1, right = -1;
    };

    double dist2(const Eigen::Ref<const Eigen::RowVectorXd>& q, std::uint32_t i) const {
        return (pts_.row(i) - q).squaredNorm();
    }

    static void offer(Heap& heap, std::size_t k, double d, std::uint32_t i) {
        if (heap.size() < k) {
            heap.push({d, i});
        } else if (Entry{d, i} < heap.top()) {
            heap.pop();
            heap.push({d, i});
        }
    }

    int build(std::size_t begin, std::size_t end) {
        const int me = static_cast<int>(nodes_.size());
        nodes_.push_back({begin, end});
        if (end - begin <= leaf_size) return me;
        Eigen::RowVectorXd lo = pts_.row(idx_[begin]), hi = lo;
        for (std::size_t p = begin + 1; p < end; ++p) {
            lo = lo.cwiseMin(pts_.row(idx_[p]));
            hi = hi.cwiseMax(pts_.row(idx_[p]));
        }
        Eigen::Index axis;
        const double spread = (hi - lo).maxCoeff(&axis);
        if (spread <= 0.0) return me;
        const std::size_t mid = begin + (end - begin) / 2;
        std::nth_element(idx_.begin() + static_cast<std::ptrdiff_t>(begin), idx_.begin() + static_cast<std::ptrdiff_t>(mid),
                         idx_.begin() + static_cast<std::ptrdiff_t>(end),
                         [&](std::uint32_t a, std::uint32_t b) { return pts_(a, axis) < pts_(b, axis); });
        const double split = pts_(idx_[mid], axis);
        const int l = build(begin, mid);
        const int r = build(mid, end);
        nodes_[static_cast<std::size_t>(me)].axis = axis;
        nodes_[static_cast<std::size_t>(me)].split = split;
        nodes_[static_cast<std::size_t>(me)].left = l;
        nodes_[static_cast<std::size_t>(me)].right = r;
        return me;
    }

    void search(int node, const Eigen::Ref<const Eigen::RowVectorXd>& q, std::size_t k, Heap& heap) const {
        const KdNode& nd = nodes_[static_cast<std::size_t>(node)];
        if (nd.axis < 0) {
            for (std::size_t p = nd.begin; p < nd.end; ++p) offer(heap, k, dist2(q, idx_[p]), idx_[p]);
            return;
        }
        const double diff = q(nd.axis) - nd.split;
        const int near = diff < 0 ? nd.left : nd.right;
        const int far = diff < 0 ? nd.right : nd.left;
        search(near, q, k, heap);
        // <= keeps equal-distance candidates with smaller indices reachable.
        if (heap.size() < k || diff * diff <= heap.top().first) search(far, q, k, heap);
    }

    Eigen::MatrixXd pts_;
    std::vector<std::uint32_t> idx_;
    std::vector<KdNode> nodes_;
};

}  // namespace rfae
