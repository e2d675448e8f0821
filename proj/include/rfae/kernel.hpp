#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "rfae/core.hpp"
#include "rfae/data.hpp"
#include "rfae/forest.hpp"

namespace rfae {

/// Row-compressed kernel matrix. Columns index the reference rows.
class SparseKernelMatrix {
public:
    enum class Role { Train, Cross };

    SparseKernelMatrix() = default;
    SparseKernelMatrix(std::size_t rows, std::size_t cols, Role role, std::vector<std::size_t> row_ptr,
                       std::vector<std::uint32_t> col, std::vector<double> val)
        : rows_(rows), cols_(cols), role_(role), ptr_(std::move(row_ptr)), col_(std::move(col)), val_(std::move(val)) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    Role role() const { return role_; }
    std::size_t nonzeros() const { return val_.size(); }

    std::span<const std::uint32_t> row_cols(std::size_t i) const { return {col_.data() + ptr_[i], ptr_[i + 1] - ptr_[i]}; }
    std::span<const double> row_values(std::size_t i) const { return {val_.data() + ptr_[i], ptr_[i + 1] - ptr_[i]}; }

    double operator()(std::size_t i, std::size_t j) const {
        auto c = row_cols(i);
        auto it = std::lower_bound(c.begin(), c.end(), static_cast<std::uint32_t>(j));
        if (it == c.end() || *it != j) return 0.0;
        return val_[ptr_[i] + static_cast<std::size_t>(it - c.begin())];
    }

    /// y = K x, split into contiguous row blocks across `jobs` threads.
    void multiply(const double* x, double* y, std::size_t jobs = 1) const {
        const std::size_t blocks = std::max<std::size_t>(1, std::min(jobs == 0 ? default_jobs() : jobs, rows_));
        const std::size_t len = (rows_ + blocks - 1) / blocks;
        parallel_for(blocks, blocks, [&](std::size_t b) {
            for (std::size_t i = b * len; i < std::min(rows_, (b + 1) * len); ++i) {
                double s = 0.0;
                for (std::size_t p = ptr_[i]; p < ptr_[i + 1]; ++p) s += val_[p] * x[col_[p]];
                y[i] = s;
            }
        });
    }

    Eigen::VectorXd multiply(const Eigen::VectorXd& x) const {
        Eigen::VectorXd y(static_cast<Eigen::Index>(rows_));
        multiply(x.data(), y.data());
        return y;
    }

    /// K M for a dense n_cols x k matrix.
    Eigen::MatrixXd multiply(const Eigen::MatrixXd& m) const {
        Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows_), m.cols());
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t p = ptr_[i]; p < ptr_[i + 1]; ++p)
                out.row(static_cast<Eigen::Index>(i)) += val_[p] * m.row(col_[p]);
        return out;
    }

    std::vector<double> row_sums() const {
        std::vector<double> s(rows_, 0.0);
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t p = ptr_[i]; p < ptr_[i + 1]; ++p) s[i] += val_[p];
        return s;
    }

    std::vector<double> col_sums() const {
        std::vector<double> s(cols_, 0.0);
        for (std::size_t p = 0; p < val_.size(); ++p) s[col_[p]] += val_[p];
        return s;
    }

    Eigen::MatrixXd to_dense() const {
        Eigen::MatrixXd d = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_));
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t p = ptr_[i]; p < ptr_[i + 1]; ++p) d(static_cast<Eigen::Index>(i), col_[p]) = val_[p];
        return d;
    }

    /// Dense row i.
    Eigen::VectorXd row(std::size_t i) const {
        Eigen::VectorXd r = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cols_));
        for (std::size_t p = ptr_[i]; p < ptr_[i + 1]; ++p) r(col_[p]) = val_[p];
        return r;
    }

    /// Coordinate text: header line `rows cols nnz`, then `i j value` per entry.
    void write_coo(std::ostream& out) const {
        out << rows_ << ' ' << cols_ << ' ' << val_.size() << '\n';
        char buf[64];
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t p = ptr_[i]; p < ptr_[i + 1]; ++p) {
                std::snprintf(buf, sizeof buf, "%.17g", val_[p]);
                out << i << ' ' << col_[p] << ' ' << buf << '\n';
            }
    }

    static constexpr std::size_t dense_limit = 2000;

    void write_dense_csv(std::ostream& out) const {
        if (rows_ > dense_limit || cols_ > dense_limit) throw Error("kernel", "dense export is limited to 2000 x 2000");
        char buf[64];
        for (std::size_t i = 0; i < rows_; ++i) {
            std::size_t p = ptr_[i];
            for (std::size_t j = 0; j < cols_; ++j) {
                double v = 0.0;
                if (p < ptr_[i + 1] && col_[p] == j) v = val_[p++];
                std::snprintf(buf, sizeof buf, "%.17g", v);
                out << (j ? "," : "") << buf;
            }
            out << '\n';
        }
    }

private:
    std::size_t rows_ = 0, cols_ = 0;
    Role role_ = Role::Train;
    std::vector<std::size_t> ptr_{0};
    std::vector<std::uint32_t> col_;
    std::vector<double> val_;
};

/// s: inverse leaf sample sizes over the concatenated leaf index [d_Phi].
inline std::vector<double> leaf_size_vector(const Forest& forest) {
    std::vector<double> s(forest.total_leaves());
    for (std::size_t b = 0; b < forest.size(); ++b)
        for (std::size_t l = 0; l < forest.tree(b).leaf_count(); ++l) {
            const std::size_t c = forest.leaf_count(b, l);
            if (c == 0) throw Error("kernel", "leaf with zero sample count");
            s[forest.leaf_offset(b) + l] = 1.0 / static_cast<double>(c);
        }
    return s;
}

/// Sparse feature map: B entries (global leaf index, 1/sqrt(count)).
struct FeatureMapVector {
    std::vector<std::pair<std::size_t, double>> entries;

    double dot(const FeatureMapVector& o) const {
        double s = 0.0;
        std::size_t a = 0, b = 0;
        while (a < entries.size() && b < o.entries.size()) {
            if (entries[a].first == o.entries[b].first) s += entries[a++].second * o.entries[b++].second;
            else if (entries[a].first < o.entries[b].first) ++a;
            else ++b;
        }
        return s;
    }
};

inline FeatureMapVector feature_map(const Forest& forest, std::span<const double> x) {
    const auto a = forest.route(x);
    FeatureMapVector f;
    f.entries.reserve(forest.size());
    for (std::size_t b = 0; b < forest.size(); ++b)
        f.entries.push_back({forest.leaf_offset(b) + a.leaves[b],
                             1.0 / std::sqrt(static_cast<double>(forest.leaf_count(b, a.leaves[b])))});
    return f;
}

/// Leaf membership of a reference table: normalizing counts and member lists
/// per (tree, leaf). Every kernel evaluation normalizes by these counts.
class KernelReference {
public:
    KernelReference() = default;

    KernelReference(const Forest& forest, const Table& reference, std::size_t jobs = 1)
        : forest_(&forest), n_(reference.rows()) {
        if (n_ == 0) throw Error("kernel", "empty reference table");
        leaves_ = route_table(forest, reference, nullptr, jobs);
        start_.resize(forest.size());
        members_.resize(forest.size());
        for (std::size_t b = 0; b < forest.size(); ++b) {
            const std::size_t L = forest.tree(b).leaf_count();
            auto& st = start_[b];
            st.assign(L + 1, 0);
            for (std::size_t i = 0; i < n_; ++i) ++st[leaves_(i, b) + 1];
            for (std::size_t l = 0; l < L; ++l) st[l + 1] += st[l];
            auto& mem = members_[b];
            mem.resize(n_);
            std::vector<std::size_t> fill(st.begin(), st.end() - 1);
            for (std::size_t i = 0; i < n_; ++i) mem[fill[leaves_(i, b)]++] = static_cast<std::uint32_t>(i);
        }
    }

    const Forest& forest() const { return *forest_; }
    std::size_t size() const { return n_; }
    const LeafMatrix& leaves() const { return leaves_; }

    std::size_t count(std::size_t b, std::size_t leaf) const { return start_[b][leaf + 1] - start_[b][leaf]; }

    std::span<const std::uint32_t> members(std::size_t b, std::size_t leaf) const {
        return {members_[b].data() + start_[b][leaf], count(b, leaf)};
    }

    /// Sparse kernel row for a leaf assignment.
    void row(std::span<const std::uint32_t> assignment, std::vector<double>& acc, std::vector<std::uint32_t>& touched,
             std::vector<std::uint32_t>& cols, std::vector<double>& vals) const {
        const double inv_b = 1.0 / static_cast<double>(forest_->size());
        touched.clear();
        for (std::size_t b = 0; b < assignment.size(); ++b) {
            const std::size_t c = count(b, assignment[b]);
            if (c == 0) throw Error("kernel", "query reached a leaf with no reference rows");
            const double w = inv_b / static_cast<double>(c);
            for (auto j : members(b, assignment[b])) {
                if (acc[j] == 0.0) touched.push_back(j);
                acc[j] += w;
            }
        }
        std::sort(touched.begin(), touched.end());
        cols.assign(touched.begin(), touched.end());
        vals.resize(touched.size());
        for (std::size_t p = 0; p < touched.size(); ++p) {
            vals[p] = acc[touched[p]];
            acc[touched[p]] = 0.0;
        }
    }

    SparseKernelMatrix assemble(const LeafMatrix& queries, SparseKernelMatrix::Role role, std::size_t jobs = 1) const {
        const std::size_t m = queries.rows;
        std::vector<std::vector<std::uint32_t>> cols(m);
        std::vector<std::vector<double>> vals(m);
        const std::size_t workers = std::max<std::size_t>(1, std::min(jobs == 0 ? default_jobs() : jobs, m));
        // Contiguous blocks so each worker reuses one accumulator.
        const std::size_t block = (m + workers - 1) / std::max<std::size_t>(workers, 1);
        parallel_for(workers, workers, [&](std::size_t w) {
            std::vector<double> acc(n_, 0.0);
            std::vector<std::uint32_t> touched;
            for (std::size_t i = w * block; i < std::min(m, (w + 1) * block); ++i)
                row(queries.row(i), acc, touched, cols[i], vals[i]);
        });
        std::vector<std::size_t> ptr(m + 1, 0);
        for (std::size_t i = 0; i < m; ++i) ptr[i + 1] = ptr[i] + cols[i].size();
        std::vector<std::uint32_t> c;
        std::vector<double> v;
        c.reserve(ptr[m]);
        v.reserve(ptr[m]);
        for (std::size_t i = 0; i < m; ++i) {
            c.insert(c.end(), cols[i].begin(), cols[i].end());
            v.insert(v.end(), vals[i].begin(), vals[i].end());
        }
        return SparseKernelMatrix(m, n_, role, std::move(ptr), std::move(c), std::move(v));
    }

    SparseKernelMatrix train(std::size_t jobs = 1) const { return assemble(leaves_, SparseKernelMatrix::Role::Train, jobs); }

    SparseKernelMatrix cross(const Table& queries, std::size_t jobs = 1, RouteWarnings* warn = nullptr) const {
        return assemble(route_table(*forest_, queries, warn, jobs), SparseKernelMatrix::Role::Cross, jobs);
    }

    /// Kernel value between a query and one reference row.
    double value(std::span<const std::uint32_t> assignment, std::size_t j) const {
        double s = 0.0;
        for (std::size_t b = 0; b < assignment.size(); ++b)
            if (leaves_(j, b) == assignment[b]) s += 1.0 / static_cast<double>(count(b, assignment[b]));
        return s / static_cast<double>(forest_->size());
    }

private:
    const Forest* forest_ = nullptr;
    std::size_t n_ = 0;
    LeafMatrix leaves_;
    std::vector<std::vector<std::size_t>> start_;
    std::vector<std::vector<std::uint32_t>> members_;
};

/// K over a reference table against itself. Row i averages, over trees, the
/// indicator of sharing a leaf divided by the leaf's reference count.
inline SparseKernelMatrix rf_kernel_train(const Forest& forest, const Table& table, std::size_t jobs = 1) {
    return KernelReference(forest, table, jobs).train(jobs);
}

/// K0 between query rows and a reference table, normalized by reference counts.
inline SparseKernelMatrix rf_kernel_cross(const Forest& forest, const Table& queries, const Table& reference,
                                          std::size_t jobs = 1) {
    return KernelReference(forest, reference, jobs).cross(queries, jobs);
}

/// Fraction of trees in which x and x' share a leaf.
inline double scornet_kernel(const Forest& forest, std::span<const double> x, std::span<const double> xp) {
    const auto a = forest.route(x), b = forest.route(xp);
    std::size_t same = 0;
    for (std::size_t t = 0; t < forest.size(); ++t) same += a.leaves[t] == b.leaves[t] ? 1 : 0;
    return static_cast<double>(same) / static_cast<double>(forest.size());
}

/// Biased (V-statistic) MMD^2 with the kernel normalized by `counts(b, leaf)`.
template <typename Counts>
double mmd_squared_with(const Table& a, const Table& b, const Forest& forest, Counts&& counts) {
    if (a.rows() == 0 || b.rows() == 0) throw Error("kernel", "MMD needs non-empty samples");
    const LeafMatrix la = route_table(forest, a), lb = route_table(forest, b);
    const double na = static_cast<double>(a.rows()), nb = static_cast<double>(b.rows());
    double total = 0.0;
    std::vector<double> ha, hb;
    for (std::size_t t = 0; t < forest.size(); ++t) {
        const std::size_t L = forest.tree(t).leaf_count();
        ha.assign(L, 0.0);
        hb.assign(L, 0.0);
        for (std::size_t i = 0; i < la.rows; ++i) ha[la(i, t)] += 1.0 / na;
        for (std::size_t i = 0; i < lb.rows; ++i) hb[lb(i, t)] += 1.0 / nb;
        for (std::size_t l = 0; l < L; ++l) {
            const double diff = ha[l] - hb[l];
            if (diff == 0.0) continue;
            const double c = static_cast<double>(counts(t, l));
            if (c == 0.0) throw Error("kernel", "sample reached a leaf with no reference rows");
            total += diff * diff / c;
        }
    }
    return total / static_cast<double>(forest.size());
}

/// Plug-in MMD^2 under the forest's own leaf counts.
inline double mmd_squared(const Table& a, const Table& b, const Forest& forest) {
    return mmd_squared_with(a, b, forest, [&](std::size_t t, std::size_t l) { return forest.leaf_count(t, l); });
}

/// Plug-in MMD^2 normalized by a reference table's leaf counts.
inline double mmd_squared(const Table& a, const Table& b, const KernelReference& ref) {
    return mmd_squared_with(a, b, ref.forest(), [&](std::size_t t, std::size_t l) { return ref.count(t, l); });
}

}  // namespace rfae
