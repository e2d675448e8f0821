#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rfae/core.hpp"

namespace rfae {

struct LanczosOptions {
    /// Target residual ||A v - lambda v||_2 for every returned pair.
    double tolerance = 1e-8;
    std::size_t max_restarts = 2000;
    /// Krylov basis size; 0 picks max(2 nev + 1, nev + 24), capped by the
    /// dimension of the search space.
    std::size_t basis = 0;
    std::uint64_t seed = 0x1a2b3c4dULL;
};

struct LanczosResult {
    Eigen::VectorXd values;   // descending
    Eigen::MatrixXd vectors;  // n x nev, orthonormal columns
    Eigen::VectorXd residuals;
    std::size_t restarts = 0;
    std::size_t matvecs = 0;
};

namespace detail {

/// Two passes of classical Gram-Schmidt against the first `k` columns of V
/// and, when `deflate` is set, against the constant vector. Returns the
/// projection coefficients of the first pass plus the second.
inline Eigen::VectorXd reorthogonalize(const Eigen::MatrixXd& V, Eigen::Index k, Eigen::VectorXd& w, bool deflate) {
    Eigen::VectorXd h = Eigen::VectorXd::Zero(k);
    for (int pass = 0; pass < 2; ++pass) {
        if (deflate) w.array() -= w.mean();
        if (k > 0) {
            Eigen::VectorXd c = V.leftCols(k).transpose() * w;
            w.noalias() -= V.leftCols(k) * c;
            h += c;
        }
    }
    if (deflate) w.array() -= w.mean();
    return h;
}

inline Eigen::VectorXd random_direction(Eigen::Index n, Rng& rng) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.uniform(-1.0, 1.0);
    return v;
}

/// Flip so the entry of largest magnitude (first on ties) is positive.
inline void fix_sign(Eigen::Ref<Eigen::VectorXd> v) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i)
        if (std::abs(v(i)) > std::abs(v(best)) + 1e-14) best = i;
    if (v(best) < 0) v = -v;
}

}  // namespace detail

/// Largest-algebraic eigenpairs of a symmetric operator by thick-restart
/// Lanczos with full reorthogonalization. With `deflate_constant`, the search
/// is confined to the complement of the constant vector, which must then be
/// an eigenvector of the operator.
///
/// `op(x, y)` must compute y = A x for length-n arrays.
template <typename Op>
LanczosResult lanczos_largest(Op&& op, std::size_t n, std::size_t nev, bool deflate_constant,
                              const LanczosOptions& opt = {}) {
    const std::size_t dim = deflate_constant ? n - 1 : n;
    if (n == 0 || nev == 0 || nev > dim) throw Error("spectral", "requested eigenpair count exceeds the search space");
    std::size_t m = opt.basis ? opt.basis : std::max(2 * nev + 1, nev + 24);
    m = std::min(std::max(m, nev + 1), dim);
    const auto N = static_cast<Eigen::Index>(n);
    const auto M = static_cast<Eigen::Index>(m);

    Rng rng(opt.seed);
    Eigen::MatrixXd V(N, M);
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(M, M);
    Eigen::VectorXd w(N), Av(N);
    LanczosResult res;

    auto apply = [&](const Eigen::VectorXd& x, Eigen::VectorXd& y) {
        op(x.data(), y.data());
        ++res.matvecs;
    };

    // Fresh unit vector orthogonal to the constant and to V's first k columns.
    auto fresh = [&](Eigen::Index k) {
        for (int attempt = 0; attempt < 8; ++attempt) {
            Eigen::VectorXd v = detail::random_direction(N, rng);
            detail::reorthogonalize(V, k, v, deflate_constant);
            const double nv = v.norm();
            if (nv > 1e-8) return Eigen::VectorXd(v / nv);
        }
        throw Error("spectral", "could not generate an orthogonal start vector");
    };

    V.col(0) = fresh(0);
    Eigen::Index k = 0;  // columns already holding a valid (Ritz or Lanczos) basis
    double op_norm = 0.0;
    Eigen::VectorXd residual(N);
    double beta = 0.0;

    for (res.restarts = 0;; ++res.restarts) {
        // Extend the basis from column k to m.
        for (Eigen::Index j = k; j < M; ++j) {
            apply(V.col(j), w);
            Eigen::VectorXd h = detail::reorthogonalize(V, j + 1, w, deflate_constant);
            H.col(j).head(j + 1) = h;
            H.row(j).head(j + 1) = h.transpose();
            op_norm = std::max(op_norm, std::abs(h(j)));
            beta = w.norm();
            if (j + 1 < M) {
                if (beta <= 1e-12 * std::max(1.0, op_norm)) {
                    // Invariant subspace found: continue with a new direction.
                    V.col(j + 1) = fresh(j + 1);
                    H(j + 1, j) = H(j, j + 1) = 0.0;
                } else {
                    V.col(j + 1) = w / beta;
                    H(j + 1, j) = H(j, j + 1) = beta;
                }
            }
        }
        residual = w;

        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
        // Eigen sorts ascending; walk from the top.
        Eigen::VectorXd theta(M);
        Eigen::MatrixXd Y(M, M);
        for (Eigen::Index i = 0; i < M; ++i) {
            theta(i) = es.eigenvalues()(M - 1 - i);
            Y.col(i) = es.eigenvectors().col(M - 1 - i);
        }
        op_norm = std::max(op_norm, theta.cwiseAbs().maxCoeff());
        const double inner_tol = std::min(opt.tolerance * 1e-3, 1e-11 * std::max(1.0, op_norm));
        bool done = static_cast<std::size_t>(M) == dim;
        if (!done) {
            done = true;
            for (std::size_t i = 0; i < nev; ++i)
                if (std::abs(beta * Y(M - 1, static_cast<Eigen::Index>(i))) > inner_tol) done = false;
        }
        if (done || res.restarts >= opt.max_restarts) {
            const auto K = static_cast<Eigen::Index>(nev);
            res.values = theta.head(K);
            res.vectors = V * Y.leftCols(K);
            res.residuals.resize(K);
            for (Eigen::Index i = 0; i < K; ++i) {
                // One more reorthogonalization keeps columns orthonormal to
                // machine precision after many restarts.
                Eigen::VectorXd v = res.vectors.col(i);
                detail::reorthogonalize(res.vectors, i, v, deflate_constant);
                v.normalize();
                detail::fix_sign(v);
                res.vectors.col(i) = v;
                apply(v, Av);
                res.residuals(i) = (Av - theta(i) * v).norm();
            }
            if (res.residuals.maxCoeff() > opt.tolerance) {
                if (res.restarts >= opt.max_restarts)
                    throw Error("spectral", "eigensolver did not converge; worst residual " +
                                                std::to_string(res.residuals.maxCoeff()));
                // Ritz estimate was optimistic; keep iterating.
            } else {
                return res;
            }
        }

        // Thick restart: keep the leading Ritz vectors plus the residual.
        const auto nv = static_cast<Eigen::Index>(nev);
        const Eigen::Index keep = std::min<Eigen::Index>(M - 1, nv + (M - nv) / 2);
        Eigen::MatrixXd Vk = V * Y.leftCols(keep);
        V.leftCols(keep) = Vk;
        H.setZero();
        for (Eigen::Index i = 0; i < keep; ++i) {
            H(i, i) = theta(i);
            H(keep, i) = H(i, keep) = beta * Y(M - 1, i);
        }
        if (beta <= 1e-12 * std::max(1.0, op_norm)) {
            V.col(keep) = fresh(keep);
            for (Eigen::Index i = 0; i < keep; ++i) H(keep, i) = H(i, keep) = 0.0;
        } else {
            Eigen::VectorXd r = residual / beta;
            detail::reorthogonalize(V, keep, r, deflate_constant);
            V.col(keep) = r / r.norm();
        }
        // Column `keep` is set; its H column is recomputed on extension.
        k = keep;
    }
}

}  // namespace rfae
