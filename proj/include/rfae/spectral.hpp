#pragma once

#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "rfae/core.hpp"
#include "rfae/data.hpp"
#include "rfae/kernel.hpp"
#include "rfae/lanczos.hpp"

namespace rfae {

using Embedding = Eigen::MatrixXd;

/// Top non-trivial eigenpairs of a training kernel and the diffusion-map
/// coordinates built from them.
struct SpectralModel {
    std::size_t n = 0;
    double t = 1.0;
    double lambda0 = 1.0;      // the excluded trivial eigenvalue
    Eigen::VectorXd lambda;    // descending, size d_Z
    Eigen::MatrixXd V;         // n x d_Z, orthonormal, orthogonal to the constant
    Embedding Z;               // sqrt(n) V Lambda^t
    Eigen::VectorXd residuals;
    std::vector<std::string> warnings;

    std::size_t dz() const { return static_cast<std::size_t>(lambda.size()); }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["n"] = n;
        j["d_z"] = dz();
        j["t"] = t;
        j["lambda0"] = lambda0;
        j["eigenvalues"] = std::vector<double>(lambda.data(), lambda.data() + lambda.size());
        auto mat = [](const Eigen::MatrixXd& m) {
            nlohmann::json rows = nlohmann::json::array();
            for (Eigen::Index i = 0; i < m.rows(); ++i) {
                std::vector<double> r(static_cast<std::size_t>(m.cols()));
                for (Eigen::Index c = 0; c < m.cols(); ++c) r[static_cast<std::size_t>(c)] = m(i, c);
                rows.push_back(r);
            }
            return rows;
        };
        j["V"] = mat(V);
        j["Z"] = mat(Z);
        return j;
    }

    static SpectralModel from_json(const nlohmann::json& j) {
        SpectralModel m;
        m.n = j.at("n").get<std::size_t>();
        m.t = j.at("t").get<double>();
        m.lambda0 = j.at("lambda0").get<double>();
        const auto ev = j.at("eigenvalues").get<std::vector<double>>();
        m.lambda = Eigen::Map<const Eigen::VectorXd>(ev.data(), static_cast<Eigen::Index>(ev.size()));
        auto mat = [&](const nlohmann::json& rows) {
            Eigen::MatrixXd out(static_cast<Eigen::Index>(m.n), m.lambda.size());
            if (rows.size() != m.n) throw Error("spectral", "matrix row count does not match n");
            for (std::size_t i = 0; i < m.n; ++i) {
                const auto r = rows[i].get<std::vector<double>>();
                if (r.size() != m.dz()) throw Error("spectral", "matrix column count does not match d_z");
                for (std::size_t c = 0; c < r.size(); ++c) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = r[c];
            }
            return out;
        };
        m.V = mat(j.at("V"));
        m.Z = mat(j.at("Z"));
        if (j.at("d_z").get<std::size_t>() != m.dz()) throw Error("spectral", "d_z does not match eigenvalue count");
        return m;
    }
};

namespace detail {

/// lambda^p with 0^0 = 1. Returns NaN where the power is undefined.
inline double spectral_power(double lambda, double p) {
    if (p == 0.0) return 1.0;
    if (lambda == 0.0) return p > 0 ? 0.0 : std::numeric_limits<double>::quiet_NaN();
    if (lambda < 0.0 && p != std::floor(p)) return std::numeric_limits<double>::quiet_NaN();
    return std::pow(lambda, p);
}

/// Eigenvalues this close to zero are treated as exactly zero.
constexpr double zero_eigenvalue = 1e-12;

inline double clean(double lambda) { return std::abs(lambda) < zero_eigenvalue ? 0.0 : lambda; }

}  // namespace detail

/// Z = sqrt(n) V Lambda^t.
inline Embedding diffusion_map(const SpectralModel& model, double t) {
    if (!(t >= 0.0) || !std::isfinite(t)) throw Error("spectral", "diffusion time must be a finite non-negative number");
    Eigen::VectorXd scale(model.lambda.size());
    for (Eigen::Index j = 0; j < scale.size(); ++j) {
        const double lam = detail::clean(model.lambda(j));
        if (lam < 0.0 && t != std::floor(t))
            throw Error("spectral", "fractional diffusion time with a negative eigenvalue");
        scale(j) = std::sqrt(static_cast<double>(model.n)) * detail::spectral_power(lam, t);
    }
    return model.V * scale.asDiagonal();
}

/// Set the diffusion time and rebuild Z.
inline void set_diffusion_time(SpectralModel& model, double t) {
    model.Z = diffusion_map(model, t);
    model.t = t;
}

struct EigenOptions {
    LanczosOptions lanczos;
    std::size_t jobs = 1;
};

/// Top d_Z + 1 eigenpairs of a training kernel, with the trivial constant
/// pair dropped. Z is built with t = 1.
inline SpectralModel eigendecompose(const SparseKernelMatrix& K, std::size_t dz, const EigenOptions& opt = {}) {
    if (K.role() != SparseKernelMatrix::Role::Train || K.rows() != K.cols())
        throw Error("spectral", "eigendecompose needs a square training kernel");
    const std::size_t n = K.rows();
    if (n < 2) throw Error("spectral", "eigendecompose needs n >= 2");
    if (dz < 1 || dz > n - 1) throw Error("spectral", "d_Z must lie in [1, n-1]; got " + std::to_string(dz));

    // The constant vector is an eigenvector of a doubly stochastic K with
    // eigenvalue 1; the search runs in its orthogonal complement.
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));
    SpectralModel m;
    m.n = n;
    m.lambda0 = K.multiply(ones).mean();

    auto op = [&](const double* x, double* y) { K.multiply(x, y, opt.jobs); };
    auto r = lanczos_largest(op, n, dz, true, opt.lanczos);
    m.lambda = r.values;
    for (Eigen::Index j = 0; j < m.lambda.size(); ++j) m.lambda(j) = std::min(m.lambda(j), 1.0);
    m.V = r.vectors;
    m.residuals = r.residuals;

    std::size_t unit = 0;
    for (Eigen::Index j = 0; j < m.lambda.size(); ++j) unit += m.lambda(j) >= 1.0 - 1e-8 ? 1 : 0;
    if (unit > 0)
        m.warnings.push_back("kernel graph is disconnected: " + std::to_string(unit) +
                             " retained eigenvalue(s) equal 1 (component indicators)");
    set_diffusion_time(m, 1.0);
    return m;
}

/// Z0 = K0 Z Lambda^{-1}, evaluated as sqrt(n) K0 V Lambda^{t-1} so that
/// zero eigenvalues are handled by the power convention. Coordinates where
/// the power is undefined are set to 0 and reported in `warnings`.
inline Embedding nystrom_embed(const SparseKernelMatrix& K0, const SpectralModel& model,
                               std::vector<std::string>* warnings = nullptr) {
    if (K0.cols() != model.n) throw Error("spectral", "kernel columns do not match the training size");
    Eigen::VectorXd scale(model.lambda.size());
    for (Eigen::Index j = 0; j < scale.size(); ++j) {
        const double p = detail::spectral_power(detail::clean(model.lambda(j)), model.t - 1.0);
        if (std::isnan(p)) {
            scale(j) = 0.0;
            if (warnings) warnings->push_back("dimension " + std::to_string(j + 1) + " has a zero eigenvalue; embedded as 0");
        } else {
            scale(j) = std::sqrt(static_cast<double>(model.n)) * p;
        }
    }
    return K0.multiply(model.V) * scale.asDiagonal();
}

struct ReconstructOptions {
    /// Add back the dropped constant component (1/n per entry).
    bool add_constant = true;
    /// Clip negatives to 0 and renormalize rows to sum 1.
    bool stochastic = false;
};

/// K0_hat = Z0 Lambda Z^+, with Z^+ = Lambda^{-t} V^T / sqrt(n).
inline Eigen::MatrixXd reconstruct_kernel(const Embedding& Z0, const SpectralModel& model, const ReconstructOptions& opt = {}) {
    if (static_cast<std::size_t>(Z0.cols()) != model.dz()) throw Error("spectral", "embedding width does not match d_Z");
    Eigen::VectorXd scale(model.lambda.size());
    for (Eigen::Index j = 0; j < scale.size(); ++j) {
        const double p = detail::spectral_power(detail::clean(model.lambda(j)), 1.0 - model.t);
        scale(j) = std::isnan(p) || std::isinf(p) ? 0.0 : p / std::sqrt(static_cast<double>(model.n));
    }
    Eigen::MatrixXd K = Z0 * scale.asDiagonal() * model.V.transpose();
    if (opt.add_constant) K.array() += 1.0 / static_cast<double>(model.n);
    if (opt.stochastic) {
        K = K.cwiseMax(0.0);
        for (Eigen::Index i = 0; i < K.rows(); ++i) {
            const double s = K.row(i).sum();
            if (s > 0) K.row(i) /= s;
            else K.row(i).setConstant(1.0 / static_cast<double>(model.n));
        }
    }
    return K;
}

/// One reconstructed kernel row.
inline Eigen::VectorXd reconstruct_kernel_row(const Eigen::RowVectorXd& z0, const SpectralModel& model,
                                              const ReconstructOptions& opt = {}) {
    Eigen::MatrixXd z = z0;
    return reconstruct_kernel(z, model, opt).row(0).transpose();
}

/// CSV with header KPC1..KPCd.
inline void write_embedding_csv(std::ostream& out, const Embedding& Z) {
    for (Eigen::Index j = 0; j < Z.cols(); ++j) out << (j ? "," : "") << "KPC" << (j + 1);
    out << '\n';
    char buf[64];
    for (Eigen::Index i = 0; i < Z.rows(); ++i) {
        for (Eigen::Index j = 0; j < Z.cols(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", Z(i, j));
            out << (j ? "," : "") << buf;
        }
        out << '\n';
    }
}

inline Embedding read_embedding_csv(std::istream& in) {
    std::vector<std::string> fields;
    if (!detail::read_csv_record(in, fields)) throw Error("spectral", "embedding file is empty");
    const std::size_t d = fields.size();
    std::vector<double> cells;
    std::size_t rows = 0;
    while (detail::read_csv_record(in, fields)) {
        if (fields.size() == 1 && fields[0].empty()) continue;
        if (fields.size() != d) throw Error("spectral", "embedding row " + std::to_string(rows + 1) + " has wrong arity");
        for (const auto& f : fields) {
            double v;
            if (!detail::parse_double(f, v) || !std::isfinite(v)) throw Error("spectral", "non-numeric embedding cell '" + f + "'");
            cells.push_back(v);
        }
        ++rows;
    }
    Embedding Z(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < d; ++j) Z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = cells[i * d + j];
    return Z;
}

}  // namespace rfae
