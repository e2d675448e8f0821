#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "rfae/core.hpp"
#include "rfae/data.hpp"

namespace rfae {

struct DistortionReport {
    std::vector<std::string> names;
    std::vector<double> per_feature;  // each in [0, 1]
    double combined = 0.0;            // unweighted mean of per_feature
    std::size_t continuous = 0;
    std::size_t categorical = 0;

    nlohmann::json to_json() const {
        nlohmann::json f = nlohmann::json::object();
        for (std::size_t j = 0; j < names.size(); ++j) f[names[j]] = per_feature[j];
        return {{"combined", combined},
                {"per_feature", f},
                {"continuous_features", continuous},
                {"categorical_features", categorical}};
    }
};

/// 1 - R^2 for continuous columns and the mismatch rate for categorical ones.
inline DistortionReport distortion(const Table& original, const Table& reconstructed) {
    if (!(original.schema() == reconstructed.schema())) throw Error("metrics", "schemas differ");
    if (original.rows() != reconstructed.rows()) throw Error("metrics", "row counts differ");
    const std::size_t n = original.rows(), d = original.cols();
    if (n < 2) throw Error("metrics", "distortion needs at least 2 rows");
    if (d == 0) throw Error("metrics", "distortion needs at least one column");
    DistortionReport r;
    for (std::size_t j = 0; j < d; ++j) {
        const Column& c = original.schema()[j];
        r.names.push_back(c.name);
        double v;
        if (c.categorical()) {
            ++r.categorical;
            std::size_t miss = 0;
            for (std::size_t i = 0; i < n; ++i) miss += original(i, j) != reconstructed(i, j) ? 1 : 0;
            v = static_cast<double>(miss) / static_cast<double>(n);
        } else {
            ++r.continuous;
            double mean = 0.0;
            for (std::size_t i = 0; i < n; ++i) mean += original(i, j);
            mean /= static_cast<double>(n);
            double ss_res = 0.0, ss_tot = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double e = original(i, j) - reconstructed(i, j), t = original(i, j) - mean;
                ss_res += e * e;
                ss_tot += t * t;
            }
            if (ss_tot == 0.0) v = ss_res == 0.0 ? 0.0 : 1.0;
            else v = std::clamp(ss_res / ss_tot, 0.0, 1.0);
        }
        r.per_feature.push_back(v);
        r.combined += v;
    }
    r.combined /= static_cast<double>(d);
    return r;
}

/// Returned when every class collapses onto its centroid.
constexpr double separation_sentinel = 1e12;

/// Mean distance between class centroids over mean distance of points to
/// their own class centroid.
inline double separation_ratio(const Eigen::MatrixXd& Z, const std::vector<double>& labels) {
    if (static_cast<std::size_t>(Z.rows()) != labels.size()) throw Error("metrics", "label count does not match rows");
    std::map<double, std::vector<Eigen::Index>> groups;
    for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(static_cast<Eigen::Index>(i));
    if (groups.size() < 2) throw Error("metrics", "separation ratio needs at least 2 classes");
    std::vector<Eigen::RowVectorXd> centroid;
    double within = 0.0;
    for (const auto& [label, idx] : groups) {
        if (idx.size() < 2) throw Error("metrics", "every class needs at least 2 points");
        Eigen::RowVectorXd c = Eigen::RowVectorXd::Zero(Z.cols());
        for (auto i : idx) c += Z.row(i);
        c /= static_cast<double>(idx.size());
        for (auto i : idx) within += (Z.row(i) - c).norm();
        centroid.push_back(std::move(c));
    }
    within /= static_cast<double>(Z.rows());
    double between = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < centroid.size(); ++a)
        for (std::size_t b = a + 1; b < centroid.size(); ++b, ++pairs) between += (centroid[a] - centroid[b]).norm();
    between /= static_cast<double>(pairs);
    if (within == 0.0) return between == 0.0 ? 1.0 : separation_sentinel;
    return std::min(between / within, separation_sentinel);
}

}  // namespace rfae
