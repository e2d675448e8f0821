#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "rfae/core.hpp"
#include "rfae/data.hpp"

namespace rfae {

/// Constraint on one column. Continuous columns use [lo, hi) or [lo, hi]
/// (closed when the upper end comes from the training range rather than a
/// split). Categorical columns use an allowed-level mask.
struct Bound {
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
    bool hi_closed = true;
    std::vector<std::uint8_t> levels;  // categorical only

    bool categorical() const { return !levels.empty(); }

    bool empty() const {
        if (categorical()) return std::none_of(levels.begin(), levels.end(), [](auto v) { return v != 0; });
        return !(lo < hi || (lo == hi && hi_closed));
    }

    bool contains(double x) const {
        if (categorical()) {
            if (x < 0) return false;
            const auto l = static_cast<std::size_t>(x);
            return l < levels.size() && levels[l] != 0;
        }
        return lo <= x && (x < hi || (hi_closed && x == hi));
    }

    void intersect(const Bound& o) {
        if (categorical()) {
            for (std::size_t l = 0; l < levels.size(); ++l) levels[l] = levels[l] && o.levels[l];
            return;
        }
        lo = std::max(lo, o.lo);
        if (o.hi < hi) {
            hi = o.hi;
            hi_closed = o.hi_closed;
        } else if (o.hi == hi) {
            hi_closed = hi_closed && o.hi_closed;
        }
    }

    bool operator==(const Bound&) const = default;
};

/// Axis-aligned box over a schema: intervals for continuous columns, level
/// sets for categorical columns.
class Region {
public:
    Region() = default;
    explicit Region(std::vector<Bound> bounds) : bounds_(std::move(bounds)) {}

    /// Unconstrained region: continuous columns span `ranges`, categorical
    /// columns allow every level.
    static Region full(const Schema& schema, std::span<const std::pair<double, double>> ranges) {
        std::vector<Bound> b(schema.size());
        for (std::size_t j = 0; j < schema.size(); ++j) {
            if (schema[j].categorical()) {
                b[j].levels.assign(schema[j].levels.size(), 1);
            } else {
                b[j].lo = ranges[j].first;
                b[j].hi = ranges[j].second;
                b[j].hi_closed = true;
            }
        }
        return Region(std::move(b));
    }

    std::size_t size() const { return bounds_.size(); }
    const Bound& operator[](std::size_t j) const { return bounds_[j]; }
    Bound& operator[](std::size_t j) { return bounds_[j]; }
    const std::vector<Bound>& bounds() const { return bounds_; }

    bool empty() const {
        return std::any_of(bounds_.begin(), bounds_.end(), [](const Bound& b) { return b.empty(); });
    }

    bool contains(std::span<const double> x) const {
        for (std::size_t j = 0; j < bounds_.size(); ++j)
            if (!bounds_[j].contains(x[j])) return false;
        return true;
    }

    Region& intersect(const Region& o) {
        if (o.size() != size()) throw Error("forest", "region dimension mismatch");
        for (std::size_t j = 0; j < bounds_.size(); ++j) bounds_[j].intersect(o.bounds_[j]);
        return *this;
    }

    bool intersects(const Region& o) const {
        Region tmp = *this;
        return !tmp.intersect(o).empty();
    }

    bool operator==(const Region&) const = default;

private:
    std::vector<Bound> bounds_;
};

/// Coordinate-wise intersection of a non-empty list of regions.
inline Region region_intersect(std::span<const Region> regions) {
    if (regions.empty()) throw Error("forest", "region_intersect needs at least one region");
    Region out = regions.front();
    for (std::size_t i = 1; i < regions.size(); ++i) out.intersect(regions[i]);
    return out;
}

inline Region region_intersect(std::span<const Region* const> regions) {
    if (regions.empty()) throw Error("forest", "region_intersect needs at least one region");
    Region out = *regions.front();
    for (std::size_t i = 1; i < regions.size(); ++i) out.intersect(*regions[i]);
    return out;
}

/// Uniform draw from a non-empty region.
inline std::vector<double> region_sample(const Region& region, Rng& rng) {
    if (region.empty()) throw Error("forest", "cannot sample from an empty region");
    std::vector<double> x(region.size());
    for (std::size_t j = 0; j < region.size(); ++j) {
        const Bound& b = region[j];
        if (b.categorical()) {
            std::vector<std::size_t> allowed;
            for (std::size_t l = 0; l < b.levels.size(); ++l)
                if (b.levels[l]) allowed.push_back(l);
            x[j] = static_cast<double>(allowed[rng.index(allowed.size())]);
        } else if (b.lo == b.hi) {
            x[j] = b.lo;
        } else {
            if (!std::isfinite(b.lo) || !std::isfinite(b.hi))
                throw Error("forest", "cannot sample an unbounded interval");
            double v = b.lo + (b.hi - b.lo) * rng.uniform();
            if (v < b.lo) v = b.lo;
            if (v >= b.hi) v = b.hi_closed ? b.hi : std::nextafter(b.hi, b.lo);
            x[j] = v;
        }
    }
    return x;
}

inline std::vector<double> region_sample(const Region& region, std::uint64_t seed) {
    Rng rng(seed);
    return region_sample(region, rng);
}

}  // namespace rfae
