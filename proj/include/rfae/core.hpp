#pragma once

#include <algorithm>
#include <cmath>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace rfae {

/// Base exception for every recoverable failure in the library. The `where`
/// tag names the module that raised it so CLI messages carry context.
class Error : public std::runtime_error {
public:
    Error(std::string where, const std::string& what)
        : std::runtime_error(where + ": " + what), where_(std::move(where)) {}

    const std::string& where() const noexcept { return where_; }

private:
    std::string where_;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace detail

/// Derive an independent stream seed from a master seed. Used so that
/// per-tree / per-row randomness does not depend on scheduling order.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    return detail::splitmix64(detail::splitmix64(master) ^ detail::splitmix64(stream + 0x632be59bd9b4e019ULL));
}

/// xoshiro256** generator with portable helper distributions. The standard
/// library distributions are implementation-defined, which would make
/// serialized models differ across toolchains.
class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

    void reseed(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& s : state_) {
            x = detail::splitmix64(x);
            s = x;
        }
    }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform on [0, 1).
    double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    /// Uniform on [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer on [0, n). n must be positive.
    std::size_t index(std::size_t n) {
        const std::uint64_t bound = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = max() - max() % bound;
        std::uint64_t r;
        do {
            r = (*this)();
        } while (r >= limit);
        return static_cast<std::size_t>(r % bound);
    }

    /// Standard normal via Box-Muller (one value per call).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925 * u2);
    }

    /// Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
    }

    /// k distinct indices from [0, n), in draw order.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
        std::vector<std::size_t> pool(n);
        for (std::size_t i = 0; i < n; ++i) pool[i] = i;
        k = std::min(k, n);
        for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + index(n - i)]);
        pool.resize(k);
        return pool;
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t state_[4]{};
};

/// Number of worker threads used by `parallel_for` when callers pass 0.
inline std::size_t default_jobs() {
    const auto hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

/// Run fn(i) for i in [0, n) on up to `jobs` threads. Work is handed out in
/// index order; callers must write results into per-index slots so output
/// does not depend on scheduling. The first exception is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
    if (jobs == 0) jobs = default_jobs();
    jobs = std::min(jobs, n);
    if (jobs <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next.store(n);
                return;
            }
        }
    };
    std::vector<std::thread> threads;
    threads.reserve(jobs);
    for (std::size_t t = 0; t < jobs; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace rfae
