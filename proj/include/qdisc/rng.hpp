#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace qdisc::rng {

// splitmix64 step; used to derive independent child seeds from (seed, index)
// so that parallel grid-point generation is schedule-independent.
inline std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive(std::uint64_t seed, std::uint64_t index) {
    return mix(seed ^ mix(index + 0x51ed2700215fULL));
}

class Engine {
public:
    explicit Engine(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // uniform in [0,1) with 53 random bits; avoids distribution objects so
    // sequences are identical across standard library implementations
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller without cached state
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // integer in [0, n)
    std::uint64_t below(std::uint64_t n) {
        // multiply-shift rejection-free mapping is fine at our sample counts
        return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
    }

    // index drawn from an unnormalized CDF (strictly increasing, last = total)
    std::size_t from_cdf(const std::vector<double>& cdf) {
        const double u = uniform() * cdf.back();
        std::size_t lo = 0, hi = cdf.size() - 1;
        while (lo < hi) {
            const std::size_t mid = (lo + hi) / 2;
            if (cdf[mid] <= u)
                lo = mid + 1;
            else
                hi = mid;
        }
        return lo;
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace qdisc::rng
