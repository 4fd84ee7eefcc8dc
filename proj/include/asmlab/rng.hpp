#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace asmlab {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d49d035246c8a5ULL;
    return x ^ (x >> 31);
}

// Combine a master seed with a stream index (per-sample seeds, named RNG
// streams). Plain hashing keeps streams independent and reproducible.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    return splitmix64(splitmix64(master) ^ (0x517cc1b727220a95ULL * (stream + 1)));
}

// mt19937_64 with hand-rolled distributions. std::*_distribution output is
// implementation-defined, which would break bit-identical trajectories across
// standard libraries; these mappings are pinned.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1) with 53 bits of mantissa
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::uint64_t uniform_int(std::uint64_t n) {
        // modulo bias is negligible for desk-scale n; determinism matters more
        return gen_() % n;
    }

    int uniform_int(int lo, int hi_inclusive) {
        return lo + static_cast<int>(uniform_int(static_cast<std::uint64_t>(hi_inclusive - lo + 1)));
    }

    // Box-Muller, one value per call (cache holds the second)
    double normal() {
        if (has_cache_) {
            has_cache_ = false;
            return cache_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        cache_ = r * std::sin(a);
        has_cache_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
    double cache_ = 0.0;
    bool has_cache_ = false;
};

}  // namespace asmlab
