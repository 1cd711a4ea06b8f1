#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

#include "gridrisk/util.hpp"

namespace gridrisk {

// All randomness in the pipeline flows from a single root seed through named
// substreams, so each stage (and each state within a stage) draws from its own
// independent, individually reproducible stream.
namespace detail {
inline std::uint64_t splitmix64(std::uint64_t& s) {
    s += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = s;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}
}  // namespace detail

inline std::uint64_t derive_seed(std::uint64_t root, std::string_view stream,
                                 std::initializer_list<std::uint64_t> path = {}) {
    std::uint64_t s = root ^ fnv1a64(stream);
    std::uint64_t out = detail::splitmix64(s);
    for (std::uint64_t p : path) {
        s ^= p * 0x2545f4914f6cdd1dull;
        out = detail::splitmix64(s);
    }
    return out;
}

// mt19937_64 with explicit uniform/normal transforms (Box-Muller, not
// std::normal_distribution) so sequences are identical across standard
// library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    static Rng derive(std::uint64_t root, std::string_view stream,
                      std::initializer_list<std::uint64_t> path = {}) {
        return Rng(derive_seed(root, stream, path));
    }

    std::uint64_t next_u64() { return eng_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform over [0, n)
    std::uint64_t below(std::uint64_t n) {
        // rejection sampling keeps the draw unbiased
        std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t v;
        do {
            v = eng_();
        } while (v >= limit);
        return v % n;
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // Mean-one lognormal: E[exp(sd_log * N - sd_log^2 / 2)] = 1.
    double lognormal_mean_one(double sd_log) {
        return std::exp(sd_log * normal() - 0.5 * sd_log * sd_log);
    }

    bool bernoulli(double p) { return uniform() < p; }

private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace gridrisk
