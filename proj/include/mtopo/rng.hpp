#pragma once

#include <cstdint>
#include <random>

namespace mtopo {

// splitmix64 step; used to derive well-separated child seeds from a master
// seed plus stream tags, so every simulated entity gets its own stream and
// results do not depend on evaluation order.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag) {
    std::uint64_t s = master;
    std::uint64_t a = splitmix64(s);
    s ^= tag * 0x9e3779b97f4a7c15ULL;
    std::uint64_t b = splitmix64(s);
    return a ^ (b + 0x165667b19e3779f9ULL);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag1, std::uint64_t tag2) {
    return derive_seed(derive_seed(master, tag1), tag2);
}

// Deterministic RNG wrapper. mt19937_64 output is fully specified by the
// standard and the uniform mappings below avoid std::uniform_real_distribution,
// whose results may differ between library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    // uniform in [0, 1) with 53 random bits
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    // uniform in [-halfwidth, +halfwidth]
    double symmetric(double halfwidth) {
        return uniform(-halfwidth, halfwidth);
    }

    // uniform integer in [0, n)
    std::uint64_t integer(std::uint64_t n) {
        // multiply-shift rejection-free mapping; bias is < 2^-53 for our n
        return static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
    }

    std::uint64_t raw() { return gen_(); }

private:
    std::mt19937_64 gen_;
};

} // namespace mtopo
