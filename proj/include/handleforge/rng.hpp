#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace handleforge {

// Seeded random stream used everywhere randomness is needed. Normal draws
// use an explicit Box-Muller transform so values are reproducible across
// standard library implementations; std::normal_distribution is not pinned
// by the standard.
class RandomStream {
public:
    explicit RandomStream(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive range.
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(eng_() % static_cast<uint64_t>(hi - lo + 1));
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    void fill_normal(double* out, size_t n, double stddev = 1.0) {
        for (size_t i = 0; i < n; ++i) out[i] = stddev * normal();
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = eng_() % i;
            std::swap(v[i - 1], v[j]);
        }
    }

    // Independent child stream; lets callers hand out reproducible
    // sub-streams without sharing state.
    RandomStream fork(uint64_t tag) {
        return RandomStream(eng_() ^ (0x9e3779b97f4a7c15ULL * (tag + 1)));
    }

private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// FNV-1a, used for word hashing in the toy text embedder and config hashes.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t seed = 0xcbf29ce484222325ULL) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace handleforge
