#pragma once

// Counter-style deterministic RNG (splitmix64 core). Streams are derived by
// mixing a user seed with fixed stream tags, so every consumer of randomness
// is a pure function of (seed, tag...) and never of call order elsewhere in
// the program. Training resume stays bit-exact because nothing holds hidden
// RNG state across epochs: each epoch/step re-derives its stream.

#include <cmath>
#include <cstdint>
#include <initializer_list>

#include "stylealign/tensor.hpp"

namespace stylealign {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

class Rng {
public:
    explicit Rng(uint64_t seed) : state_(splitmix64(seed ^ 0x853c49e6748fea9bULL)) {}

    static Rng keyed(uint64_t seed, std::initializer_list<uint64_t> stream) {
        uint64_t s = splitmix64(seed ^ 0x853c49e6748fea9bULL);
        for (uint64_t id : stream) s = splitmix64(s ^ splitmix64(id + 0x2545f4914f6cdd1dULL));
        Rng r(0);
        r.state_ = s;
        return r;
    }

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n).
    int64_t below(int64_t n) { return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n)); }

    // Box-Muller; two uniforms per draw, no cached spare.
    double normal() {
        double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53; // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    template <typename T>
    void fill_normal(Tensor<T>& t, double stddev = 1.0, double mean = 0.0) {
        T* p = t.data();
        for (int64_t i = 0; i < t.numel(); ++i)
            p[i] = static_cast<T>(mean + stddev * normal());
    }

    template <typename T>
    void fill_uniform(Tensor<T>& t, double lo, double hi) {
        T* p = t.data();
        for (int64_t i = 0; i < t.numel(); ++i) p[i] = static_cast<T>(uniform(lo, hi));
    }

    // Fisher-Yates permutation of [0, n).
    std::vector<int64_t> permutation(int64_t n) {
        std::vector<int64_t> p(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
        for (int64_t i = n - 1; i > 0; --i) {
            int64_t j = below(i + 1);
            std::swap(p[static_cast<size_t>(i)], p[static_cast<size_t>(j)]);
        }
        return p;
    }

private:
    uint64_t state_;
};

// Fixed stream tags. Keeping them in one place avoids accidental collisions.
namespace rng_tag {
constexpr uint64_t init_weights = 1;
constexpr uint64_t noise_buffers = 2;  // keyed off the manifest, not the run seed
constexpr uint64_t sample_z = 3;
constexpr uint64_t shuffle = 4;
constexpr uint64_t w_mean = 5;
constexpr uint64_t perceptual = 6;  // fixed-weight feature pyramid
constexpr uint64_t dataset = 7;
constexpr uint64_t analysis = 8;
constexpr uint64_t encoder = 9;
constexpr uint64_t embedder = 10;
} // namespace rng_tag

} // namespace stylealign
