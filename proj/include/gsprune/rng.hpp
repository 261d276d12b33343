#pragma once

#include <cmath>
#include <cstdint>

namespace gsprune {

namespace detail {

// splitmix64 finalizer; full-period mixing of a 64-bit counter.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline double u64_to_unit(std::uint64_t x) {
    // 53 high bits -> double in [0, 1).
    return static_cast<double>(x >> 11) * 0x1.0p-53;
}

}  // namespace detail

// Stateless counter RNG: every draw is a pure function of its key, so the
// same (seed, stream, iteration, index, draw) tuple yields the same value on
// any thread layout and after any resume.
struct CounterRng {
    std::uint64_t seed = 0;

    std::uint64_t raw(std::uint64_t stream, std::uint64_t a, std::uint64_t b, std::uint64_t draw) const {
        std::uint64_t h = detail::mix64(seed ^ 0x6a09e667f3bcc909ULL);
        h = detail::mix64(h ^ stream);
        h = detail::mix64(h ^ a);
        h = detail::mix64(h ^ b);
        h = detail::mix64(h ^ draw);
        return h;
    }

    double uniform(std::uint64_t stream, std::uint64_t a, std::uint64_t b, std::uint64_t draw) const {
        return detail::u64_to_unit(raw(stream, a, b, draw));
    }

    // Standard normal via Box-Muller on two keyed uniforms.
    double normal(std::uint64_t stream, std::uint64_t a, std::uint64_t b, std::uint64_t draw) const {
        const double u1 = detail::u64_to_unit(raw(stream, a, b, draw * 2));
        const double u2 = detail::u64_to_unit(raw(stream, a, b, draw * 2 + 1));
        const double r = std::sqrt(-2.0 * std::log(u1 + 1e-300));
        return r * std::cos(6.283185307179586 * u2);
    }
};

// Named streams keep draw keys from colliding across uses of one seed.
namespace rng_stream {
inline constexpr std::uint64_t kSceneGen = 1;
inline constexpr std::uint64_t kJitter = 2;
inline constexpr std::uint64_t kGumbel = 3;
inline constexpr std::uint64_t kDensify = 4;
inline constexpr std::uint64_t kViewOrder = 5;
inline constexpr std::uint64_t kInit = 6;
inline constexpr std::uint64_t kTest = 99;
}  // namespace rng_stream

// Sequential convenience wrapper over CounterRng for generation-style code
// that just wants "the next" value.
struct SeqRng {
    CounterRng rng;
    std::uint64_t stream = rng_stream::kSceneGen;
    std::uint64_t counter = 0;

    SeqRng(std::uint64_t seed, std::uint64_t stream_id) : rng{seed}, stream(stream_id) {}

    double uniform() { return rng.uniform(stream, 0, 0, counter++); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal() { return rng.normal(stream, 0, 1, counter++); }

    // Uniform integer in [0, n) by rejection-free scaling (n small).
    std::uint64_t index(std::uint64_t n) {
        return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
    }
};

}  // namespace gsprune
