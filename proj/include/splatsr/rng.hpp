#pragma once

#include <cmath>
#include <cstdint>

namespace splatsr {

// Counter-based random streams. Every stream is keyed by
// (global seed, iteration, purpose), so toggling one consumer on or off
// never shifts the draws seen by another, and draws are reproducible
// regardless of evaluation order.

enum class RngPurpose : std::uint64_t {
    ScenePosition = 1,
    SceneScale,
    SceneRotation,
    SceneOpacity,
    SceneColor,
    ViewOrder,
    Timestep,
    SdsNoise,
    PriorNoise,
    Dropout,
    SplitSample,
    Test, // scratch streams in tests and oracles
};

namespace detail {
// splitmix64 finalizer
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}
} // namespace detail

class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t iteration, RngPurpose purpose,
              std::uint64_t salt = 0)
        : key_(detail::mix64(detail::mix64(seed) ^ detail::mix64(iteration + 0x51ED270B) ^
                             detail::mix64(static_cast<std::uint64_t>(purpose) * 0x9E3779B9ull) ^
                             salt)) {}

    std::uint64_t next_u64() { return detail::mix64(key_ ^ detail::mix64(counter_++)); }

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi], inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(next_u64() % span);
    }

    /// Standard normal via Box-Muller; consumes two uniforms per draw.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform(); // log(0) guard
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

} // namespace splatsr
