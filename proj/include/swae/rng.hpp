#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace swae {

/// splitmix64 finalizer; used to derive independent substream seeds.
std::uint64_t mix_seed(std::uint64_t x);

/// Seed for a named component stream ("data", "init", "shuffle", "prior",
/// "local-sample", ...) derived from a run's root seed.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream);
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index);

/// Deterministic generator on top of mt19937_64. Uniforms are built from the
/// top 53 bits and normals use the Box-Muller transform, so draws are
/// identical across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    /// Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Standard normal.
    double normal();
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

private:
    std::mt19937_64 engine_;
    double cached_normal_ = 0.0;
    bool has_cached_ = false;
};

}  // namespace swae
