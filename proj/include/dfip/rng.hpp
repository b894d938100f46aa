#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "dfip/tensor.hpp"

namespace dfip {

/// Seeded generator used for every stochastic draw in the library.
///
/// Normal variates come from Box-Muller on the raw 64-bit engine output, so
/// the full stream is determined by the engine state alone; state() and
/// restore() capture it exactly.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    /// Uniform in (0, 1).
    double uniform();
    /// Uniform integer in [lo, hi].
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
    double normal();

    void fill_normal(Tensor& t);
    Tensor normal_like(const Shape& shape);

    std::string state() const;
    void restore(const std::string& state);

    /// Independent stream for sub-task `index` of a run seeded with `seed`.
    static Rng split(std::uint64_t seed, std::uint64_t index);

private:
    std::mt19937_64 engine_;
};

/// splitmix64 mix of (seed, index); used to give each case its own seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

} // namespace dfip
