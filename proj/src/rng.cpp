#include "dfip/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "dfip/error.hpp"

namespace dfip {

double Rng::uniform() {
    // 53 random bits, shifted off zero so log() below stays finite.
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    // Rejection keeps the draw unbiased and independent of library internals.
    const std::uint64_t limit = span == 0 ? 0 : (~std::uint64_t{0} - span + 1) % span;
    std::uint64_t r;
    do {
        r = engine_();
    } while (r < limit);
    return lo + static_cast<std::int64_t>(span == 0 ? r : r % span);
}

double Rng::normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void Rng::fill_normal(Tensor& t) {
    for (auto& v : t.values()) v = static_cast<float>(normal());
}

Tensor Rng::normal_like(const Shape& shape) {
    Tensor t(shape);
    fill_normal(t);
    return t;
}

std::string Rng::state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
}

void Rng::restore(const std::string& state) {
    std::istringstream is(state);
    is >> engine_;
    if (!is) throw IoError("malformed generator state");
}

Rng Rng::split(std::uint64_t seed, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    Rng r;
    r.engine_.seed(seq);
    return r;
}

} // namespace dfip

namespace dfip {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace dfip
