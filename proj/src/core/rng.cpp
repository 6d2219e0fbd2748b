#include "tamms/core/rng.hpp"

#include <cmath>
#include <numbers>

namespace tamms {

std::size_t Rng::index(std::size_t n) {
    if (n == 0) return 0;
    // Rejection sampling keeps the result unbiased.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return static_cast<std::size_t>(x % n);
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
}

Tensor Rng::normal_tensor(Shape shape, double stddev) {
    Tensor out(std::move(shape));
    for (double& v : out.data()) v = stddev * normal();
    return out;
}

Tensor Rng::uniform_tensor(Shape shape, double lo, double hi) {
    Tensor out(std::move(shape));
    for (double& v : out.data()) v = uniform(lo, hi);
    return out;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace tamms
