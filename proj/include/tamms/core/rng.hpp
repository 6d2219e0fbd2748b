#pragma once

#include <cstdint>
#include <random>

#include "tamms/core/tensor.hpp"

namespace tamms {

// Seeded generator whose outputs are identical on every platform: the engine
// is the fully specified mt19937_64 and the distributions are written out here
// instead of using the implementation-defined std:: distributions.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform on [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer on [0, n).
    std::size_t index(std::size_t n);

    double normal();

    Tensor normal_tensor(Shape shape, double stddev = 1.0);
    Tensor uniform_tensor(Shape shape, double lo, double hi);

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// SplitMix64 finalizer; used to derive independent sub-seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace tamms
