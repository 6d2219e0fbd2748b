#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "tamms/core/gradcheck.hpp"
#include "tamms/core/ops.hpp"
#include "tamms/core/param_store.hpp"
#include "tamms/core/rng.hpp"
#include "tamms/core/tape.hpp"
#include "tamms/core/tensor.hpp"

namespace tamms::test {

inline Tensor iota_tensor(Shape shape, double start = 0.0, double step = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = start + step * static_cast<double>(i);
    return t;
}

// Evaluates a program on a fresh inference tape and returns the output tensor.
template <typename Fn>
Tensor eval(Fn&& fn) {
    Tape tape(Tape::Mode::kInference);
    Var out = fn(tape);
    return tape.value(out);
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// Scalar probe Σ out ⊙ R with fixed random R, so every output element
// contributes to the gradient with a distinct weight.
inline Var probe(Tape& tape, Var out, std::uint64_t seed) {
    Rng rng(seed);
    Tensor weights = rng.uniform_tensor(tape.value(out).shape(), -1.0, 1.0);
    return ops::weighted_sum(tape, out, weights);
}

// Fresh empty directory under the system temp dir, unique per process.
inline std::filesystem::path scratch_dir(const std::string& name) {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / ("tamms_test_" + std::to_string(::getpid())) / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace tamms::test
