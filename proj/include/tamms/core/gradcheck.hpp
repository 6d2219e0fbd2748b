#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "tamms/core/param_store.hpp"
#include "tamms/core/tape.hpp"

namespace tamms {

// Builds a scalar from the store's parameters on the given tape. Must be
// deterministic in the parameter values.
using ScalarProgram = std::function<Var(Tape&, ParamStore&)>;

struct FiniteDiffOptions {
    double step = 1e-5;
    // Coordinates checked per parameter tensor (all of them when the tensor is smaller).
    std::size_t samples = 8;
    std::uint64_t seed = 0;
};

struct FiniteDiffReport {
    double max_rel_error = 0.0;
    std::string worst_parameter;  // "name[flat_index]"
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t coordinates_checked = 0;
};

// Compares the tape's analytic gradient against central differences
// (f(w+h) - f(w-h)) / 2h on sampled coordinates of every trainable parameter.
// Relative error: |a - n| / max(|a|, |n|, 1e-12).
// Throws OracleError if two evaluations at the same point disagree.
FiniteDiffReport finite_diff_check(const ScalarProgram& f, ParamStore& store, const FiniteDiffOptions& options = {});

}  // namespace tamms
