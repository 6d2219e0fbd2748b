#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace tamms::cli {

// Worst finite-difference agreement of one component over its random configs.
struct GradcheckResult {
    std::string module;
    std::string component;
    std::size_t configs = 0;
    std::size_t coordinates = 0;
    double max_rel_error = 0.0;
    std::string worst_parameter;  // "name[index]" in the worst config
    std::size_t worst_config = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

inline constexpr double kGradcheckTolerance = 1e-5;

// numeric_core, tam, sfci, diffusion.
const std::vector<std::string>& gradcheck_modules();

// Runs every component of `module` ("all" for every module) on `configs`
// random configurations derived from `seed`. Throws ConfigError on an unknown
// module name.
std::vector<GradcheckResult> run_gradcheck(std::string_view module, std::uint64_t seed, std::size_t configs = 20);

}  // namespace tamms::cli
