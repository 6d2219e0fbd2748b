#include "tamms/core/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "tamms/core/errors.hpp"
#include "tamms/core/rng.hpp"

namespace tamms {

namespace {

double evaluate(const ScalarProgram& f, ParamStore& store) {
    Tape tape(Tape::Mode::kInference);
    Var out = f(tape, store);
    return tape.value(out).item();
}

}  // namespace

FiniteDiffReport finite_diff_check(const ScalarProgram& f, ParamStore& store, const FiniteDiffOptions& options) {
    if (!(options.step > 0.0)) throw OracleError("finite difference step must be positive");

    const double base = evaluate(f, store);
    if (evaluate(f, store) != base) throw OracleError("program is not deterministic: repeated evaluation differs");

    store.zero_grad();
    std::map<std::string, Tensor> analytic;
    {
        Tape tape;
        Var out = f(tape, store);
        if (tape.value(out).item() != base) throw OracleError("recorded and inference evaluations differ");
        tape.backward(out);
        for (const auto& [name, e] : store) {
            if (store.is_trainable(e.partition)) analytic.emplace(name, e.grad);
        }
    }
    store.zero_grad();

    FiniteDiffReport report;
    Rng rng(options.seed);
    for (auto& [name, grad] : analytic) {
        Tensor& value = store.mutable_value(name);
        std::vector<std::size_t> coords(value.numel());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (coords.size() > options.samples) {
            // Partial Fisher-Yates: the first `samples` entries become a uniform sample.
            for (std::size_t i = 0; i < options.samples; ++i) {
                std::swap(coords[i], coords[i + rng.index(coords.size() - i)]);
            }
            coords.resize(options.samples);
        }
        for (std::size_t c : coords) {
            const double saved = value[c];
            value[c] = saved + options.step;
            const double plus = evaluate(f, store);
            value[c] = saved - options.step;
            const double minus = evaluate(f, store);
            value[c] = saved;
            const double numeric = (plus - minus) / (2.0 * options.step);
            const double a = grad[c];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
            const double rel = std::abs(a - numeric) / denom;
            ++report.coordinates_checked;
            if (report.worst_parameter.empty() || rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_parameter = name + "[" + std::to_string(c) + "]";
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    return report;
}

}  // namespace tamms
