#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "tamms/core/errors.hpp"
#include "tamms/core/rng.hpp"
#include "tamms/io/sits.hpp"

namespace tamms::io {

namespace {

constexpr std::int64_t kEpochStart = 10957;  // 2000-01-01
constexpr double kTexture = 0.05;

double overlap(double lo, double hi, double cell) {
    return std::max(0.0, std::min(hi, cell + 1.0) - std::max(lo, cell));
}

// Coverage of the axis-aligned box [x0,x1] x [y0,y1] over the pixel grid.
Tensor box_coverage(double x0, double x1, double y0, double y1, std::size_t size) {
    Tensor cov({size, size});
    for (std::size_t i = 0; i < size; ++i) {
        const double oy = overlap(y0, y1, static_cast<double>(i));
        if (oy == 0.0) continue;
        for (std::size_t j = 0; j < size; ++j) {
            cov[i * size + j] = oy * overlap(x0, x1, static_cast<double>(j));
        }
    }
    return cov;
}

std::string describe(ScenarioKind kind) {
    switch (kind) {
        case ScenarioKind::kGrowingSquare:
            return "A developing urban block where a bright rooftop footprint expands over bare ground";
        case ScenarioKind::kMovingBlock:
            return "A quarry site where a bright excavation patch shifts across the terrain";
        case ScenarioKind::kSeasonalField:
            return "Agricultural fields whose vegetation cover follows the seasons";
        case ScenarioKind::kStatic:
            return "An undeveloped area with no construction activity";
    }
    return {};
}

}  // namespace

ScenarioKind scenario_from_string(std::string_view name) {
    if (name == "growing_square") return ScenarioKind::kGrowingSquare;
    if (name == "moving_block") return ScenarioKind::kMovingBlock;
    if (name == "seasonal_field") return ScenarioKind::kSeasonalField;
    if (name == "static") return ScenarioKind::kStatic;
    throw ConfigError("unknown scenario '" + std::string(name) +
                      "' (expected growing_square, moving_block, seasonal_field or static)");
}

std::string_view scenario_name(ScenarioKind kind) {
    switch (kind) {
        case ScenarioKind::kGrowingSquare: return "growing_square";
        case ScenarioKind::kMovingBlock: return "moving_block";
        case ScenarioKind::kSeasonalField: return "seasonal_field";
        case ScenarioKind::kStatic: return "static";
    }
    return "?";
}

void validate(const Scenario& s) {
    auto in = [](double v, double lo, double hi) { return std::isfinite(v) && v >= lo && v <= hi; };
    if (!in(s.growth_rate, 0.0, 0.05)) throw ConfigError("growth_rate must lie in [0, 0.05] px/day");
    if (!in(s.velocity, 0.0, 0.05)) throw ConfigError("velocity must lie in [0, 0.05] px/day");
    if (!in(s.seasonal_amplitude, 0.0, 0.3)) throw ConfigError("seasonal_amplitude must lie in [0, 0.3]");
    if (!in(s.noise_amplitude, 0.0, 0.5)) throw ConfigError("noise_amplitude must lie in [0, 0.5]");
    if (!in(s.min_gap_days, 1.0, 1e5) || !in(s.max_gap_days, s.min_gap_days, 1e5)) {
        throw ConfigError("gap range must satisfy 1 <= min_gap_days <= max_gap_days");
    }
}

double square_side(const Scenario& scenario, const SceneParams& p, std::int64_t day) {
    return p.start_side + scenario.growth_rate * static_cast<double>(day - p.first_day);
}

Tensor object_coverage(const Scenario& scenario, const SceneParams& p, std::int64_t day, std::size_t size) {
    switch (scenario.kind) {
        case ScenarioKind::kGrowingSquare: {
            const double h = 0.5 * square_side(scenario, p, day);
            return box_coverage(p.center_x - h, p.center_x + h, p.center_y - h, p.center_y + h, size);
        }
        case ScenarioKind::kMovingBlock: {
            const double d = scenario.velocity * static_cast<double>(day - p.first_day);
            const double cx = p.center_x + d * std::cos(p.direction);
            const double cy = p.center_y + d * std::sin(p.direction);
            const double h = 0.5 * kBlockSide;
            return box_coverage(cx - h, cx + h, cy - h, cy + h, size);
        }
        case ScenarioKind::kSeasonalField:
        case ScenarioKind::kStatic:
            return Tensor({size, size});
    }
    return Tensor({size, size});
}

Tensor render_clean(const Scenario& scenario, const SceneParams& p, std::int64_t day, std::size_t size) {
    if (size == 0) throw ConfigError("frame size must be positive");
    Rng texture_rng(mix_seed(p.seed, 1));
    double offset = 0.0;
    if (scenario.kind == ScenarioKind::kSeasonalField) {
        offset = scenario.seasonal_amplitude *
                 std::sin(2.0 * std::numbers::pi * static_cast<double>(day) / 365.25 + p.phase);
    }
    const Tensor cov = object_coverage(scenario, p, day, size);
    Tensor img({size, size, 3});
    for (std::size_t k = 0; k < size * size; ++k) {
        const double tex = texture_rng.uniform(-kTexture, kTexture);
        for (std::size_t c = 0; c < 3; ++c) {
            const double bg = p.base[c] + tex + offset;
            img[k * 3 + c] = bg + cov[k] * (kSquareColor[c] - bg);
        }
    }
    return img;
}

std::vector<SyntheticSequence> generate_synthetic_detailed(const Scenario& scenario, std::size_t n_sequences,
                                                           std::size_t frames_per_seq, std::size_t size,
                                                           std::uint64_t seed) {
    validate(scenario);
    if (frames_per_seq < 2) throw ConfigError("frames_per_seq must be at least 2");
    if (size < 4) throw ConfigError("frame size must be at least 4 pixels");
    const double n = static_cast<double>(size);
    const double log_lo = std::log(scenario.min_gap_days);
    const double log_hi = std::log(scenario.max_gap_days);

    std::vector<SyntheticSequence> out;
    out.reserve(n_sequences);
    for (std::size_t s = 0; s < n_sequences; ++s) {
        SceneParams p;
        p.seed = mix_seed(seed, s);
        Rng rng(p.seed);
        for (double& b : p.base) b = rng.uniform(0.15, 0.35);
        p.center_x = rng.uniform(0.3, 0.7) * n;
        p.center_y = rng.uniform(0.3, 0.7) * n;
        p.start_side = rng.uniform(2.0, 4.0);
        // Moving blocks head roughly towards the frame centre so they stay visible.
        p.direction = std::atan2(0.5 * n - p.center_y, 0.5 * n - p.center_x) + rng.uniform(-0.6, 0.6);
        p.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        p.first_day = kEpochStart + static_cast<std::int64_t>(rng.index(3650));

        SyntheticSequence item;
        item.params = p;
        SitsSequence& seq = item.sequence;
        seq.id = std::string(scenario_name(scenario.kind)) + "_" + std::to_string(s);
        seq.scene_description = describe(scenario.kind);
        std::int64_t day = p.first_day;
        for (std::size_t f = 0; f < frames_per_seq; ++f) {
            if (f > 0) {
                const double gap = std::round(std::exp(rng.uniform(log_lo, log_hi)));
                day += std::max<std::int64_t>(1, static_cast<std::int64_t>(gap));
            }
            seq.timestamps.push_back(day);
        }
        Rng noise_rng(mix_seed(p.seed, 2));
        const double a = scenario.noise_amplitude;
        for (std::int64_t t : seq.timestamps) {
            Tensor img = render_clean(scenario, p, t, size);
            for (double& v : img.data()) v = std::clamp(v + noise_rng.uniform(-0.5 * a, 0.5 * a), 0.0, 1.0);
            seq.frames.push_back(std::move(img));
        }
        out.push_back(std::move(item));
    }
    return out;
}

std::vector<SitsSequence> generate_synthetic(const Scenario& scenario, std::size_t n_sequences,
                                             std::size_t frames_per_seq, std::size_t size, std::uint64_t seed) {
    std::vector<SitsSequence> out;
    for (auto& item : generate_synthetic_detailed(scenario, n_sequences, frames_per_seq, size, seed)) {
        out.push_back(std::move(item.sequence));
    }
    return out;
}

}  // namespace tamms::io
