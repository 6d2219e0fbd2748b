#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tamms/core/tensor.hpp"
#include "tamms/metrics/metrics.hpp"

namespace tamms::io {

// Frames [H,W,C] in [0,1] with integer day stamps (days since 1970-01-01).
struct SitsSequence {
    std::vector<Tensor> frames;
    std::vector<std::int64_t> timestamps;
    std::string scene_description;
    std::string id;

    std::size_t size() const { return frames.size(); }
};

// Throws ValidationError unless timestamps strictly increase, there are at
// least two frames, counts agree, shapes agree and values lie in [0, 1].
void validate(const SitsSequence& seq);

// ---------------------------------------------------------------- synthetic data

enum class ScenarioKind { kGrowingSquare, kMovingBlock, kSeasonalField, kStatic };

ScenarioKind scenario_from_string(std::string_view name);
std::string_view scenario_name(ScenarioKind kind);

struct Scenario {
    ScenarioKind kind = ScenarioKind::kGrowingSquare;
    double growth_rate = 0.0025;      // px/day, growing_square side growth
    double velocity = 0.003;          // px/day, moving_block speed
    double seasonal_amplitude = 0.1;  // seasonal_field background swing
    double noise_amplitude = 0.02;    // per-pixel noise is U[-a/2, a/2]
    double min_gap_days = 30.0;
    double max_gap_days = 1100.0;
};

void validate(const Scenario& scenario);

// Per-sequence draws; enough to re-render any frame without noise.
struct SceneParams {
    std::uint64_t seed = 0;
    double base[3] = {0, 0, 0};
    double center_x = 0, center_y = 0;  // pixel units, x = column
    double start_side = 0;              // growing_square side at the first frame
    double direction = 0;               // moving_block heading, radians
    double phase = 0;                   // seasonal_field phase, radians
    std::int64_t first_day = 0;
};

inline constexpr double kBlockSide = 4.0;
inline constexpr double kSquareColor[3] = {0.9, 0.85, 0.75};

// Side length in pixels of the growing square at `day` (before clipping).
double square_side(const Scenario& scenario, const SceneParams& params, std::int64_t day);

// Fraction of each pixel covered by the scenario's foreground object, [H,W].
Tensor object_coverage(const Scenario& scenario, const SceneParams& params, std::int64_t day, std::size_t size);

// Noise-free frame [size, size, 3].
Tensor render_clean(const Scenario& scenario, const SceneParams& params, std::int64_t day, std::size_t size);

struct SyntheticSequence {
    SitsSequence sequence;
    SceneParams params;
};

std::vector<SyntheticSequence> generate_synthetic_detailed(const Scenario& scenario, std::size_t n_sequences,
                                                           std::size_t frames_per_seq, std::size_t size,
                                                           std::uint64_t seed);

std::vector<SitsSequence> generate_synthetic(const Scenario& scenario, std::size_t n_sequences,
                                             std::size_t frames_per_seq, std::size_t size, std::uint64_t seed);

// ---------------------------------------------------------------- codecs

// Binary PPM (P6, maxval 255). Values are clamped to [0, 1] and rounded to
// the nearest of 256 levels. Images must be [H,W,3].
std::string encode_ppm(const Tensor& image);
Tensor decode_ppm(std::string_view bytes);
void write_ppm(const std::filesystem::path& path, const Tensor& image);
Tensor read_ppm(const std::filesystem::path& path);

// Binary PBM (P4); a set bit is a changed pixel.
std::string encode_pbm(const metrics::ChangeMask& mask);
metrics::ChangeMask decode_pbm(std::string_view bytes);
void write_pbm(const std::filesystem::path& path, const metrics::ChangeMask& mask);
metrics::ChangeMask read_pbm(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

// ---------------------------------------------------------------- manifests

// Frame paths in the manifest are resolved relative to its directory.
SitsSequence load_sequence(const std::filesystem::path& manifest_path);

// Writes frame_<i>.ppm files and manifest.json into `dir`; returns the manifest path.
std::filesystem::path write_sequence(const SitsSequence& seq, const std::filesystem::path& dir);

// A dataset directory holds one sub-directory per sequence, each with a
// manifest.json. Sequences are returned in sub-directory name order.
std::vector<std::filesystem::path> list_manifests(const std::filesystem::path& root);
std::vector<SitsSequence> load_dataset(const std::filesystem::path& root);
void write_dataset(const std::vector<SitsSequence>& seqs, const std::filesystem::path& root);

// ---------------------------------------------------------------- reports

using Json = nlohmann::ordered_json;

// Rounds to 9 significant digits; non-finite values pass through.
double round_sig9(double value);

struct SequenceResult {
    std::string id;
    double tcs = 0, sps = 0, acs = 0;
    std::optional<double> psnr;  // may be +inf; absent without ground truth
    std::optional<double> ssim;
};

struct EvalReport {
    Json config = Json::object();
    std::vector<SequenceResult> sequences;
};

Json report_json(const EvalReport& report);
std::string render_json(const Json& doc);
void write_report(const EvalReport& report, const std::filesystem::path& path);

}  // namespace tamms::io
