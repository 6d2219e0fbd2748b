#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "tamms/diffusion/diffusion.hpp"
#include "tamms/io/sits.hpp"
#include "tamms/metrics/metrics.hpp"

namespace tamms::cli {

// Every tunable of the pipeline. Defaults are the desk-scale values; the
// comments give the full-scale value where it differs.
struct RunConfig {
    // model
    std::int64_t frame_size = 16;
    std::int64_t history = 3;  // input length
    std::int64_t prediction_length = 1;
    std::int64_t diffusion_steps = 100;
    std::int64_t unet_ch1 = 16;
    std::int64_t unet_ch2 = 32;
    std::int64_t temb_dim = 32;
    std::int64_t token_dim = 32;
    std::int64_t pte_hidden = 32;
    std::int64_t cond_dim = 64;  // full scale 512
    std::int64_t fusion_dim = 32;
    std::int64_t heads = 2;  // full scale 8
    bool feed_forward = false;
    double dropout = 0.0;  // full scale 0.1
    double alpha_init = -2.0;
    std::int64_t ctrl_out_kernel = 3;

    // training
    double lr = 3e-3;  // full scale 2e-5
    double lr_min = 0.0;
    double weight_decay = 0.0;
    double grad_clip = 1.0;
    std::int64_t batch = 8;  // full scale 12
    std::int64_t stage0_steps = 1000;
    std::int64_t stage1_steps = 2000;
    std::int64_t stage2_steps = 1000;
    std::int64_t stage3_steps = 500;
    bool use_contrastive = false;  // inert, see --help
    double contrastive_weight = 0.1;

    // synthetic data
    double growth_rate = 0.0025;
    double velocity = 0.003;
    double seasonal_amplitude = 0.1;
    double noise_amplitude = 0.02;
    double min_gap_days = 30.0;
    double max_gap_days = 1100.0;

    // evaluation
    std::string detector = "abs_diff_otsu";
    double detector_threshold = 0.2;
    bool majority_filter = false;
    double tcs_sigma = 0.2;
    double tcs_beta = 1.0;
    double sps_both_empty = 1.0;
    double sps_one_empty = 0.0;

    diffusion::ModelConfig model() const;
    diffusion::StageConfig stage(int stage) const;
    io::Scenario scenario(io::ScenarioKind kind) const;
    metrics::DetectorConfig detector_config() const;
    metrics::TcsConfig tcs_config() const;
};

struct ConfigKey {
    std::string name;
    std::string help;
};
const std::vector<ConfigKey>& config_keys();

// Throws ConfigError on an unknown key or a value that does not parse.
void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value);
std::string get_config_value(const RunConfig& cfg, std::string_view key);

// Range and consistency checks; throws ConfigError.
void validate(const RunConfig& cfg);

// key=value lines; blank lines and lines starting with '#' are skipped.
RunConfig parse_config(std::string_view text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path);

// Every key in registry order, one "key=value" per line.
std::string serialize(const RunConfig& cfg);

// FNV-1a 64 of serialize(cfg), as 16 lowercase hex digits.
std::string config_hash(const RunConfig& cfg);

}  // namespace tamms::cli
