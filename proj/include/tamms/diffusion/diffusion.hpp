#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tamms/core/param_store.hpp"
#include "tamms/core/rng.hpp"
#include "tamms/core/tape.hpp"
#include "tamms/core/tensor.hpp"
#include "tamms/io/sits.hpp"
#include "tamms/sfci/sfci.hpp"
#include "tamms/tam/tam.hpp"

namespace tamms::diffusion {

// ---------------------------------------------------------------- noise schedule

struct NoiseSchedule {
    std::size_t steps = 0;
    Tensor betas;           // [steps]
    Tensor alphas_cumprod;  // [steps]
};

// Linear betas from 1e-4 to 0.02; alphas_cumprod is the running product of 1 - beta.
NoiseSchedule make_noise_schedule(std::size_t steps);

// sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps.
Tensor q_sample(const Tensor& x0, std::size_t t, const Tensor& eps, const NoiseSchedule& sched);

// ---------------------------------------------------------------- toy U-Net

struct UNetConfig {
    std::size_t image_channels = 3;
    std::size_t ch1 = 16;  // full-resolution level
    std::size_t ch2 = 32;  // half-resolution level
    std::size_t temb_dim = 32;
};

void validate(const UNetConfig& cfg);

// All U-Net weights go under `unet.` with the given partition (kBackbone while
// pretraining, kFrozen afterwards).
void register_unet_params(ParamStore& store, const UNetConfig& cfg, Partition partition, Rng& rng);

// Sinusoidal embedding of integer timesteps -> [B, dim].
Tensor timestep_features(const std::vector<std::size_t>& t, std::size_t dim);

struct UNetVars {
    Var temb_w, temb_b;
    Var enc1a_k, enc1a_b, enc1b_k, enc1b_b, enc1b_tw, enc1b_tb;
    Var enc2_k, enc2_b, enc2_tw, enc2_tb;
    Var mid_k, mid_b;
    Var dec2_k, dec2_b;
    Var dec1a_k, dec1a_b, dec1a_tw, dec1a_tb;
    Var dec1b_k, dec1b_b;
    Var out_k, out_b;
};
UNetVars bind_unet_params(Tape& tape, ParamStore& store);

struct Encoded {
    Var skip1;   // [B, ch1, H, W]
    Var skip2;   // [B, ch2, H/2, W/2]
    Var bottom;  // [B, ch2, H/2, W/2]
    Var temb;    // [B, temb_dim]
};

Encoded unet_encode(Tape& tape, const UNetVars& p, Var x, const std::vector<std::size_t>& t);

// `controls` is empty (plain U-Net) or holds z'_1 [B,ch1,H,W] and z'_2
// [B,ch2,H/2,W/2], which are added to the matching skips before decoding.
Var unet_decode(Tape& tape, const UNetVars& p, const Encoded& enc, const std::vector<Var>& controls);

// eps_hat for x_t [B,C,H,W] at per-item timesteps t.
Var unet_denoise(Tape& tape, const UNetVars& p, Var x_t, const std::vector<std::size_t>& t,
                 const std::vector<Var>& controls = {});

// ---------------------------------------------------------------- full model

struct ModelConfig {
    std::size_t frame_size = 16;
    std::size_t history = 3;  // input frames per forecast
    std::size_t diffusion_steps = 100;
    UNetConfig unet;
    tam::TamConfig tam;  // frame_shape follows frame_size / image_channels
    std::size_t fusion_dim = 32;
    std::size_t heads = 2;
    bool feed_forward = false;
    double dropout = 0.0;
    double alpha_init = -2.0;
    std::size_t ctrl_out_kernel = 3;

    // Control level configs for the two U-Net resolutions.
    std::vector<sfci::ControlLevelConfig> levels() const;
    tam::TamConfig tam_config() const;
};

void validate(const ModelConfig& cfg);

// Registers U-Net (kBackbone), both control levels and the TAM stand-in.
void init_model(ParamStore& store, const ModelConfig& cfg, std::uint64_t seed);

// Frames [H,W,C] in [0,1] <-> network layout [1,C,H,W] in [-1,1].
Tensor to_network(const Tensor& frame);
Tensor from_network(const Tensor& x, std::size_t item = 0);
// Stacks frames into [B,C,H,W] in [-1,1].
Tensor batch_to_network(const std::vector<const Tensor*>& frames);

enum class SemanticSource { kFull, kZeroed };

// Everything the denoiser needs from one history window.
struct ForecastContext {
    Tensor history;                 // [T,C,H,W], network layout
    std::vector<Tensor> frames;     // history frames [H,W,C]
    std::vector<double> timestamps;
    double target_timestamp = 0.0;
};

// Encoder features h_enc of the frozen U-Net for each context's clean history
// frames, evaluated with the timestep embedding of the item's diffusion step
// t[b]: one Var [B, C_l, T, H_l, W_l] per control level.
std::vector<Var> history_features(Tape& tape, ParamStore& store, const std::vector<const ForecastContext*>& batch,
                                  const std::vector<std::size_t>& t);

// Control residuals z'_l for a batch of contexts at diffusion steps t. The
// spatio-temporal input of each level is the history features followed, as a
// last time slice, by the matching skip of the current denoising pass
// (`current`, from unet_encode on x_t), so T = history + 1.
std::vector<Var> compute_controls(Tape& tape, ParamStore& store, const ModelConfig& cfg,
                                  const std::vector<const ForecastContext*>& batch, const std::vector<std::size_t>& t,
                                  const Encoded& current, SemanticSource source);

// Conditional eps_hat: encoder pass on x_t, controls from the contexts, decoder
// with injected skips.
Var denoise_conditioned(Tape& tape, ParamStore& store, const ModelConfig& cfg, Var x_t,
                        const std::vector<std::size_t>& t, const std::vector<const ForecastContext*>& batch,
                        SemanticSource source);

// ---------------------------------------------------------------- training

struct StageConfig {
    int stage = 1;  // 0 pretrains the U-Net, 1..3 follow the staged protocol
    std::size_t steps = 0;
    std::size_t batch = 8;
    double lr = 1e-3;
    double lr_min = 0.0;  // cosine floor, stage 3
    double weight_decay = 0.0;
    double grad_clip = 1.0;  // <= 0 disables

    Partition trainable() const;
    bool cosine() const { return stage == 3; }
};

// Desk-scale defaults per stage: 1000/2000/1000/500 steps, batch 8.
StageConfig default_stage(int stage);

struct TrainReport {
    int stage = 0;
    std::size_t steps = 0;
    std::vector<double> loss;
    std::uint64_t seed = 0;
};

// One training sample: a history window plus its target frame.
struct Sample {
    const io::SitsSequence* seq = nullptr;
    std::size_t start = 0;  // first history frame
};
std::vector<Sample> make_samples(const std::vector<io::SitsSequence>& data, std::size_t history);

// Completed stage recorded in the store's `__meta` bookkeeping (-1 when fresh).
int completed_stage(const ParamStore& store);
void set_completed_stage(ParamStore& store, int stage);

// Runs one stage. Stage 0 trains `unet.*` unconditionally and retags it frozen
// afterwards; stage s >= 1 requires completed_stage == s - 1 and updates exactly
// that stage's partition.
TrainReport train_stage(const StageConfig& stage, const std::vector<io::SitsSequence>& data, ParamStore& store,
                        const ModelConfig& cfg, std::uint64_t seed);

// Diffusion loss of one fixed micro-batch: target frames [H,W,C], timesteps,
// noise in network layout [C,H,W], and controls from the given contexts (none
// when `contexts` is empty).
double micro_batch_loss(ParamStore& store, const ModelConfig& cfg, const std::vector<Tensor>& targets,
                        const std::vector<std::size_t>& t, const std::vector<Tensor>& eps,
                        const std::vector<const ForecastContext*>& contexts, SemanticSource source);

// ---------------------------------------------------------------- sampling

// History window [start, start + history) of `seq`; the target date defaults to
// the timestamp of the frame after the window.
ForecastContext make_context(const ModelConfig& cfg, const io::SitsSequence& seq, std::size_t start,
                             std::optional<std::int64_t> target_day);

// Ancestral DDPM sampling of the frame following the last `history` frames of
// `history_seq` at `target_day`. Output [H,W,C] in [0,1].
Tensor sample_forecast(const io::SitsSequence& history_seq, std::int64_t target_day, ParamStore& store,
                       const ModelConfig& cfg, const NoiseSchedule& sched, std::uint64_t seed,
                       SemanticSource source = SemanticSource::kFull);

// ---------------------------------------------------------------- checkpoints

// "TAMK", u32 version, then per record: u32 name length, name, u8 partition
// tag, u32 rank, u32 dims, f64 little-endian payload. Records are written in
// name order; the completed stage travels as the record `__meta.completed_stage`.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const ParamStore& store);
ParamStore decode_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const ParamStore& store);
ParamStore load_checkpoint(const std::filesystem::path& path);

// Raw bytes of the records whose partition matches, in file order.
std::string partition_bytes(const ParamStore& store, Partition partition);

// Throws ValidationError unless `store` holds exactly the parameters that
// init_model registers for `cfg`, with matching shapes.
void check_compatible(const ParamStore& store, const ModelConfig& cfg);

}  // namespace tamms::diffusion
