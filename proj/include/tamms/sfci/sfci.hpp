#pragma once

#include <cstddef>
#include <string>

#include "tamms/core/attention.hpp"
#include "tamms/core/param_store.hpp"
#include "tamms/core/rng.hpp"
#include "tamms/core/tape.hpp"

namespace tamms::sfci {

// One control level attached to a U-Net resolution level l.
struct ControlLevelConfig {
    std::size_t level = 0;
    std::size_t enc_channels = 16;   // C_l
    std::size_t ctrl_channels = 16;  // C'_l
    std::size_t cond_dim = 64;       // length of M_t
    std::size_t fusion_dim = 32;     // SemProc hidden width
    std::size_t heads = 2;           // temporal transformer heads
    bool feed_forward = false;
    std::size_t ffn_dim = 0;
    double dropout = 0.0;
    double alpha_init = -2.0;  // raw a_l, alpha = sigmoid(a_l)
    std::size_t out_kernel = 3;  // cubic extent of the zero-initialized output conv, odd

    std::string prefix() const { return "sfci.l" + std::to_string(level); }
    AttentionConfig temporal() const { return {ctrl_channels, heads, feed_forward, ffn_dim, dropout}; }
};

void validate_level_config(const ControlLevelConfig& cfg);

// Structural path (`.ctrl.*`) goes to the structural partition; SemProc
// (`.sem.*`), gate (`.gate.*`), temporal transformer (`.temporal.*`) and
// `.alpha` to the semantic-temporal partition. The last conv of the control
// block, the last SemProc layer and the gate start at zero.
void register_level_params(ParamStore& store, const ControlLevelConfig& cfg, Rng& rng);

struct StructuralVars {
    Var k1, b1, k2, b2;
};
struct SemanticVars {
    Var w1, b1, w2, b2;
};
struct GateVars {
    Var w, b;
};
struct LevelVars {
    StructuralVars structural;
    SemanticVars semantic;
    GateVars gate;
    AttentionVars temporal;
    Var alpha_raw;
};
LevelVars bind_level_params(Tape& tape, ParamStore& store, const ControlLevelConfig& cfg);

// h_enc[B,C,T,H,W] -> conv3d -> SiLU -> conv3d -> h_ctrl[B,C',T,H,W].
Var structural_path(Tape& tape, Var h_enc, const StructuralVars& p);

// M_t[B,d_cond] (or [d_cond] for B = 1) -> s_proj[B,C'] via a two-layer MLP.
Var semantic_project(Tape& tape, Var m, const SemanticVars& p);

// s_proj[B,C'] -> s[B,C',T,H,W], constant over (t,h,w).
Var tile_spatial(Tape& tape, Var s_proj, std::size_t T, std::size_t H, std::size_t W);

struct GateOutput {
    Var g;  // [B,C',T,H,W], sigmoid of the gate logits tiled like s
    Var f;  // (1 - g) * h_ctrl + g * s
};
GateOutput gated_fuse(Tape& tape, Var h_ctrl, Var s_proj, Var s, const GateVars& p);

// [B,C,T,H,W] <-> [B*H*W, T, C].
Var psi(Tape& tape, Var x);
Var psi_inverse(Tape& tape, Var y, const Shape& original);

// alpha * psi^-1(TempTrans(psi(f))) + (1 - alpha) * f.
Var temporal_refine(Tape& tape, Var f, const LevelVars& p, const ControlLevelConfig& cfg,
                    const AttentionRun& run = {});

// Mean over the time axis: z[B,C',T,H,W] -> z'[B,C',H,W].
Var aggregate_time(Tape& tape, Var z);

// skip + mean_T(z).
Var aggregate_and_inject(Tape& tape, Var z, Var skip);

// How the semantic path enters a level. kZeroed replaces s_proj with zeros
// (the gate is still evaluated on that zero input).
enum class SemanticMode { kFull, kZeroed };

struct LevelState {
    Var h_ctrl, s_proj, s, g, f, z, z_agg;
};

// Full level pipeline from a precomputed h_ctrl. `m` may be invalid in zeroed mode.
LevelState level_from_ctrl(Tape& tape, Var h_ctrl, Var m, const LevelVars& p, const ControlLevelConfig& cfg,
                           SemanticMode mode, const AttentionRun& run = {});

LevelState level_forward(Tape& tape, Var h_enc, Var m, const LevelVars& p, const ControlLevelConfig& cfg,
                         SemanticMode mode, const AttentionRun& run = {});

}  // namespace tamms::sfci
