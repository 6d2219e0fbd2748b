#include "tamms/sfci/sfci.hpp"

#include <cmath>

#include "tamms/core/errors.hpp"
#include "tamms/core/ops.hpp"

namespace tamms::sfci {

using ops::Activation;

void validate_level_config(const ControlLevelConfig& cfg) {
    if (cfg.enc_channels == 0 || cfg.ctrl_channels == 0 || cfg.cond_dim == 0 || cfg.fusion_dim == 0) {
        throw ConfigError("control level " + std::to_string(cfg.level) + ": dimensions must be positive");
    }
    if (cfg.out_kernel % 2 == 0) throw ConfigError("control output kernel extent must be odd");
    validate_attention_config(cfg.temporal());
}

void register_level_params(ParamStore& store, const ControlLevelConfig& cfg, Rng& rng) {
    validate_level_config(cfg);
    const std::string p = cfg.prefix();
    const std::size_t c = cfg.enc_channels, cc = cfg.ctrl_channels;
    const Partition st = Partition::kStructural, sem = Partition::kSemanticTemporal;

    store.add(p + ".ctrl.conv1.k", rng.normal_tensor({cc, c, 3, 3, 3}, std::sqrt(2.0 / (27.0 * c))), st);
    store.add(p + ".ctrl.conv1.b", Tensor({cc}), st);
    // Zero output conv: a fresh control level leaves the U-Net untouched.
    const std::size_t k = cfg.out_kernel;
    store.add(p + ".ctrl.conv2.k", Tensor({cc, cc, k, k, k}), st);
    store.add(p + ".ctrl.conv2.b", Tensor({cc}), st);

    store.add(p + ".sem.w1", rng.normal_tensor({cfg.cond_dim, cfg.fusion_dim}, std::sqrt(2.0 / cfg.cond_dim)), sem);
    store.add(p + ".sem.b1", Tensor({cfg.fusion_dim}), sem);
    store.add(p + ".sem.w2", Tensor({cfg.fusion_dim, cc}), sem);
    store.add(p + ".sem.b2", Tensor({cc}), sem);

    store.add(p + ".gate.w", Tensor({cc, cc}), sem);
    store.add(p + ".gate.b", Tensor({cc}), sem);

    register_attention_params(store, p + ".temporal", cfg.temporal(), sem, rng);
    store.add(p + ".alpha", Tensor::vector({cfg.alpha_init}), sem);
}

LevelVars bind_level_params(Tape& tape, ParamStore& store, const ControlLevelConfig& cfg) {
    const std::string p = cfg.prefix();
    LevelVars v;
    v.structural = {tape.parameter(store, p + ".ctrl.conv1.k"), tape.parameter(store, p + ".ctrl.conv1.b"),
                    tape.parameter(store, p + ".ctrl.conv2.k"), tape.parameter(store, p + ".ctrl.conv2.b")};
    v.semantic = {tape.parameter(store, p + ".sem.w1"), tape.parameter(store, p + ".sem.b1"),
                  tape.parameter(store, p + ".sem.w2"), tape.parameter(store, p + ".sem.b2")};
    v.gate = {tape.parameter(store, p + ".gate.w"), tape.parameter(store, p + ".gate.b")};
    v.temporal = bind_attention_params(tape, store, p + ".temporal", cfg.temporal());
    v.alpha_raw = tape.parameter(store, p + ".alpha");
    return v;
}

Var structural_path(Tape& tape, Var h_enc, const StructuralVars& p) {
    Var h = ops::conv3d(tape, h_enc, p.k1, p.b1);
    h = ops::activation(tape, h, Activation::kSilu);
    return ops::conv3d(tape, h, p.k2, p.b2);
}

Var semantic_project(Tape& tape, Var m, const SemanticVars& p) {
    const Tensor& mv = tape.value(m);
    const std::size_t d_cond = tape.value(p.w1).dim(0);
    if (mv.rank() == 0 || mv.rank() > 2 || mv.shape().back() != d_cond) {
        throw ConfigError("semantic vector shape " + shape_to_string(mv.shape()) + " does not match d_cond " +
                          std::to_string(d_cond));
    }
    if (mv.rank() == 1) m = ops::reshape(tape, m, {1, d_cond});
    Var hidden = ops::dense(tape, m, p.w1, p.b1, Activation::kSilu);
    return ops::dense(tape, hidden, p.w2, p.b2);
}

Var tile_spatial(Tape& tape, Var s_proj, std::size_t T, std::size_t H, std::size_t W) {
    if (tape.value(s_proj).rank() != 2) {
        throw DimensionError("tile_spatial expects s_proj[B, C'], got " + shape_to_string(tape.value(s_proj).shape()));
    }
    return ops::broadcast_trailing(tape, s_proj, {T, H, W});
}

GateOutput gated_fuse(Tape& tape, Var h_ctrl, Var s_proj, Var s, const GateVars& p) {
    const Tensor& hv = tape.value(h_ctrl);
    const Tensor& sv = tape.value(s);
    const Tensor& pv = tape.value(s_proj);
    if (hv.rank() != 5 || hv.shape() != sv.shape()) {
        throw DimensionError("gated_fuse: h_ctrl " + shape_to_string(hv.shape()) + " and s " +
                             shape_to_string(sv.shape()) + " must be equal 5-d shapes");
    }
    if (pv.rank() != 2 || pv.dim(0) != hv.dim(0) || pv.dim(1) != hv.dim(1)) {
        throw DimensionError("gated_fuse: s_proj " + shape_to_string(pv.shape()) + " does not match [B, C'] of " +
                             shape_to_string(hv.shape()));
    }
    Var gate = ops::dense(tape, s_proj, p.w, p.b, Activation::kSigmoid);
    GateOutput out;
    out.g = ops::broadcast_trailing(tape, gate, {hv.dim(2), hv.dim(3), hv.dim(4)});
    out.f = ops::lerp(tape, h_ctrl, s, out.g);
    return out;
}

Var psi(Tape& tape, Var x) {
    const Tensor& xv = tape.value(x);
    if (xv.rank() != 5) throw DimensionError("psi expects [B,C,T,H,W], got " + shape_to_string(xv.shape()));
    const std::size_t B = xv.dim(0), C = xv.dim(1), T = xv.dim(2), H = xv.dim(3), W = xv.dim(4);
    Var moved = ops::permute(tape, x, {0, 3, 4, 2, 1});  // [B,H,W,T,C]
    return ops::reshape(tape, moved, {B * H * W, T, C});
}

Var psi_inverse(Tape& tape, Var y, const Shape& original) {
    if (original.size() != 5) throw DimensionError("psi_inverse needs the original [B,C,T,H,W] shape");
    const std::size_t B = original[0], C = original[1], T = original[2], H = original[3], W = original[4];
    Var unflat = ops::reshape(tape, y, {B, H, W, T, C});
    return ops::permute(tape, unflat, {0, 4, 3, 1, 2});
}

Var temporal_refine(Tape& tape, Var f, const LevelVars& p, const ControlLevelConfig& cfg, const AttentionRun& run) {
    const Shape shape = tape.value(f).shape();
    Var seq = psi(tape, f);
    Var refined = attention_apply(tape, seq, p.temporal, cfg.temporal(), run);
    Var back = psi_inverse(tape, refined, shape);
    Var alpha = ops::activation(tape, p.alpha_raw, Activation::kSigmoid);
    return ops::mix(tape, alpha, back, f);
}

Var aggregate_time(Tape& tape, Var z) {
    if (tape.value(z).rank() != 5) {
        throw DimensionError("aggregate_time expects [B,C',T,H,W], got " + shape_to_string(tape.value(z).shape()));
    }
    return ops::mean_axis(tape, z, 2);
}

Var aggregate_and_inject(Tape& tape, Var z, Var skip) {
    Var agg = aggregate_time(tape, z);
    const Tensor& av = tape.value(agg);
    const Tensor& sv = tape.value(skip);
    if (av.shape() != sv.shape()) {
        throw DimensionError("control " + shape_to_string(av.shape()) + " does not match skip features " +
                             shape_to_string(sv.shape()));
    }
    return ops::add(tape, skip, agg);
}

LevelState level_from_ctrl(Tape& tape, Var h_ctrl, Var m, const LevelVars& p, const ControlLevelConfig& cfg,
                           SemanticMode mode, const AttentionRun& run) {
    const Tensor& hv = tape.value(h_ctrl);
    if (hv.rank() != 5 || hv.dim(1) != cfg.ctrl_channels) {
        throw DimensionError("control level " + std::to_string(cfg.level) + ": h_ctrl " + shape_to_string(hv.shape()) +
                             " does not have " + std::to_string(cfg.ctrl_channels) + " channels");
    }
    const std::size_t B = hv.dim(0), T = hv.dim(2), H = hv.dim(3), W = hv.dim(4);
    LevelState st;
    st.h_ctrl = h_ctrl;
    if (mode == SemanticMode::kFull) {
        st.s_proj = semantic_project(tape, m, p.semantic);
        if (tape.value(st.s_proj).dim(0) != B) {
            throw DimensionError("semantic batch " + std::to_string(tape.value(st.s_proj).dim(0)) +
                                 " != control batch " + std::to_string(B));
        }
    } else {
        st.s_proj = tape.constant(Tensor({B, cfg.ctrl_channels}));
    }
    st.s = tile_spatial(tape, st.s_proj, T, H, W);
    GateOutput gate = gated_fuse(tape, h_ctrl, st.s_proj, st.s, p.gate);
    st.g = gate.g;
    st.f = gate.f;
    st.z = temporal_refine(tape, st.f, p, cfg, run);
    st.z_agg = aggregate_time(tape, st.z);
    return st;
}

LevelState level_forward(Tape& tape, Var h_enc, Var m, const LevelVars& p, const ControlLevelConfig& cfg,
                         SemanticMode mode, const AttentionRun& run) {
    const Tensor& ev = tape.value(h_enc);
    if (ev.rank() != 5 || ev.dim(1) != cfg.enc_channels) {
        throw DimensionError("control level " + std::to_string(cfg.level) + ": h_enc " + shape_to_string(ev.shape()) +
                             " does not have " + std::to_string(cfg.enc_channels) + " channels");
    }
    return level_from_ctrl(tape, structural_path(tape, h_enc, p.structural), m, p, cfg, mode, run);
}

}  // namespace tamms::sfci
