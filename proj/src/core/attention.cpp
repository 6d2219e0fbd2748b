#include "tamms/core/attention.hpp"

#include <cmath>

#include "tamms/core/errors.hpp"

namespace tamms {

void validate_attention_config(const AttentionConfig& cfg) {
    if (cfg.heads == 0 || cfg.dim % cfg.heads != 0) {
        throw ConfigError("attention dim " + std::to_string(cfg.dim) + " not divisible by heads " +
                          std::to_string(cfg.heads));
    }
    if (cfg.feed_forward && cfg.ffn_dim == 0) throw ConfigError("feed-forward sublayer needs ffn_dim > 0");
    if (cfg.dropout < 0.0 || cfg.dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
}

void register_attention_params(ParamStore& store, const std::string& prefix, const AttentionConfig& cfg,
                               Partition partition, Rng& rng) {
    validate_attention_config(cfg);
    const std::size_t d = cfg.dim;
    const double std_proj = 1.0 / std::sqrt(static_cast<double>(d));
    store.add(prefix + ".ln.gamma", Tensor(Shape{d}, 1.0), partition);
    store.add(prefix + ".ln.beta", Tensor(Shape{d}), partition);
    for (const char* w : {".wq", ".wk", ".wv", ".wo"}) {
        store.add(prefix + w, rng.normal_tensor(Shape{d, d}, std_proj), partition);
    }
    if (cfg.feed_forward) {
        store.add(prefix + ".ln2.gamma", Tensor(Shape{d}, 1.0), partition);
        store.add(prefix + ".ln2.beta", Tensor(Shape{d}), partition);
        store.add(prefix + ".ffn.w1", rng.normal_tensor(Shape{d, cfg.ffn_dim}, std_proj), partition);
        store.add(prefix + ".ffn.b1", Tensor(Shape{cfg.ffn_dim}), partition);
        store.add(prefix + ".ffn.w2",
                  rng.normal_tensor(Shape{cfg.ffn_dim, d}, 1.0 / std::sqrt(static_cast<double>(cfg.ffn_dim))),
                  partition);
        store.add(prefix + ".ffn.b2", Tensor(Shape{d}), partition);
    }
}

AttentionVars bind_attention_params(Tape& tape, ParamStore& store, const std::string& prefix,
                                    const AttentionConfig& cfg) {
    AttentionVars p;
    p.ln_gamma = tape.parameter(store, prefix + ".ln.gamma");
    p.ln_beta = tape.parameter(store, prefix + ".ln.beta");
    p.wq = tape.parameter(store, prefix + ".wq");
    p.wk = tape.parameter(store, prefix + ".wk");
    p.wv = tape.parameter(store, prefix + ".wv");
    p.wo = tape.parameter(store, prefix + ".wo");
    if (cfg.feed_forward) {
        p.ln2_gamma = tape.parameter(store, prefix + ".ln2.gamma");
        p.ln2_beta = tape.parameter(store, prefix + ".ln2.beta");
        p.ffn_w1 = tape.parameter(store, prefix + ".ffn.w1");
        p.ffn_b1 = tape.parameter(store, prefix + ".ffn.b1");
        p.ffn_w2 = tape.parameter(store, prefix + ".ffn.w2");
        p.ffn_b2 = tape.parameter(store, prefix + ".ffn.b2");
    }
    return p;
}

Var attention_apply(Tape& tape, Var x, const AttentionVars& p, const AttentionConfig& cfg, const AttentionRun& run) {
    validate_attention_config(cfg);
    const Tensor& xv = tape.value(x);
    if (xv.rank() != 3 || xv.dim(2) != cfg.dim) {
        throw DimensionError("attention_apply: expected [S, L, " + std::to_string(cfg.dim) + "], got " +
                             shape_to_string(xv.shape()));
    }
    const double rate = run.training ? cfg.dropout : 0.0;

    Var normed = ops::layer_norm(tape, x, p.ln_gamma, p.ln_beta);
    Var attn = ops::multi_head_attention(tape, normed, p.wq, p.wk, p.wv, p.wo, cfg.heads);
    attn = ops::dropout(tape, attn, rate, run.dropout_seed);
    Var y = ops::add(tape, x, attn);
    if (!cfg.feed_forward) return y;

    Var normed2 = ops::layer_norm(tape, y, p.ln2_gamma, p.ln2_beta);
    Var hidden = ops::dense(tape, normed2, p.ffn_w1, p.ffn_b1, ops::Activation::kGelu);
    Var ffn = ops::dense(tape, hidden, p.ffn_w2, p.ffn_b2);
    ffn = ops::dropout(tape, ffn, rate, mix_seed(run.dropout_seed, 1));
    return ops::add(tape, y, ffn);
}

}  // namespace tamms
