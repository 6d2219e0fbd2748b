#pragma once

#include <cstdint>
#include <string>

#include "tamms/core/ops.hpp"
#include "tamms/core/param_store.hpp"
#include "tamms/core/rng.hpp"
#include "tamms/core/tape.hpp"

namespace tamms {

// One pre-layernorm transformer block: y = x + Attn(LN(x)), optionally followed
// by y + FFN(LN2(y)) when feed_forward is set.
struct AttentionConfig {
    std::size_t dim = 0;
    std::size_t heads = 2;
    bool feed_forward = false;
    std::size_t ffn_dim = 0;
    double dropout = 0.0;
};

struct AttentionVars {
    Var ln_gamma, ln_beta, wq, wk, wv, wo;
    Var ln2_gamma, ln2_beta, ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

// Dropout only applies when training is set and the configured rate is > 0.
struct AttentionRun {
    bool training = false;
    std::uint64_t dropout_seed = 0;
};

void validate_attention_config(const AttentionConfig& cfg);

void register_attention_params(ParamStore& store, const std::string& prefix, const AttentionConfig& cfg,
                               Partition partition, Rng& rng);
AttentionVars bind_attention_params(Tape& tape, ParamStore& store, const std::string& prefix,
                                    const AttentionConfig& cfg);

// x[S, L, d]; attention runs along L independently for each of the S sequences.
Var attention_apply(Tape& tape, Var x, const AttentionVars& p, const AttentionConfig& cfg,
                    const AttentionRun& run = {});

}  // namespace tamms
