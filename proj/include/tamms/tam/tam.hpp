#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tamms/core/param_store.hpp"
#include "tamms/core/rng.hpp"
#include "tamms/core/tape.hpp"
#include "tamms/core/tensor.hpp"

namespace tamms::tam {

inline constexpr std::size_t kPhiDim = 6;

// [log1p(d), sin/cos of the annual phase, sin/cos of the monthly phase,
// min(d / 3650, 1)] for a gap of d days.
Tensor phi_featurize(double days);

// ---------------------------------------------------------------- PTE

struct PteConfig {
    std::size_t token_dim = 32;
    std::size_t hidden_dim = 32;
};

// Parameters live under `<prefix>.base_token`, `<prefix>.mlp.{w1,b1,w2,b2}`.
void register_pte_params(ParamStore& store, const std::string& prefix, const PteConfig& cfg, Rng& rng);

struct PteVars {
    Var base_token, w1, b1, w2, b2;
};
PteVars bind_pte_params(Tape& tape, ParamStore& store, const std::string& prefix);

// base_token + MLP(phi(days)); the MLP hidden layer uses ReLU.
Var pte_embed(Tape& tape, double days, const PteVars& p);

// ---------------------------------------------------------------- token sequence

enum class TokenKind { kVisual, kTemporal };

struct TokenSequence {
    std::vector<TokenKind> kinds;
    std::vector<Var> items;  // each [d_tok]

    std::size_t size() const { return items.size(); }
    bool empty() const { return items.empty(); }
};

// V1, t1, V2, t2, ..., Vn with t_i = pte_embed(deltas[i]).
TokenSequence interleave_tokens(Tape& tape, const std::vector<Var>& visuals, const std::vector<double>& deltas,
                                const PteVars& pte);

// Checks the V, t, V, ..., V alternation.
bool is_alternating(const TokenSequence& seq);

// Mean squared difference between consecutive temporal tokens; zero when the
// sequence holds fewer than two.
Var temporal_smoothness_loss(Tape& tape, const TokenSequence& seq);

// ---------------------------------------------------------------- prompt

std::string build_ctp_prompt(std::string_view scene_description, std::size_t n_images);

// ---------------------------------------------------------------- loss combination

// lambda_text * l_text + lambda_temp * l_temp for scalar l_text, l_temp.
Var combine_losses(Tape& tape, Var l_text, Var l_temp, double lambda_text, double lambda_temp);

// ---------------------------------------------------------------- semantic vector stand-in

struct SummarizerConfig {
    std::size_t token_dim = 32;
    std::size_t cond_dim = 64;
};

// `<prefix>.query` (zero, so pooling starts as a plain mean) and
// `<prefix>.proj.{w,b}`.
void register_summarizer_params(ParamStore& store, const std::string& prefix, const SummarizerConfig& cfg,
                                Rng& rng);

struct SummarizerVars {
    Var query, w, b;
};
SummarizerVars bind_summarizer_params(Tape& tape, ParamStore& store, const std::string& prefix);

// Attention-pooled mean of the items projected to [cond_dim].
Var summarize_sequence(Tape& tape, const TokenSequence& seq, const SummarizerVars& p);

// ---------------------------------------------------------------- full TAM stand-in

struct TamConfig {
    Shape frame_shape{16, 16, 3};  // [H, W, C]
    PteConfig pte;
    std::size_t cond_dim = 64;
};

// Registers the frozen visual projection (`tam.visual.weight`), PTE
// (`tam.pte.*`) and summarizer (`tam.summarizer.*`).
void register_tam_params(ParamStore& store, const TamConfig& cfg, Rng& rng);

struct TamOutput {
    TokenSequence tokens;
    Var semantic;  // [cond_dim]
};

// Frames [H,W,C] with integer-day timestamps -> M_t. When a forecast date is
// given, a horizon token pte(target - last timestamp) joins the pooled items;
// it is not part of `tokens`, which keeps the V, t, ..., V layout.
TamOutput encode_sequence(Tape& tape, ParamStore& store, const TamConfig& cfg, const std::vector<Tensor>& frames,
                          const std::vector<double>& timestamps,
                          std::optional<double> target_timestamp = std::nullopt);

}  // namespace tamms::tam
