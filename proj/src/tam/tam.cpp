#include "tamms/tam/tam.hpp"

#include <cmath>
#include <numbers>

#include "tamms/core/errors.hpp"
#include "tamms/core/ops.hpp"

namespace tamms::tam {

namespace {

constexpr double kYearDays = 365.25;
constexpr double kMonthDays = 30.44;
constexpr double kDecadeDays = 3650.0;

constexpr const char* kPromptInstruction =
    "Describe specific changes between these time-series remote sensing images in a single paragraph. "
    "Focus on concrete changes to structures, landscape, or development with precise location details. ";

double stddev_for(std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

}  // namespace

Tensor phi_featurize(double days) {
    if (!std::isfinite(days) || days < 0.0) {
        throw DomainError("time gap must be finite and non-negative, got " + std::to_string(days) + " days");
    }
    const double two_pi = 2.0 * std::numbers::pi;
    return Tensor::vector({std::log1p(days), std::sin(two_pi * days / kYearDays), std::cos(two_pi * days / kYearDays),
                           std::sin(two_pi * days / kMonthDays), std::cos(two_pi * days / kMonthDays),
                           std::min(days / kDecadeDays, 1.0)});
}

void register_pte_params(ParamStore& store, const std::string& prefix, const PteConfig& cfg, Rng& rng) {
    if (cfg.token_dim == 0 || cfg.hidden_dim == 0) throw ConfigError("PTE dimensions must be positive");
    const Partition part = Partition::kSemanticTemporal;
    store.add(prefix + ".base_token", rng.normal_tensor({cfg.token_dim}, 0.02), part);
    store.add(prefix + ".mlp.w1", rng.normal_tensor({kPhiDim, cfg.hidden_dim}, std::sqrt(2.0 / kPhiDim)), part);
    store.add(prefix + ".mlp.b1", Tensor({cfg.hidden_dim}), part);
    store.add(prefix + ".mlp.w2", rng.normal_tensor({cfg.hidden_dim, cfg.token_dim}, stddev_for(cfg.hidden_dim)),
              part);
    store.add(prefix + ".mlp.b2", Tensor({cfg.token_dim}), part);
}

PteVars bind_pte_params(Tape& tape, ParamStore& store, const std::string& prefix) {
    return {tape.parameter(store, prefix + ".base_token"), tape.parameter(store, prefix + ".mlp.w1"),
            tape.parameter(store, prefix + ".mlp.b1"), tape.parameter(store, prefix + ".mlp.w2"),
            tape.parameter(store, prefix + ".mlp.b2")};
}

Var pte_embed(Tape& tape, double days, const PteVars& p) {
    if (tape.value(p.base_token).numel() != tape.value(p.w2).dim(1)) {
        throw ConfigError("PTE base token length " + std::to_string(tape.value(p.base_token).numel()) +
                          " != MLP output width " + std::to_string(tape.value(p.w2).dim(1)));
    }
    Var phi = tape.constant(phi_featurize(days));
    Var hidden = ops::dense(tape, phi, p.w1, p.b1, ops::Activation::kRelu);
    Var mlp = ops::dense(tape, hidden, p.w2, p.b2);
    return ops::add(tape, p.base_token, mlp);
}

TokenSequence interleave_tokens(Tape& tape, const std::vector<Var>& visuals, const std::vector<double>& deltas,
                                const PteVars& pte) {
    if (visuals.empty()) throw ArityError("token sequence needs at least one visual item");
    if (deltas.size() + 1 != visuals.size()) {
        throw ArityError("expected " + std::to_string(visuals.size() - 1) + " time gaps for " +
                         std::to_string(visuals.size()) + " visual items, got " + std::to_string(deltas.size()));
    }
    TokenSequence seq;
    for (std::size_t i = 0; i < visuals.size(); ++i) {
        if (i > 0) {
            seq.kinds.push_back(TokenKind::kTemporal);
            seq.items.push_back(pte_embed(tape, deltas[i - 1], pte));
        }
        seq.kinds.push_back(TokenKind::kVisual);
        seq.items.push_back(visuals[i]);
    }
    return seq;
}

bool is_alternating(const TokenSequence& seq) {
    if (seq.kinds.empty() || seq.kinds.size() % 2 == 0 || seq.kinds.size() != seq.items.size()) return false;
    for (std::size_t i = 0; i < seq.kinds.size(); ++i) {
        if (seq.kinds[i] != (i % 2 == 0 ? TokenKind::kVisual : TokenKind::kTemporal)) return false;
    }
    return true;
}

Var temporal_smoothness_loss(Tape& tape, const TokenSequence& seq) {
    std::vector<Var> temporal;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        if (seq.kinds[i] == TokenKind::kTemporal) temporal.push_back(seq.items[i]);
    }
    if (temporal.size() < 2) return tape.constant(Tensor::scalar(0.0));
    Var total = ops::mse(tape, temporal[1], temporal[0]);
    for (std::size_t i = 2; i < temporal.size(); ++i) total = ops::add(tape, total, ops::mse(tape, temporal[i], temporal[i - 1]));
    return ops::scale(tape, total, 1.0 / static_cast<double>(temporal.size() - 1));
}

std::string build_ctp_prompt(std::string_view scene_description, std::size_t n_images) {
    if (n_images < 2) throw DomainError("prompt needs at least two images, got " + std::to_string(n_images));
    if (scene_description.empty()) throw DomainError("scene description must be non-empty");
    // Two images are written back to back; longer sequences use a literal
    // "..." separator, following the template's "<image>...<image>" form.
    const std::string_view sep = n_images > 2 ? "..." : "";
    std::string out;
    for (std::size_t i = 0; i < n_images; ++i) {
        if (i > 0) out += sep;
        out += "<image>";
    }
    out += " Scene: ";
    out += scene_description;
    out += ". ";
    out += kPromptInstruction;
    return out;
}

Var combine_losses(Tape& tape, Var l_text, Var l_temp, double lambda_text, double lambda_temp) {
    if (!(lambda_text >= 0.0) || !(lambda_temp >= 0.0)) {
        throw ConfigError("loss weights must be non-negative");
    }
    if (!std::isfinite(lambda_text) || !std::isfinite(lambda_temp)) throw ConfigError("loss weights must be finite");
    if (tape.value(l_text).numel() != 1 || tape.value(l_temp).numel() != 1) {
        throw DimensionError("combine_losses expects scalar losses");
    }
    if (!tape.value(l_text).all_finite() || !tape.value(l_temp).all_finite()) {
        throw DomainError("combine_losses received a non-finite loss");
    }
    return ops::add(tape, ops::scale(tape, l_text, lambda_text), ops::scale(tape, l_temp, lambda_temp));
}

void register_summarizer_params(ParamStore& store, const std::string& prefix, const SummarizerConfig& cfg,
                                Rng& rng) {
    if (cfg.token_dim == 0 || cfg.cond_dim == 0) throw ConfigError("summarizer dimensions must be positive");
    const Partition part = Partition::kSemanticTemporal;
    store.add(prefix + ".query", Tensor({cfg.token_dim}), part);
    store.add(prefix + ".proj.w", rng.normal_tensor({cfg.token_dim, cfg.cond_dim}, stddev_for(cfg.token_dim)), part);
    store.add(prefix + ".proj.b", Tensor({cfg.cond_dim}), part);
}

SummarizerVars bind_summarizer_params(Tape& tape, ParamStore& store, const std::string& prefix) {
    return {tape.parameter(store, prefix + ".query"), tape.parameter(store, prefix + ".proj.w"),
            tape.parameter(store, prefix + ".proj.b")};
}

Var summarize_sequence(Tape& tape, const TokenSequence& seq, const SummarizerVars& p) {
    if (seq.empty()) throw DomainError("cannot summarize an empty token sequence");
    Var items = ops::stack(tape, seq.items, 0);
    Var pooled = ops::attention_pool(tape, items, p.query);
    return ops::dense(tape, pooled, p.w, p.b);
}

void register_tam_params(ParamStore& store, const TamConfig& cfg, Rng& rng) {
    const std::size_t frame_numel = shape_numel(cfg.frame_shape);
    if (cfg.frame_shape.size() != 3 || frame_numel == 0) {
        throw ConfigError("frame shape must be [H, W, C], got " + shape_to_string(cfg.frame_shape));
    }
    // Stand-in for the vision tower: a fixed random projection of the frame.
    store.add("tam.visual.weight", rng.normal_tensor({frame_numel, cfg.pte.token_dim}, stddev_for(frame_numel)),
              Partition::kFrozen);
    register_pte_params(store, "tam.pte", cfg.pte, rng);
    register_summarizer_params(store, "tam.summarizer", {cfg.pte.token_dim, cfg.cond_dim}, rng);
}

TamOutput encode_sequence(Tape& tape, ParamStore& store, const TamConfig& cfg, const std::vector<Tensor>& frames,
                          const std::vector<double>& timestamps, std::optional<double> target_timestamp) {
    if (frames.size() != timestamps.size()) {
        throw ArityError(std::to_string(frames.size()) + " frames but " + std::to_string(timestamps.size()) +
                         " timestamps");
    }
    Var visual_w = tape.parameter(store, "tam.visual.weight");
    Var zero_bias = tape.constant(Tensor({cfg.pte.token_dim}));
    std::vector<Var> visuals;
    for (const Tensor& f : frames) {
        if (f.shape() != cfg.frame_shape) {
            throw DimensionError("frame shape " + shape_to_string(f.shape()) + " != configured " +
                                 shape_to_string(cfg.frame_shape));
        }
        Var flat = tape.constant(f.reshaped({f.numel()}));
        visuals.push_back(ops::dense(tape, flat, visual_w, zero_bias));
    }
    std::vector<double> deltas;
    for (std::size_t i = 1; i < timestamps.size(); ++i) deltas.push_back(timestamps[i] - timestamps[i - 1]);

    const PteVars pte = bind_pte_params(tape, store, "tam.pte");
    TamOutput out;
    out.tokens = interleave_tokens(tape, visuals, deltas, pte);
    TokenSequence pooled = out.tokens;
    if (target_timestamp) {
        const double gap = *target_timestamp - timestamps.back();
        if (!(gap > 0.0)) throw DomainError("forecast date must lie after the last frame");
        pooled.kinds.push_back(TokenKind::kTemporal);
        pooled.items.push_back(pte_embed(tape, gap, pte));
    }
    out.semantic = summarize_sequence(tape, pooled, bind_summarizer_params(tape, store, "tam.summarizer"));
    return out;
}

}  // namespace tamms::tam
