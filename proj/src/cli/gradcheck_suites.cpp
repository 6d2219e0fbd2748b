#include "tamms/cli/gradcheck_suites.hpp"

#include <cmath>
#include <functional>

#include "tamms/core/errors.hpp"
#include "tamms/core/gradcheck.hpp"
#include "tamms/core/ops.hpp"
#include "tamms/diffusion/diffusion.hpp"
#include "tamms/sfci/sfci.hpp"
#include "tamms/tam/tam.hpp"

namespace tamms::cli {

namespace {

// Builds one random configuration into `store` and returns its scalar program.
using Builder = std::function<ScalarProgram(Rng&, ParamStore&)>;

struct Component {
    const char* name;
    Builder build;
    std::size_t samples;  // coordinates per parameter tensor
};

Var probe(Tape& tape, Var out, std::uint64_t seed) {
    Rng rng(seed);
    return ops::weighted_sum(tape, out, rng.uniform_tensor(tape.value(out).shape(), -1.0, 1.0));
}

void add(ParamStore& s, const std::string& name, Tensor v) {
    s.add(name, std::move(v), Partition::kStructural);
    s.set_trainable(Partition::kStructural, true);
}

// Random values everywhere, so zero-initialized layers do not hide paths.
// Query/key weights get a larger scale: near-uniform attention leaves their
// gradients at roundoff level where relative error means nothing.
void randomize(ParamStore& store, Rng& rng, double std = 0.6) {
    for (auto& [name, e] : store) {
        const bool qk = name.ends_with(".wq") || name.ends_with(".wk");
        // The residual stream adds roundoff to f but no gradient; a larger
        // output projection lets the attention branch dominate it.
        const double scale = qk ? 1.0 : name.ends_with(".wo") ? 1.5 : std;
        e.value = rng.normal_tensor(e.value.shape(), scale);
    }
}

// For the U-Net composites: keep the fan-in scaled init, which holds
// pre-activations near O(1), and only give the zero-initialized layers random
// values. Blanket random weights park SiLU units in their flat tail, and the
// resulting near-zero gradients drown in the roundoff of f(w +- h).
void randomize_zero_layers(ParamStore& store, Rng& rng, double std = 0.3) {
    for (auto& [name, e] : store) {
        if (name.starts_with("__")) continue;
        bool zero = true;
        for (double v : e.value.data()) zero = zero && v == 0.0;
        if (zero) e.value = rng.normal_tensor(e.value.shape(), std);
    }
}

void train_all(ParamStore& store) {
    for (auto& [name, e] : store) e.partition = Partition::kStructural;
    store.set_trainable(Partition::kStructural, true);
}

// ---------------------------------------------------------------- numeric_core

std::vector<Component> numeric_core_components() {
    return {
        {"dense",
         [](Rng& rng, ParamStore& s) -> ScalarProgram {
             const std::size_t din = 1 + rng.index(5), dout = 1 + rng.index(5);
             const auto act = static_cast<ops::Activation>(rng.index(5));
             add(s, "x", rng.normal_tensor({1 + rng.index(3), din}));
             // 1/sqrt(din) keeps sigmoid / GELU away from saturation
             add(s, "w", rng.normal_tensor({din, dout}, 1.0 / std::sqrt(static_cast<double>(din))));
             add(s, "b", rng.normal_tensor({dout}, 0.5));
             return [act](Tape& t, ParamStore& st) {
                 return probe(t, ops::dense(t, t.parameter(st, "x"), t.parameter(st, "w"), t.parameter(st, "b"), act), 1);
             };
         },
         16},
        {"conv3d",
         [](Rng& rng, ParamStore& s) -> ScalarProgram {
             const std::size_t C = 1 + rng.index(3), O = 1 + rng.index(3);
             add(s, "x", rng.normal_tensor({1 + rng.index(2), C, 1 + rng.index(3), 1 + rng.index(4), 1 + rng.index(4)}));
             add(s, "k", rng.normal_tensor({O, C, 1 + 2 * rng.index(2), 1 + 2 * rng.index(2), 3}));
             add(s, "b", rng.normal_tensor({O}));
             return [](Tape& t, ParamStore& st) {
                 return probe(t, ops::conv3d(t, t.parameter(st, "x"), t.parameter(st, "k"), t.parameter(st, "b")), 2);
             };
         },
         16},
        {"attention",
         [](Rng& rng, ParamStore& s) -> ScalarProgram {
             AttentionConfig cfg;
             cfg.heads = 1 + rng.index(2);
             cfg.dim = cfg.heads * (cfg.heads == 1 ? 4 + rng.index(2) : 2 + rng.index(2));
             cfg.feed_forward = rng.index(2) == 1;
             cfg.ffn_dim = cfg.feed_forward ? 2 + rng.index(4) : 0;
             register_attention_params(s, "attn", cfg, Partition::kStructural, rng);
             randomize(s, rng);
             add(s, "x", rng.normal_tensor({1 + rng.index(3), 3 + rng.index(3), cfg.dim}));
             return [cfg](Tape& t, ParamStore& st) {
                 return probe(t, attention_apply(t, t.parameter(st, "x"), bind_attention_params(t, st, "attn", cfg), cfg), 3);
             };
         },
         8},
    };
}

// ---------------------------------------------------------------- tam

std::vector<Component> tam_components() {
    return {
        {"pte",
         [](Rng& rng, ParamStore& s) -> ScalarProgram {
             tam::PteConfig cfg{1 + rng.index(6), 1 + rng.index(6)};
             tam::register_pte_params(s, "pte", cfg, rng);
             randomize(s, rng, 0.8);
             train_all(s);
             std::vector<double> days;
             for (std::size_t i = 0, n = 1 + rng.index(3); i < n; ++i) days.push_back(std::floor(rng.uniform(0, 4000)));
             return [days](Tape& t, ParamStore& st) {
                 tam::PteVars p = tam::bind_pte_params(t, st, "pte");
                 Var acc = probe(t, tam::pte_embed(t, days[0], p), 4);
                 for (std::size_t i = 1; i < days.size(); ++i) acc = ops::add(t, acc, probe(t, tam::pte_embed(t, days[i], p), 4 + i));
                 return acc;
             };
         },
         16},
        {"tam_summary",
         [](Rng& rng, ParamStore& s) -> ScalarProgram {
             tam::TamConfig cfg;
             cfg.frame_shape = {2 + rng.index(3), 2 + rng.index(3), 1 + rng.index(3)};
             cfg.pte = {2 + rng.index(4), 2 + rng.index(4)};
             cfg.cond_dim = 1 + rng.index(5);
             tam::register_tam_params(s, cfg, rng);
             s.mutable_value("tam.summarizer.query") = rng.normal_tensor({cfg.pte.token_dim});
             std::vector<Tensor> frames;
             std::vector<double> ts;
             for (std::size_t i = 0, n = 2 + rng.index(3); i < n; ++i) {
                 frames.push_back(rng.uniform_tensor(cfg.frame_shape, 0, 1));
                 ts.push_back(i == 0 ? 0.0 : ts.back() + std::floor(rng.uniform(30, 1100)));
             }
             const double target = ts.back() + std::floor(rng.uniform(30, 1100));
             s.set_trainable(Partition::kSemanticTemporal, true);
             return [cfg, frames, ts, target](Tape& t, ParamStore& st) {
                 tam::TamOutput o = tam::encode_sequence(t, st, cfg, frames, ts, target);
                 return ops::add(t, probe(t, o.semantic, 5), tam::temporal_smoothness_loss(t, o.tokens));
             };
         },
         12},
    };
}

// ---------------------------------------------------------------- sfci

sfci::ControlLevelConfig random_level(Rng& rng) {
    sfci::ControlLevelConfig cfg;
    cfg.heads = 1 + rng.index(2);
    cfg.enc_channels = 1 + rng.index(2);
    // Attention configs stay in the well-conditioned regime: C' >= 4, T >= 3.
    cfg.ctrl_channels = cfg.heads * (cfg.heads == 1 ? 4 + 2 * rng.index(2) : 2 + rng.index(2));
    cfg.cond_dim = 1 + rng.index(3);
    cfg.fusion_dim = 1 + rng.index(3);
    cfg.out_kernel = rng.index(2) == 0 ? 1 : 3;
    return cfg;
}

struct LevelCase {
    sfci::ControlLevelConfig cfg;
    std::size_t B, T, H, W;
};

LevelCase level_case(Rng& rng, ParamStore& s) {
    LevelCase c{random_level(rng), 1 + rng.index(2), 3 + rng.index(2), 1 + rng.index(3), 1 + rng.index(3)};
    sfci::register_level_params(s, c.cfg, rng);
    randomize(s, rng);
    return c;
}

std::vector<Component> sfci_components() {
    return {
        {"structural",
         [](Rng& rng, ParamStore& s) -> ScalarProgram {
             LevelCase c = level_case(rng, s);
             add(s, "h_enc", rng.normal_tensor({c.B, c.cfg.enc_channels, c.T, c.H, c.W}));
             train_all(s);
             return [c](Tape& t, ParamStore& st) {
                 sfci::LevelVars p = sfci::bind_level_params(t, st, c.cfg);
                 return probe(t, sfci::structural_path(t, t.parameter(st, "h_enc"), p.structural), 6);
             };
         },
         6},
        {"semproc",
         [](Rng& rng, ParamStore& s) -> ScalarProgram {
             LevelCase c = level_case(rng, s);
             add(s, "m", rng.normal_tensor({c.B, c.cfg.cond_dim}));
             train_all(s);
             return [c](Tape& t, ParamStore& st) {
                 sfci::LevelVars p = sfci::bind_level_params(t, st, c.cfg);
                 return probe(t, sfci::semantic_project(t, t.parameter(st, "m"), p.semantic), 7);
             };
         },
         8},
        {"gate",
         [](Rng& rng, ParamStore& s) -> ScalarProgram {
             LevelCase c = level_case(rng, s);
             const std::size_t cc = c.cfg.ctrl_channels;
             add(s, "h_ctrl", rng.normal_tensor({c.B, cc, c.T, c.H, c.W}));
             add(s, "s_proj", rng.normal_tensor({c.B, cc}));
             train_all(s);
             return [c](Tape& t, ParamStore& st) {
                 sfci::LevelVars p = sfci::bind_level_params(t, st, c.cfg);
                 Var s_proj = t.parameter(st, "s_proj");
                 Var tiled = sfci::tile_spatial(t, s_proj, c.T, c.H, c.W);
                 sfci::GateOutput g = sfci::gated_fuse(t, t.parameter(st, "h_ctrl"), s_proj, tiled, p.gate);
                 return ops::add(t, probe(t, g.f, 8), probe(t, g.g, 9));
             };
         },
         8},
        {"temporal_refine",
         [](Rng& rng, ParamStore& s) -> ScalarProgram {
             LevelCase c = level_case(rng, s);
             add(s, "f", rng.normal_tensor({c.B, c.cfg.ctrl_channels, c.T, c.H, c.W}));
             train_all(s);
             return [c](Tape& t, ParamStore& st) {
                 sfci::LevelVars p = sfci::bind_level_params(t, st, c.cfg);
                 return probe(t, sfci::temporal_refine(t, t.parameter(st, "f"), p, c.cfg), 10);
             };
         },
         6},
        {"level",
         // Whole-level wiring, checked through its inputs. The layer weights
         // are covered one by one above; through the full level the temporal
         // q/k gradients shrink to ~1e-7 and sit at the roundoff floor.
         [](Rng& rng, ParamStore& s) -> ScalarProgram {
             LevelCase c = level_case(rng, s);
             for (auto& [name, e] : s) e.partition = Partition::kFrozen;
             add(s, "h_enc", rng.normal_tensor({c.B, c.cfg.enc_channels, c.T, c.H, c.W}));
             add(s, "m", rng.normal_tensor({c.B, c.cfg.cond_dim}));
             add(s, "skip", rng.normal_tensor({c.B, c.cfg.ctrl_channels, c.H, c.W}));
             return [c](Tape& t, ParamStore& st) {
                 sfci::LevelState ls = sfci::level_forward(t, t.parameter(st, "h_enc"), t.parameter(st, "m"),
                                                           sfci::bind_level_params(t, st, c.cfg), c.cfg,
                                                           sfci::SemanticMode::kFull);
                 return probe(t, sfci::aggregate_and_inject(t, ls.z, t.parameter(st, "skip")), 11);
             };
         },
         6},
    };
}

// ---------------------------------------------------------------- diffusion

std::vector<Component> diffusion_components() {
    return {
        {"unet",
         [](Rng& rng, ParamStore& s) -> ScalarProgram {
             diffusion::UNetConfig cfg;
             cfg.image_channels = 1 + rng.index(3);
             cfg.ch1 = 1 + rng.index(3);
             cfg.ch2 = 1 + rng.index(3);
             cfg.temb_dim = 2 * (1 + rng.index(3));
             diffusion::register_unet_params(s, cfg, Partition::kFrozen, rng);
             randomize_zero_layers(s, rng);
             const std::size_t B = 1 + rng.index(2), N = 2 * (1 + rng.index(2));
             add(s, "x_t", rng.normal_tensor({B, cfg.image_channels, N, N}));
             add(s, "z1", rng.normal_tensor({B, cfg.ch1, N, N}));
             add(s, "z2", rng.normal_tensor({B, cfg.ch2, N / 2, N / 2}));
             std::vector<std::size_t> steps;
             for (std::size_t b = 0; b < B; ++b) steps.push_back(rng.index(100));
             s.set_trainable(Partition::kStructural, true);
             return [steps](Tape& t, ParamStore& st) {
                 diffusion::UNetVars p = diffusion::bind_unet_params(t, st);
                 Var out = diffusion::unet_denoise(t, p, t.parameter(st, "x_t"), steps,
                                                   {t.parameter(st, "z1"), t.parameter(st, "z2")});
                 return probe(t, out, 12);
             };
         },
         4},
        {"conditioned_denoise",
         [](Rng& rng, ParamStore& s) -> ScalarProgram {
             // Whole model with fixed random weights; the checked coordinate is
             // the noisy input, whose gradient runs through the encoder, both
             // control levels (via the current-step time slice) and the decoder.
             diffusion::ModelConfig cfg;
             cfg.frame_size = 4;
             cfg.history = 2 + rng.index(2);
             cfg.diffusion_steps = 10;
             cfg.unet = {1 + rng.index(2), 4, 4, 4};
             cfg.tam.cond_dim = 1 + rng.index(3);
             cfg.tam.pte = {2, 2};
             cfg.fusion_dim = 1 + rng.index(3);
             cfg.heads = 1;
             cfg.ctrl_out_kernel = rng.index(2) == 0 ? 1 : 3;
             diffusion::init_model(s, cfg, rng.next_u64());
             randomize_zero_layers(s, rng);
             for (const std::string& n : s.names()) s.retag(n, Partition::kFrozen);
             io::SitsSequence seq;
             seq.id = "g";
             for (std::size_t i = 0; i <= cfg.history; ++i) {
                 seq.frames.push_back(rng.uniform_tensor({4, 4, cfg.unet.image_channels}, 0, 1));
                 seq.timestamps.push_back(static_cast<std::int64_t>(i * 200 + rng.index(100)));
             }
             auto ctx = std::make_shared<diffusion::ForecastContext>(diffusion::make_context(cfg, seq, 0, std::nullopt));
             add(s, "x_t", rng.normal_tensor({1, cfg.unet.image_channels, 4, 4}));
             const std::size_t step = rng.index(10);
             const auto source = rng.index(2) == 0 ? diffusion::SemanticSource::kFull : diffusion::SemanticSource::kZeroed;
             return [cfg, ctx, step, source](Tape& t, ParamStore& st) {
                 Var eps = diffusion::denoise_conditioned(t, st, cfg, t.parameter(st, "x_t"), {step}, {ctx.get()}, source);
                 return probe(t, eps, 13);
             };
         },
         48},
    };
}

std::vector<Component> components_of(std::string_view module) {
    if (module == "numeric_core") return numeric_core_components();
    if (module == "tam") return tam_components();
    if (module == "sfci") return sfci_components();
    if (module == "diffusion") return diffusion_components();
    throw ConfigError("unknown gradcheck module '" + std::string(module) + "'");
}

}  // namespace

const std::vector<std::string>& gradcheck_modules() {
    static const std::vector<std::string> names{"numeric_core", "tam", "sfci", "diffusion"};
    return names;
}

std::vector<GradcheckResult> run_gradcheck(std::string_view module, std::uint64_t seed, std::size_t configs) {
    std::vector<std::string> modules;
    if (module == "all") {
        modules = gradcheck_modules();
    } else {
        components_of(module);  // validates the name
        modules.emplace_back(module);
    }
    std::vector<GradcheckResult> out;
    std::uint64_t salt = 0;
    for (const std::string& m : modules) {
        for (const Component& c : components_of(m)) {
            ++salt;
            GradcheckResult r;
            r.module = m;
            r.component = c.name;
            r.configs = configs;
            for (std::size_t k = 0; k < configs; ++k) {
                const std::uint64_t cfg_seed = mix_seed(mix_seed(seed, salt), k);
                Rng rng(cfg_seed);
                ParamStore store;
                ScalarProgram prog = c.build(rng, store);
                if (store.names_in(Partition::kStructural).size() + store.names_in(Partition::kSemanticTemporal).size() == 0) {
                    throw StateError("gradcheck component " + std::string(c.name) + " has no trainable parameters");
                }
                FiniteDiffReport fd = finite_diff_check(prog, store, {.samples = c.samples, .seed = cfg_seed});
                r.coordinates += fd.coordinates_checked;
                if (k == 0 || fd.max_rel_error > r.max_rel_error) {
                    r.max_rel_error = fd.max_rel_error;
                    r.worst_parameter = fd.worst_parameter;
                    r.worst_config = k;
                    r.worst_analytic = fd.worst_analytic;
                    r.worst_numeric = fd.worst_numeric;
                }
            }
            out.push_back(std::move(r));
        }
    }
    return out;
}

}  // namespace tamms::cli
