#include <algorithm>
#include <cmath>

#include "tamms/core/errors.hpp"
#include "tamms/core/ops.hpp"
#include "tamms/core/optim.hpp"
#include "tamms/diffusion/diffusion.hpp"

namespace tamms::diffusion {

namespace {

constexpr const char* kStageKey = "__meta.completed_stage";

// Concatenates equally shaped tensors along a new leading axis.
Tensor stack_tensors(const std::vector<const Tensor*>& items) {
    Shape shape = items.front()->shape();
    shape.insert(shape.begin(), items.size());
    Tensor out(shape);
    const std::size_t n = items.front()->numel();
    for (std::size_t b = 0; b < items.size(); ++b) {
        require_same_shape(*items[b], *items.front(), "batch item");
        std::copy(items[b]->data().begin(), items[b]->data().end(), out.data().begin() + b * n);
    }
    return out;
}

void require_stage_ready(const ParamStore& store, int stage) {
    const int done = completed_stage(store);
    if (stage == 0) {
        if (done != -1) throw StateError("stage 0 expects a freshly initialized model, found completed stage " +
                                         std::to_string(done));
        return;
    }
    if (done < 0) {
        throw StateError("stage " + std::to_string(stage) + " requires pretrained U-Net weights (stage 0 checkpoint)");
    }
    if (done != stage - 1) {
        throw StateError("stage " + std::to_string(stage) + " requires a stage-" + std::to_string(stage - 1) +
                         " checkpoint, found completed stage " + std::to_string(done));
    }
}

}  // namespace

std::vector<sfci::ControlLevelConfig> ModelConfig::levels() const {
    std::vector<sfci::ControlLevelConfig> out;
    std::size_t level = 1;
    for (std::size_t ch : {unet.ch1, unet.ch2}) {
        sfci::ControlLevelConfig c;
        c.level = level++;
        c.enc_channels = ch;
        c.ctrl_channels = ch;
        c.cond_dim = tam.cond_dim;
        c.fusion_dim = fusion_dim;
        c.heads = heads;
        c.feed_forward = feed_forward;
        c.ffn_dim = feed_forward ? 2 * ch : 0;
        c.dropout = dropout;
        c.alpha_init = alpha_init;
        c.out_kernel = ctrl_out_kernel;
        out.push_back(c);
    }
    return out;
}

tam::TamConfig ModelConfig::tam_config() const {
    tam::TamConfig t = tam;
    t.frame_shape = {frame_size, frame_size, unet.image_channels};
    return t;
}

void validate(const ModelConfig& cfg) {
    validate(cfg.unet);
    if (cfg.frame_size < 4 || cfg.frame_size % 2 != 0) throw ConfigError("frame_size must be even and >= 4");
    if (cfg.history < 2) throw ConfigError("history must be at least 2 frames");
    if (cfg.diffusion_steps < 2) throw ConfigError("diffusion_steps must be at least 2");
    for (const auto& l : cfg.levels()) sfci::validate_level_config(l);
}

void init_model(ParamStore& store, const ModelConfig& cfg, std::uint64_t seed) {
    validate(cfg);
    Rng unet_rng(mix_seed(seed, 1));
    register_unet_params(store, cfg.unet, Partition::kBackbone, unet_rng);
    Rng sfci_rng(mix_seed(seed, 2));
    for (const auto& l : cfg.levels()) sfci::register_level_params(store, l, sfci_rng);
    Rng tam_rng(mix_seed(seed, 3));
    tam::register_tam_params(store, cfg.tam_config(), tam_rng);
    store.add(kStageKey, Tensor::vector({-1.0}), Partition::kFrozen);
}

int completed_stage(const ParamStore& store) {
    if (!store.contains(kStageKey)) return -1;
    return static_cast<int>(store.value(kStageKey)[0]);
}

void set_completed_stage(ParamStore& store, int stage) {
    if (!store.contains(kStageKey)) store.add(kStageKey, Tensor::vector({-1.0}), Partition::kFrozen);
    store.mutable_value(kStageKey)[0] = static_cast<double>(stage);
}

Tensor to_network(const Tensor& frame) {
    if (frame.rank() != 3) throw DimensionError("frame must be [H,W,C], got " + shape_to_string(frame.shape()));
    const std::size_t H = frame.dim(0), W = frame.dim(1), C = frame.dim(2);
    Tensor out({1, C, H, W});
    for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j)
            for (std::size_t c = 0; c < C; ++c) out[(c * H + i) * W + j] = 2.0 * frame[(i * W + j) * C + c] - 1.0;
    return out;
}

Tensor from_network(const Tensor& x, std::size_t item) {
    if (x.rank() != 4 || item >= x.dim(0)) throw DimensionError("expected [B,C,H,W] with item < B");
    const std::size_t C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t base = item * C * H * W;
    Tensor out({H, W, C});
    for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j)
            for (std::size_t c = 0; c < C; ++c) out[(i * W + j) * C + c] = 0.5 * (x[base + (c * H + i) * W + j] + 1.0);
    return out;
}

Tensor batch_to_network(const std::vector<const Tensor*>& frames) {
    std::vector<Tensor> conv;
    std::vector<const Tensor*> ptrs;
    conv.reserve(frames.size());
    for (const Tensor* f : frames) {
        Tensor x = to_network(*f);
        conv.push_back(x.reshaped({x.dim(1), x.dim(2), x.dim(3)}));
    }
    for (const Tensor& t : conv) ptrs.push_back(&t);
    return stack_tensors(ptrs);
}

std::vector<Var> history_features(Tape& tape, ParamStore& store, const std::vector<const ForecastContext*>& batch,
                                  const std::vector<std::size_t>& t) {
    if (batch.empty() || batch.size() != t.size()) throw ArityError("history_features needs one timestep per context");
    std::vector<const Tensor*> hist;
    for (const ForecastContext* c : batch) hist.push_back(&c->history);
    Tensor x = stack_tensors(hist);  // [B,T,C,H,W]
    const std::size_t B = x.dim(0), T = x.dim(1);
    std::vector<std::size_t> tt;
    for (std::size_t b = 0; b < B; ++b) tt.insert(tt.end(), T, t[b]);
    const UNetVars p = bind_unet_params(tape, store);
    Encoded e = unet_encode(tape, p, tape.constant(x.reshaped({B * T, x.dim(2), x.dim(3), x.dim(4)})), tt);
    std::vector<Var> out;
    for (Var skip : {e.skip1, e.skip2}) {
        const Shape& s = tape.value(skip).shape();
        Var r = ops::reshape(tape, skip, {B, T, s[1], s[2], s[3]});
        out.push_back(ops::permute(tape, r, {0, 2, 1, 3, 4}));
    }
    return out;
}

std::vector<Var> compute_controls(Tape& tape, ParamStore& store, const ModelConfig& cfg,
                                  const std::vector<const ForecastContext*>& batch, const std::vector<std::size_t>& t,
                                  const Encoded& current, SemanticSource source) {
    if (batch.empty()) throw DomainError("compute_controls needs at least one context");
    Var m;
    if (source == SemanticSource::kFull) {
        const tam::TamConfig tcfg = cfg.tam_config();
        std::vector<Var> ms;
        for (const ForecastContext* c : batch) {
            ms.push_back(tam::encode_sequence(tape, store, tcfg, c->frames, c->timestamps, c->target_timestamp).semantic);
        }
        m = ops::stack(tape, ms, 0);
    }
    const auto mode = source == SemanticSource::kFull ? sfci::SemanticMode::kFull : sfci::SemanticMode::kZeroed;
    const std::vector<Var> hist = history_features(tape, store, batch, t);
    const Var skips[2] = {current.skip1, current.skip2};
    std::vector<Var> out;
    const auto levels = cfg.levels();
    for (std::size_t l = 0; l < levels.size(); ++l) {
        Shape s = tape.value(skips[l]).shape();
        s.insert(s.begin() + 2, 1);
        Var h_enc = ops::concat(tape, hist[l], ops::reshape(tape, skips[l], s), 2);
        sfci::LevelVars vars = sfci::bind_level_params(tape, store, levels[l]);
        sfci::LevelState st = sfci::level_forward(tape, h_enc, m, vars, levels[l], mode);
        out.push_back(sfci::aggregate_time(tape, st.z));
    }
    return out;
}

Var denoise_conditioned(Tape& tape, ParamStore& store, const ModelConfig& cfg, Var x_t,
                        const std::vector<std::size_t>& t, const std::vector<const ForecastContext*>& batch,
                        SemanticSource source) {
    const UNetVars p = bind_unet_params(tape, store);
    const Encoded enc = unet_encode(tape, p, x_t, t);
    return unet_decode(tape, p, enc, compute_controls(tape, store, cfg, batch, t, enc, source));
}

ForecastContext make_context(const ModelConfig& cfg, const io::SitsSequence& seq, std::size_t start,
                             std::optional<std::int64_t> target_day) {
    if (start + cfg.history > seq.size()) throw ArityError("history window runs past the end of the sequence");
    ForecastContext c;
    std::vector<const Tensor*> ptrs;
    for (std::size_t i = start; i < start + cfg.history; ++i) {
        if (seq.frames[i].shape() != Shape{cfg.frame_size, cfg.frame_size, cfg.unet.image_channels}) {
            throw DimensionError("history frame shape " + shape_to_string(seq.frames[i].shape()) +
                                 " does not match the model");
        }
        c.frames.push_back(seq.frames[i]);
        c.timestamps.push_back(static_cast<double>(seq.timestamps[i]));
        ptrs.push_back(&seq.frames[i]);
    }
    if (target_day) {
        c.target_timestamp = static_cast<double>(*target_day);
    } else {
        if (start + cfg.history >= seq.size()) throw ArityError("sequence has no target frame after the window");
        c.target_timestamp = static_cast<double>(seq.timestamps[start + cfg.history]);
    }
    if (!(c.target_timestamp > c.timestamps.back())) throw DomainError("forecast date must follow the history");
    c.history = batch_to_network(ptrs);
    return c;
}

// ---------------------------------------------------------------- training

Partition StageConfig::trainable() const {
    switch (stage) {
        case 0: return Partition::kBackbone;
        case 1: return Partition::kStructural;
        case 2:
        case 3: return Partition::kSemanticTemporal;
    }
    throw ConfigError("stage must be 0, 1, 2 or 3, got " + std::to_string(stage));
}

StageConfig default_stage(int stage) {
    StageConfig s;
    s.stage = stage;
    switch (stage) {
        case 0: s.steps = 1000; break;
        case 1: s.steps = 2000; break;
        case 2: s.steps = 1000; break;
        case 3: s.steps = 500; break;
        default: throw ConfigError("stage must be 0, 1, 2 or 3, got " + std::to_string(stage));
    }
    return s;
}

std::vector<Sample> make_samples(const std::vector<io::SitsSequence>& data, std::size_t history) {
    std::vector<Sample> out;
    for (const io::SitsSequence& s : data) {
        for (std::size_t start = 0; start + history < s.size(); ++start) out.push_back({&s, start});
    }
    return out;
}

namespace {

void validate_stage(const StageConfig& s) {
    s.trainable();
    if (s.batch == 0) throw ConfigError("batch size must be positive");
    if (!(s.lr > 0.0) || !std::isfinite(s.lr)) throw ConfigError("learning rate must be positive");
    if (!(s.lr_min >= 0.0) || s.lr_min > s.lr) throw ConfigError("lr_min must lie in [0, lr]");
    if (!(s.weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
}

// Noised batch for the given x0 [B,C,H,W]: per-item timestep and noise.
Tensor noised_batch(const Tensor& x0, const std::vector<std::size_t>& t, const Tensor& eps,
                    const NoiseSchedule& sched) {
    const std::size_t per = x0.numel() / x0.dim(0);
    Tensor out(x0.shape());
    for (std::size_t b = 0; b < t.size(); ++b) {
        const double a = std::sqrt(sched.alphas_cumprod[t[b]]);
        const double s = std::sqrt(1.0 - sched.alphas_cumprod[t[b]]);
        for (std::size_t i = b * per; i < (b + 1) * per; ++i) out[i] = a * x0[i] + s * eps[i];
    }
    return out;
}

Var batch_loss(Tape& tape, ParamStore& store, const ModelConfig& cfg, const NoiseSchedule& sched,
               const Tensor& x0, const std::vector<std::size_t>& t, const Tensor& eps,
               const std::vector<const ForecastContext*>& contexts, SemanticSource source) {
    Var x_t = tape.constant(noised_batch(x0, t, eps, sched));
    Var eps_hat = contexts.empty() ? unet_denoise(tape, bind_unet_params(tape, store), x_t, t)
                                   : denoise_conditioned(tape, store, cfg, x_t, t, contexts, source);
    return ops::mse(tape, eps_hat, tape.constant(eps));
}

}  // namespace

TrainReport train_stage(const StageConfig& stage, const std::vector<io::SitsSequence>& data, ParamStore& store,
                        const ModelConfig& cfg, std::uint64_t seed) {
    validate_stage(stage);
    validate(cfg);
    if (data.empty()) throw DomainError("training data set is empty");
    require_stage_ready(store, stage.stage);
    check_compatible(store, cfg);

    const Partition part = stage.trainable();
    const NoiseSchedule sched = make_noise_schedule(cfg.diffusion_steps);
    const SemanticSource source = stage.stage == 1 ? SemanticSource::kZeroed : SemanticSource::kFull;

    // Stage 0 draws single frames; later stages draw history windows with
    // their target frame.
    std::vector<const Tensor*> frames;
    std::vector<ForecastContext> contexts;
    std::vector<const Tensor*> targets;
    if (stage.stage == 0) {
        for (const auto& s : data)
            for (const Tensor& f : s.frames) frames.push_back(&f);
    } else {
        for (const Sample& s : make_samples(data, cfg.history)) {
            contexts.push_back(make_context(cfg, *s.seq, s.start, std::nullopt));
            targets.push_back(&s.seq->frames[s.start + cfg.history]);
        }
        if (contexts.empty()) {
            throw DomainError("no sequence has " + std::to_string(cfg.history + 1) + " frames for history + target");
        }
    }

    store.freeze_all();
    store.set_trainable(part, true);
    store.zero_grad();
    AdamWConfig opt;
    opt.weight_decay = stage.weight_decay;

    TrainReport report;
    report.stage = stage.stage;
    report.steps = stage.steps;
    report.seed = seed;
    for (std::size_t step = 0; step < stage.steps; ++step) {
        Rng rng(mix_seed(seed, step));
        std::vector<const Tensor*> x0s;
        std::vector<const ForecastContext*> batch_ctx;
        for (std::size_t b = 0; b < stage.batch; ++b) {
            if (stage.stage == 0) {
                x0s.push_back(frames[rng.index(frames.size())]);
            } else {
                const std::size_t k = rng.index(contexts.size());
                x0s.push_back(targets[k]);
                batch_ctx.push_back(&contexts[k]);
            }
        }
        std::vector<std::size_t> t;
        for (std::size_t b = 0; b < stage.batch; ++b) t.push_back(rng.index(sched.steps));
        const Tensor x0 = batch_to_network(x0s);
        const Tensor eps = rng.normal_tensor(x0.shape());

        Tape tape;
        Var loss = batch_loss(tape, store, cfg, sched, x0, t, eps, batch_ctx, source);
        report.loss.push_back(tape.value(loss).item());
        tape.backward(loss);
        clip_grad_norm(store, stage.grad_clip);
        opt.lr = stage.cosine() ? cosine_lr(step, stage.steps, stage.lr, stage.lr_min) : stage.lr;
        adamw_step(store, opt);
    }
    store.freeze_all();
    store.zero_grad();

    if (stage.stage == 0) {
        for (const std::string& name : store.names_in(Partition::kBackbone)) store.retag(name, Partition::kFrozen);
    }
    set_completed_stage(store, stage.stage);
    return report;
}

double micro_batch_loss(ParamStore& store, const ModelConfig& cfg, const std::vector<Tensor>& targets,
                        const std::vector<std::size_t>& t, const std::vector<Tensor>& eps,
                        const std::vector<const ForecastContext*>& contexts, SemanticSource source) {
    if (targets.empty() || targets.size() != t.size() || targets.size() != eps.size()) {
        throw ArityError("micro batch needs matching, non-empty targets, timesteps and noise");
    }
    if (!contexts.empty() && contexts.size() != targets.size()) throw ArityError("one context per target");
    const NoiseSchedule sched = make_noise_schedule(cfg.diffusion_steps);
    std::vector<const Tensor*> tp, ep;
    for (const Tensor& x : targets) tp.push_back(&x);
    for (const Tensor& e : eps) ep.push_back(&e);
    const Tensor x0 = batch_to_network(tp);
    const Tensor e = stack_tensors(ep);
    for (std::size_t v : t) {
        if (v >= sched.steps) throw IndexError("timestep outside the schedule");
    }
    Tape tape(Tape::Mode::kInference);
    return tape.value(batch_loss(tape, store, cfg, sched, x0, t, e.reshaped(x0.shape()), contexts, source)).item();
}

// ---------------------------------------------------------------- sampling

Tensor sample_forecast(const io::SitsSequence& history_seq, std::int64_t target_day, ParamStore& store,
                       const ModelConfig& cfg, const NoiseSchedule& sched, std::uint64_t seed,
                       SemanticSource source) {
    if (history_seq.size() != cfg.history) {
        throw ArityError("forecast needs exactly " + std::to_string(cfg.history) + " history frames, got " +
                         std::to_string(history_seq.size()));
    }
    if (completed_stage(store) < 1) throw StateError("forecasting needs a checkpoint that completed stage 1 or later");
    check_compatible(store, cfg);
    const ForecastContext ctx = make_context(cfg, history_seq, 0, target_day);

    const std::size_t C = cfg.unet.image_channels, N = cfg.frame_size;
    Rng rng(seed);
    Tensor x = rng.normal_tensor({1, C, N, N});
    Tensor x0_hat(x.shape());
    for (std::size_t step = sched.steps; step-- > 0;) {
        Tape tape(Tape::Mode::kInference);
        const Tensor& eps = tape.value(denoise_conditioned(tape, store, cfg, tape.constant(x), {step}, {&ctx}, source));

        const double abar = sched.alphas_cumprod[step];
        const double abar_prev = step > 0 ? sched.alphas_cumprod[step - 1] : 1.0;
        const double beta = sched.betas[step];
        for (std::size_t i = 0; i < x.numel(); ++i) {
            x0_hat[i] = std::clamp((x[i] - std::sqrt(1.0 - abar) * eps[i]) / std::sqrt(abar), -1.0, 1.0);
        }
        if (step == 0) break;
        const double c0 = beta * std::sqrt(abar_prev) / (1.0 - abar);
        const double ct = (1.0 - abar_prev) * std::sqrt(1.0 - beta) / (1.0 - abar);
        const double sd = std::sqrt(beta * (1.0 - abar_prev) / (1.0 - abar));
        for (std::size_t i = 0; i < x.numel(); ++i) x[i] = c0 * x0_hat[i] + ct * x[i] + sd * rng.normal();
    }
    Tensor out = from_network(x0_hat);
    for (double& v : out.data()) v = std::clamp(v, 0.0, 1.0);
    return out;
}

}  // namespace tamms::diffusion
