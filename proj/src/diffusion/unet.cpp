#include <cmath>

#include "tamms/core/errors.hpp"
#include "tamms/core/ops.hpp"
#include "tamms/diffusion/diffusion.hpp"

namespace tamms::diffusion {

using ops::Activation;

NoiseSchedule make_noise_schedule(std::size_t steps) {
    if (steps < 2) throw ConfigError("noise schedule needs at least 2 steps, got " + std::to_string(steps));
    NoiseSchedule s;
    s.steps = steps;
    s.betas = Tensor({steps});
    s.alphas_cumprod = Tensor({steps});
    const double lo = 1e-4, hi = 0.02;
    double prod = 1.0;
    for (std::size_t i = 0; i < steps; ++i) {
        s.betas[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(steps - 1);
        prod *= 1.0 - s.betas[i];
        s.alphas_cumprod[i] = prod;
    }
    return s;
}

Tensor q_sample(const Tensor& x0, std::size_t t, const Tensor& eps, const NoiseSchedule& sched) {
    if (t >= sched.steps) {
        throw IndexError("timestep " + std::to_string(t) + " outside schedule of " + std::to_string(sched.steps));
    }
    require_same_shape(x0, eps, "q_sample eps");
    const double a = std::sqrt(sched.alphas_cumprod[t]);
    const double b = std::sqrt(1.0 - sched.alphas_cumprod[t]);
    Tensor out(x0.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a * x0[i] + b * eps[i];
    return out;
}

void validate(const UNetConfig& cfg) {
    if (cfg.image_channels == 0 || cfg.ch1 == 0 || cfg.ch2 == 0) throw ConfigError("U-Net channels must be positive");
    if (cfg.temb_dim < 2 || cfg.temb_dim % 2 != 0) throw ConfigError("timestep embedding width must be even");
}

void register_unet_params(ParamStore& store, const UNetConfig& cfg, Partition partition, Rng& rng) {
    validate(cfg);
    const std::size_t C = cfg.image_channels, c1 = cfg.ch1, c2 = cfg.ch2, D = cfg.temb_dim;
    auto conv = [&](const std::string& name, std::size_t out, std::size_t in, double gain = 2.0) {
        store.add("unet." + name + ".k", rng.normal_tensor({out, in, 3, 3}, std::sqrt(gain / (9.0 * in))), partition);
        store.add("unet." + name + ".b", Tensor({out}), partition);
    };
    auto time_proj = [&](const std::string& name, std::size_t out) {
        store.add("unet." + name + ".tw", rng.normal_tensor({D, out}, std::sqrt(1.0 / D)), partition);
        store.add("unet." + name + ".tb", Tensor({out}), partition);
    };
    store.add("unet.temb.w", rng.normal_tensor({D, D}, std::sqrt(1.0 / D)), partition);
    store.add("unet.temb.b", Tensor({D}), partition);
    conv("enc1a", c1, C);
    conv("enc1b", c1, c1);
    time_proj("enc1b", c1);
    conv("enc2", c2, c1);
    time_proj("enc2", c2);
    conv("mid", c2, c2);
    conv("dec2", c2, 2 * c2);
    conv("dec1a", c1, c2);
    time_proj("dec1a", c1);
    conv("dec1b", c1, 2 * c1);
    conv("out", C, c1, 0.1);
}

Tensor timestep_features(const std::vector<std::size_t>& t, std::size_t dim) {
    if (dim < 2 || dim % 2 != 0) throw ConfigError("timestep embedding width must be even");
    const std::size_t half = dim / 2;
    Tensor out({t.size(), dim});
    for (std::size_t b = 0; b < t.size(); ++b) {
        for (std::size_t i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
            const double arg = static_cast<double>(t[b]) * freq;
            out[b * dim + i] = std::sin(arg);
            out[b * dim + half + i] = std::cos(arg);
        }
    }
    return out;
}

UNetVars bind_unet_params(Tape& tape, ParamStore& store) {
    auto p = [&](const char* name) { return tape.parameter(store, std::string("unet.") + name); };
    UNetVars v;
    v.temb_w = p("temb.w");
    v.temb_b = p("temb.b");
    v.enc1a_k = p("enc1a.k");
    v.enc1a_b = p("enc1a.b");
    v.enc1b_k = p("enc1b.k");
    v.enc1b_b = p("enc1b.b");
    v.enc1b_tw = p("enc1b.tw");
    v.enc1b_tb = p("enc1b.tb");
    v.enc2_k = p("enc2.k");
    v.enc2_b = p("enc2.b");
    v.enc2_tw = p("enc2.tw");
    v.enc2_tb = p("enc2.tb");
    v.mid_k = p("mid.k");
    v.mid_b = p("mid.b");
    v.dec2_k = p("dec2.k");
    v.dec2_b = p("dec2.b");
    v.dec1a_k = p("dec1a.k");
    v.dec1a_b = p("dec1a.b");
    v.dec1a_tw = p("dec1a.tw");
    v.dec1a_tb = p("dec1a.tb");
    v.dec1b_k = p("dec1b.k");
    v.dec1b_b = p("dec1b.b");
    v.out_k = p("out.k");
    v.out_b = p("out.b");
    return v;
}

namespace {

Var conv_silu(Tape& tape, Var x, Var k, Var b) {
    return ops::activation(tape, ops::conv2d(tape, x, k, b), Activation::kSilu);
}

// conv, plus a per-item channel bias projected from the timestep embedding, then SiLU.
Var conv_time_silu(Tape& tape, Var x, Var k, Var b, Var temb, Var tw, Var tb) {
    Var h = ops::conv2d(tape, x, k, b);
    h = ops::add_channel_bias(tape, h, ops::dense(tape, temb, tw, tb));
    return ops::activation(tape, h, Activation::kSilu);
}

}  // namespace

Encoded unet_encode(Tape& tape, const UNetVars& p, Var x, const std::vector<std::size_t>& t) {
    const Tensor& xv = tape.value(x);
    if (xv.rank() != 4 || xv.dim(2) % 2 != 0 || xv.dim(3) % 2 != 0 || xv.dim(2) == 0 || xv.dim(3) == 0) {
        throw DimensionError("U-Net input must be [B,C,H,W] with even H and W, got " + shape_to_string(xv.shape()));
    }
    if (t.size() != xv.dim(0)) {
        throw DimensionError("U-Net got " + std::to_string(t.size()) + " timesteps for batch " +
                             std::to_string(xv.dim(0)));
    }
    const std::size_t D = tape.value(p.temb_w).dim(0);
    Encoded e;
    e.temb = ops::dense(tape, tape.constant(timestep_features(t, D)), p.temb_w, p.temb_b, Activation::kSilu);
    Var h = conv_silu(tape, x, p.enc1a_k, p.enc1a_b);
    e.skip1 = conv_time_silu(tape, h, p.enc1b_k, p.enc1b_b, e.temb, p.enc1b_tw, p.enc1b_tb);
    Var d = ops::avg_pool2(tape, e.skip1);
    e.skip2 = conv_time_silu(tape, d, p.enc2_k, p.enc2_b, e.temb, p.enc2_tw, p.enc2_tb);
    e.bottom = conv_silu(tape, e.skip2, p.mid_k, p.mid_b);
    return e;
}

Var unet_decode(Tape& tape, const UNetVars& p, const Encoded& e, const std::vector<Var>& controls) {
    if (!controls.empty() && controls.size() != 2) {
        throw DimensionError("expected 2 control tensors, got " + std::to_string(controls.size()));
    }
    Var s1 = e.skip1, s2 = e.skip2;
    if (!controls.empty()) {
        require_same_shape(tape.value(controls[0]), tape.value(s1), "level-1 control vs skip");
        require_same_shape(tape.value(controls[1]), tape.value(s2), "level-2 control vs skip");
        s1 = ops::add(tape, s1, controls[0]);
        s2 = ops::add(tape, s2, controls[1]);
    }
    Var u = conv_silu(tape, ops::concat(tape, e.bottom, s2, 1), p.dec2_k, p.dec2_b);
    u = ops::upsample2(tape, u);
    u = conv_time_silu(tape, u, p.dec1a_k, p.dec1a_b, e.temb, p.dec1a_tw, p.dec1a_tb);
    u = conv_silu(tape, ops::concat(tape, u, s1, 1), p.dec1b_k, p.dec1b_b);
    return ops::conv2d(tape, u, p.out_k, p.out_b);
}

Var unet_denoise(Tape& tape, const UNetVars& p, Var x_t, const std::vector<std::size_t>& t,
                 const std::vector<Var>& controls) {
    return unet_decode(tape, p, unet_encode(tape, p, x_t, t), controls);
}

}  // namespace tamms::diffusion
