#include "tamms/core/optim.hpp"

#include <cmath>
#include <numbers>

#include "tamms/core/errors.hpp"

namespace tamms {

std::size_t adamw_step(ParamStore& store, const AdamWConfig& cfg) {
    if (!(cfg.lr > 0.0)) throw ConfigError("AdamW learning rate must be positive");
    if (cfg.weight_decay < 0.0) throw ConfigError("AdamW weight decay must be non-negative");
    if (cfg.beta1 < 0.0 || cfg.beta1 >= 1.0 || cfg.beta2 < 0.0 || cfg.beta2 >= 1.0) {
        throw ConfigError("AdamW betas must lie in [0, 1)");
    }
    std::size_t updated = 0;
    for (auto& [name, e] : store) {
        if (!store.is_trainable(e.partition)) continue;
        ++e.step;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(e.step));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(e.step));
        for (std::size_t i = 0; i < e.value.numel(); ++i) {
            const double g = e.grad[i];
            double& m = e.first_moment[i];
            double& v = e.second_moment[i];
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            const double m_hat = m / bc1;
            const double v_hat = v / bc2;
            double& w = e.value[i];
            w -= cfg.lr * cfg.weight_decay * w;
            w -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
        }
        ++updated;
    }
    store.zero_grad();
    return updated;
}

double clip_grad_norm(ParamStore& store, double max_norm) {
    double sq = 0.0;
    for (auto& [name, e] : store) {
        if (!store.is_trainable(e.partition)) continue;
        for (double g : e.grad.data()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double f = max_norm / (norm + 1e-6);
        for (auto& [name, e] : store) {
            if (!store.is_trainable(e.partition)) continue;
            for (double& g : e.grad.data()) g *= f;
        }
    }
    return norm;
}

double cosine_lr(std::size_t step, std::size_t total_steps, double lr_initial, double lr_min) {
    if (total_steps == 0) throw ConfigError("cosine schedule needs total_steps >= 1");
    if (step >= total_steps) return lr_min;
    const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
    return lr_min + 0.5 * (lr_initial - lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace tamms
