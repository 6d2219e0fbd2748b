#pragma once

#include <cstddef>

#include "tamms/core/param_store.hpp"

namespace tamms {

struct AdamWConfig {
    double lr = 2e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

// Decoupled-weight-decay Adam on every entry whose partition is trainable:
//   w <- w - lr*wd*w - lr * m_hat / (sqrt(v_hat) + eps)
// Moments and step counters advance only for updated entries. All gradients,
// trainable or not, are zeroed afterwards. Returns the number of updated entries.
std::size_t adamw_step(ParamStore& store, const AdamWConfig& cfg);

// Rescales trainable gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping. max_norm <= 0 disables clipping.
double clip_grad_norm(ParamStore& store, double max_norm);

// lr_min + (lr_initial - lr_min) * (1 + cos(pi * step / total_steps)) / 2.
// Steps past total_steps return lr_min.
double cosine_lr(std::size_t step, std::size_t total_steps, double lr_initial, double lr_min);

}  // namespace tamms
