#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "tamms/core/tape.hpp"
#include "tamms/core/tensor.hpp"

// Differentiable operations. Each one computes its forward value eagerly and
// records an explicit backward kernel on the tape.
namespace tamms::ops {

enum class Activation { kNone, kRelu, kGelu, kSigmoid, kSilu };

Activation activation_from_string(std::string_view name);
std::string_view activation_name(Activation act);
double activate(Activation act, double x);
// Derivative at pre-activation x.
double activate_derivative(Activation act, double x);

// x[..., d_in] · weights[d_in, d_out] + bias[d_out], then `act`.
Var dense(Tape& tape, Var x, Var weights, Var bias, Activation act = Activation::kNone);
Var activation(Tape& tape, Var x, Activation act);

// Same-padded cross-correlation. x[B,C,T,H,W], kernels[C',C,kt,kh,kw] with odd
// extents, bias[C'] -> [B,C',T,H,W].
Var conv3d(Tape& tape, Var x, Var kernels, Var bias);
// x[B,C,H,W], kernels[C',C,kh,kw] -> [B,C',H,W].
Var conv2d(Tape& tape, Var x, Var kernels, Var bias);

Var add(Tape& tape, Var a, Var b);
Var sub(Tape& tape, Var a, Var b);
Var mul(Tape& tape, Var a, Var b);
Var scale(Tape& tape, Var a, double factor);
// (1 - w) ⊙ a + w ⊙ b, all three the same shape.
Var lerp(Tape& tape, Var a, Var b, Var w);
// alpha·a + (1 - alpha)·b with a single-element alpha.
Var mix(Tape& tape, Var alpha, Var a, Var b);
// x[B,C,...] + bias[B,C] broadcast over the trailing axes.
Var add_channel_bias(Tape& tape, Var x, Var bias);

// 2×2 average pooling / nearest upsampling on [B,C,H,W].
Var avg_pool2(Tape& tape, Var x);
Var upsample2(Tape& tape, Var x);

Var concat(Tape& tape, Var a, Var b, std::size_t axis);
// Inserts a new axis of length items.size() at `axis`.
Var stack(Tape& tape, const std::vector<Var>& items, std::size_t axis);
Var reshape(Tape& tape, Var x, Shape shape);
// out.shape[i] = x.shape[perm[i]].
Var permute(Tape& tape, Var x, const std::vector<std::size_t>& perm);
Var mean_axis(Tape& tape, Var x, std::size_t axis);
// x[...] -> x[..., trailing...], every trailing position a copy of x.
Var broadcast_trailing(Tape& tape, Var x, const Shape& trailing);

Var sum(Tape& tape, Var x);
Var mean(Tape& tape, Var x);
Var mse(Tape& tape, Var a, Var b);
// Σ x ⊙ weights with constant weights; used to build scalar probes.
Var weighted_sum(Tape& tape, Var x, const Tensor& weights);

// Normalizes the last axis.
Var layer_norm(Tape& tape, Var x, Var gamma, Var beta, double eps = 1e-5);

// Multi-head self-attention over x[S,L,d] without bias terms:
// softmax(Q K^T / sqrt(d/heads)) V, heads concatenated, then · wo.
Var multi_head_attention(Tape& tape, Var x, Var wq, Var wk, Var wv, Var wo, std::size_t heads);
// Softmax weights [S, heads, L, L] that multi_head_attention would use.
Tensor attention_weights(const Tensor& x, const Tensor& wq, const Tensor& wk, std::size_t heads);

// softmax(items · query / sqrt(d)) weighted mean of items[N,d] -> [d].
Var attention_pool(Tape& tape, Var items, Var query);

// Inverted dropout; the identity when p == 0.
Var dropout(Tape& tape, Var x, double p, std::uint64_t seed);

}  // namespace tamms::ops

namespace tamms::testing {
// Fault injection for the gradient verifier: when enabled, the dense backward
// kernel scales its weight gradient by 1.01.
void set_backward_fault(bool enabled);
bool backward_fault();
}  // namespace tamms::testing
