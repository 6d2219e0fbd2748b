#include "tamms/core/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <string>

#include "tamms/core/errors.hpp"
#include "tamms/core/rng.hpp"

namespace tamms::testing {
namespace {
std::atomic<bool> g_backward_fault{false};
}
void set_backward_fault(bool enabled) { g_backward_fault = enabled; }
bool backward_fault() { return g_backward_fault; }
}  // namespace tamms::testing

namespace tamms::ops {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using CVecMap = Eigen::Map<const Eigen::VectorXd>;

CMapR cmat(const Tensor& t, std::size_t rows, std::size_t cols) {
    return CMapR(t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MapR mat(Tensor& t, std::size_t rows, std::size_t cols) {
    return MapR(t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

[[noreturn]] void dim_error(const std::string& op, const std::string& detail) {
    throw DimensionError(op + ": " + detail);
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* name) {
    if (t.rank() != rank) {
        dim_error(op, std::string(name) + " must have rank " + std::to_string(rank) + ", got " +
                          shape_to_string(t.shape()));
    }
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Row-wise numerically stable softmax in place.
void softmax_inplace(double* row, std::size_t n) {
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        row[j] = std::exp(row[j] - mx);
        total += row[j];
    }
    for (std::size_t j = 0; j < n; ++j) row[j] /= total;
}

}  // namespace

Activation activation_from_string(std::string_view name) {
    if (name == "none") return Activation::kNone;
    if (name == "relu") return Activation::kRelu;
    if (name == "gelu") return Activation::kGelu;
    if (name == "sigmoid") return Activation::kSigmoid;
    if (name == "silu") return Activation::kSilu;
    throw ConfigError("unknown activation '" + std::string(name) + "'");
}

std::string_view activation_name(Activation act) {
    switch (act) {
        case Activation::kNone: return "none";
        case Activation::kRelu: return "relu";
        case Activation::kGelu: return "gelu";
        case Activation::kSigmoid: return "sigmoid";
        case Activation::kSilu: return "silu";
    }
    return "unknown";
}

double activate(Activation act, double x) {
    switch (act) {
        case Activation::kNone: return x;
        case Activation::kRelu: return x > 0.0 ? x : 0.0;
        case Activation::kGelu: return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
        case Activation::kSigmoid: return sigmoid(x);
        case Activation::kSilu: return x * sigmoid(x);
    }
    return x;
}

double activate_derivative(Activation act, double x) {
    switch (act) {
        case Activation::kNone: return 1.0;
        case Activation::kRelu: return x > 0.0 ? 1.0 : 0.0;
        case Activation::kGelu:
            return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
        case Activation::kSigmoid: {
            const double s = sigmoid(x);
            return s * (1.0 - s);
        }
        case Activation::kSilu: {
            const double s = sigmoid(x);
            return s * (1.0 + x * (1.0 - s));
        }
    }
    return 1.0;
}

// ---------------------------------------------------------------------------
// dense / activation

Var dense(Tape& tape, Var x, Var weights, Var bias, Activation act) {
    const Tensor& xv = tape.value(x);
    const Tensor& wv = tape.value(weights);
    const Tensor& bv = tape.value(bias);
    require_rank(wv, 2, "dense", "weights");
    require_rank(bv, 1, "dense", "bias");
    if (xv.rank() == 0) dim_error("dense", "input must have at least one axis");
    const std::size_t d_in = wv.dim(0);
    const std::size_t d_out = wv.dim(1);
    if (xv.shape().back() != d_in) {
        dim_error("dense", "last axis of x (" + std::to_string(xv.shape().back()) + ") != weights axis 0 (" +
                               std::to_string(d_in) + ")");
    }
    if (bv.dim(0) != d_out) {
        dim_error("dense", "bias axis 0 (" + std::to_string(bv.dim(0)) + ") != weights axis 1 (" +
                               std::to_string(d_out) + ")");
    }
    const std::size_t rows = xv.numel() / d_in;
    Shape out_shape = xv.shape();
    out_shape.back() = d_out;

    Tensor pre(out_shape);
    {
        MapR p = mat(pre, rows, d_out);
        p.noalias() = cmat(xv, rows, d_in) * cmat(wv, d_in, d_out);
        p.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bv.data().data(), static_cast<Eigen::Index>(d_out));
    }
    Tensor out = pre;
    if (act != Activation::kNone) {
        for (double& v : out.data()) v = activate(act, v);
    }
    if (act == Activation::kNone) pre = Tensor();  // not needed for backward

    return tape.record("dense", std::move(out), {x, weights, bias},
                       [x, weights, bias, act, rows, d_in, d_out, pre = std::move(pre)](Tape& t, const Tensor& g) {
                           Tensor gp = g;
                           if (act != Activation::kNone) {
                               for (std::size_t i = 0; i < gp.numel(); ++i) {
                                   gp[i] *= activate_derivative(act, pre[i]);
                               }
                           }
                           CMapR gm = cmat(gp, rows, d_out);
                           if (t.requires_grad(x)) {
                               mat(t.grad_buffer(x), rows, d_in).noalias() +=
                                   gm * cmat(t.value(weights), d_in, d_out).transpose();
                           }
                           if (t.requires_grad(weights)) {
                               MatR dw = cmat(t.value(x), rows, d_in).transpose() * gm;
                               if (testing::backward_fault()) dw *= 1.01;
                               mat(t.grad_buffer(weights), d_in, d_out) += dw;
                           }
                           if (t.requires_grad(bias)) {
                               mat(t.grad_buffer(bias), 1, d_out) += gm.colwise().sum();
                           }
                       });
}

Var activation(Tape& tape, Var x, Activation act) {
    const Tensor& xv = tape.value(x);
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = activate(act, xv[i]);
    return tape.record("activation", std::move(out), {x}, [x, act](Tape& t, const Tensor& g) {
        const Tensor& xv = t.value(x);
        Tensor& gx = t.grad_buffer(x);
        for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * activate_derivative(act, xv[i]);
    });
}

// ---------------------------------------------------------------------------
// convolution

namespace {

struct ConvGeometry {
    std::size_t batch, in_ch, out_ch, frames, height, width, kt, kh, kw;
    std::size_t rows() const { return in_ch * kt * kh * kw; }
    std::size_t positions() const { return frames * height * width; }
    std::size_t in_item() const { return in_ch * positions(); }
    std::size_t out_item() const { return out_ch * positions(); }
};

// col[(c,dt,dh,dw), (t,h,w)] = x[c, t+dt-pt, h+dh-ph, w+dw-pw], zero outside.
void im2col(const double* x, const ConvGeometry& g, double* col) {
    const std::size_t pt = g.kt / 2, ph = g.kh / 2, pw = g.kw / 2;
    const std::size_t P = g.positions();
    std::size_t r = 0;
    for (std::size_t c = 0; c < g.in_ch; ++c) {
        const double* xc = x + c * P;
        for (std::size_t dt = 0; dt < g.kt; ++dt) {
            for (std::size_t dh = 0; dh < g.kh; ++dh) {
                for (std::size_t dw = 0; dw < g.kw; ++dw, ++r) {
                    double* row = col + r * P;
                    for (std::size_t t = 0; t < g.frames; ++t) {
                        const long st = static_cast<long>(t + dt) - static_cast<long>(pt);
                        for (std::size_t h = 0; h < g.height; ++h) {
                            double* dst = row + (t * g.height + h) * g.width;
                            const long sh = static_cast<long>(h + dh) - static_cast<long>(ph);
                            if (st < 0 || st >= static_cast<long>(g.frames) || sh < 0 ||
                                sh >= static_cast<long>(g.height)) {
                                std::fill(dst, dst + g.width, 0.0);
                                continue;
                            }
                            const double* src = xc + (static_cast<std::size_t>(st) * g.height +
                                                      static_cast<std::size_t>(sh)) * g.width;
                            for (std::size_t w = 0; w < g.width; ++w) {
                                const long sw = static_cast<long>(w + dw) - static_cast<long>(pw);
                                dst[w] = (sw < 0 || sw >= static_cast<long>(g.width))
                                             ? 0.0
                                             : src[static_cast<std::size_t>(sw)];
                            }
                        }
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatters col back into dx (accumulating).
void col2im(const double* col, const ConvGeometry& g, double* dx) {
    const std::size_t pt = g.kt / 2, ph = g.kh / 2, pw = g.kw / 2;
    const std::size_t P = g.positions();
    std::size_t r = 0;
    for (std::size_t c = 0; c < g.in_ch; ++c) {
        double* xc = dx + c * P;
        for (std::size_t dt = 0; dt < g.kt; ++dt) {
            for (std::size_t dh = 0; dh < g.kh; ++dh) {
                for (std::size_t dw = 0; dw < g.kw; ++dw, ++r) {
                    const double* row = col + r * P;
                    for (std::size_t t = 0; t < g.frames; ++t) {
                        const long st = static_cast<long>(t + dt) - static_cast<long>(pt);
                        if (st < 0 || st >= static_cast<long>(g.frames)) continue;
                        for (std::size_t h = 0; h < g.height; ++h) {
                            const long sh = static_cast<long>(h + dh) - static_cast<long>(ph);
                            if (sh < 0 || sh >= static_cast<long>(g.height)) continue;
                            const double* src = row + (t * g.height + h) * g.width;
                            double* dst = xc + (static_cast<std::size_t>(st) * g.height +
                                                static_cast<std::size_t>(sh)) * g.width;
                            for (std::size_t w = 0; w < g.width; ++w) {
                                const long sw = static_cast<long>(w + dw) - static_cast<long>(pw);
                                if (sw >= 0 && sw < static_cast<long>(g.width)) {
                                    dst[static_cast<std::size_t>(sw)] += src[w];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

Var conv_impl(Tape& tape, Var x, Var kernels, Var bias, const ConvGeometry& geo, Shape out_shape,
              const char* op) {
    const Tensor& xv = tape.value(x);
    const Tensor& kv = tape.value(kernels);
    const Tensor& bv = tape.value(bias);
    const std::size_t R = geo.rows(), P = geo.positions();

    Tensor out(std::move(out_shape));
    std::vector<double> col(R * P);
    CMapR K = cmat(kv, geo.out_ch, R);
    for (std::size_t b = 0; b < geo.batch; ++b) {
        im2col(xv.data().data() + b * geo.in_item(), geo, col.data());
        MapR Y(out.data().data() + b * geo.out_item(), static_cast<Eigen::Index>(geo.out_ch),
               static_cast<Eigen::Index>(P));
        Y.noalias() = K * CMapR(col.data(), static_cast<Eigen::Index>(R), static_cast<Eigen::Index>(P));
        for (std::size_t o = 0; o < geo.out_ch; ++o) Y.row(static_cast<Eigen::Index>(o)).array() += bv[o];
    }

    return tape.record(op, std::move(out), {x, kernels, bias}, [x, kernels, bias, geo](Tape& t, const Tensor& g) {
        const std::size_t R = geo.rows(), P = geo.positions();
        const bool need_x = t.requires_grad(x);
        const bool need_k = t.requires_grad(kernels);
        const bool need_b = t.requires_grad(bias);
        std::vector<double> col(R * P);
        MatR dk;
        if (need_k) dk = MatR::Zero(static_cast<Eigen::Index>(geo.out_ch), static_cast<Eigen::Index>(R));
        CMapR K = cmat(t.value(kernels), geo.out_ch, R);
        for (std::size_t b = 0; b < geo.batch; ++b) {
            CMapR dY(g.data().data() + b * geo.out_item(), static_cast<Eigen::Index>(geo.out_ch),
                     static_cast<Eigen::Index>(P));
            if (need_k) {
                im2col(t.value(x).data().data() + b * geo.in_item(), geo, col.data());
                dk.noalias() +=
                    dY * CMapR(col.data(), static_cast<Eigen::Index>(R), static_cast<Eigen::Index>(P)).transpose();
            }
            if (need_x) {
                MapR dcol(col.data(), static_cast<Eigen::Index>(R), static_cast<Eigen::Index>(P));
                dcol.noalias() = K.transpose() * dY;
                col2im(col.data(), geo, t.grad_buffer(x).data().data() + b * geo.in_item());
            }
            if (need_b) {
                Tensor& gb = t.grad_buffer(bias);
                for (std::size_t o = 0; o < geo.out_ch; ++o) gb[o] += dY.row(static_cast<Eigen::Index>(o)).sum();
            }
        }
        if (need_k) mat(t.grad_buffer(kernels), geo.out_ch, R) += dk;
    });
}

}  // namespace

Var conv3d(Tape& tape, Var x, Var kernels, Var bias) {
    const Tensor& xv = tape.value(x);
    const Tensor& kv = tape.value(kernels);
    const Tensor& bv = tape.value(bias);
    require_rank(xv, 5, "conv3d", "x");
    require_rank(kv, 5, "conv3d", "kernels");
    require_rank(bv, 1, "conv3d", "bias");
    if (kv.dim(1) != xv.dim(1)) {
        dim_error("conv3d", "kernel input channels (axis 1 = " + std::to_string(kv.dim(1)) +
                                ") != input channels (axis 1 = " + std::to_string(xv.dim(1)) + ")");
    }
    if (bv.dim(0) != kv.dim(0)) dim_error("conv3d", "bias length != kernel output channels (axis 0)");
    if (kv.dim(2) % 2 == 0 || kv.dim(3) % 2 == 0 || kv.dim(4) % 2 == 0) {
        dim_error("conv3d", "kernel extents must be odd for same padding, got " + shape_to_string(kv.shape()));
    }
    ConvGeometry geo{xv.dim(0), xv.dim(1), kv.dim(0), xv.dim(2), xv.dim(3), xv.dim(4),
                     kv.dim(2), kv.dim(3), kv.dim(4)};
    return conv_impl(tape, x, kernels, bias, geo, Shape{geo.batch, geo.out_ch, geo.frames, geo.height, geo.width},
                     "conv3d");
}

Var conv2d(Tape& tape, Var x, Var kernels, Var bias) {
    const Tensor& xv = tape.value(x);
    const Tensor& kv = tape.value(kernels);
    const Tensor& bv = tape.value(bias);
    require_rank(xv, 4, "conv2d", "x");
    require_rank(kv, 4, "conv2d", "kernels");
    require_rank(bv, 1, "conv2d", "bias");
    if (kv.dim(1) != xv.dim(1)) {
        dim_error("conv2d", "kernel input channels (axis 1 = " + std::to_string(kv.dim(1)) +
                                ") != input channels (axis 1 = " + std::to_string(xv.dim(1)) + ")");
    }
    if (bv.dim(0) != kv.dim(0)) dim_error("conv2d", "bias length != kernel output channels (axis 0)");
    if (kv.dim(2) % 2 == 0 || kv.dim(3) % 2 == 0) {
        dim_error("conv2d", "kernel extents must be odd for same padding, got " + shape_to_string(kv.shape()));
    }
    // The 3D kernel with a single frame and unit temporal extent is exactly a 2D convolution.
    ConvGeometry geo{xv.dim(0), xv.dim(1), kv.dim(0), 1, xv.dim(2), xv.dim(3), 1, kv.dim(2), kv.dim(3)};
    return conv_impl(tape, x, kernels, bias, geo, Shape{geo.batch, geo.out_ch, geo.height, geo.width}, "conv2d");
}

// ---------------------------------------------------------------------------
// elementwise

Var add(Tape& tape, Var a, Var b) {
    const Tensor& av = tape.value(a);
    const Tensor& bv = tape.value(b);
    require_same_shape(av, bv, "add");
    Tensor out = av;
    out += bv;
    return tape.record("add", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        if (t.requires_grad(a)) t.grad_buffer(a) += g;
        if (t.requires_grad(b)) t.grad_buffer(b) += g;
    });
}

Var sub(Tape& tape, Var a, Var b) {
    const Tensor& av = tape.value(a);
    const Tensor& bv = tape.value(b);
    require_same_shape(av, bv, "sub");
    Tensor out = av;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
    return tape.record("sub", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        if (t.requires_grad(a)) t.grad_buffer(a) += g;
        if (t.requires_grad(b)) {
            Tensor& gb = t.grad_buffer(b);
            for (std::size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
        }
    });
}

Var mul(Tape& tape, Var a, Var b) {
    const Tensor& av = tape.value(a);
    const Tensor& bv = tape.value(b);
    require_same_shape(av, bv, "mul");
    Tensor out = av;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
    return tape.record("mul", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        if (t.requires_grad(a)) {
            Tensor& ga = t.grad_buffer(a);
            const Tensor& bv = t.value(b);
            for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv[i];
        }
        if (t.requires_grad(b)) {
            Tensor& gb = t.grad_buffer(b);
            const Tensor& av = t.value(a);
            for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * av[i];
        }
    });
}

Var scale(Tape& tape, Var a, double factor) {
    Tensor out = tape.value(a);
    for (double& v : out.data()) v *= factor;
    return tape.record("scale", std::move(out), {a}, [a, factor](Tape& t, const Tensor& g) {
        Tensor& ga = t.grad_buffer(a);
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * factor;
    });
}

Var lerp(Tape& tape, Var a, Var b, Var w) {
    const Tensor& av = tape.value(a);
    const Tensor& bv = tape.value(b);
    const Tensor& wv = tape.value(w);
    require_same_shape(av, bv, "lerp");
    require_same_shape(av, wv, "lerp weight");
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = (1.0 - wv[i]) * av[i] + wv[i] * bv[i];
    return tape.record("lerp", std::move(out), {a, b, w}, [a, b, w](Tape& t, const Tensor& g) {
        const Tensor& wv = t.value(w);
        if (t.requires_grad(a)) {
            Tensor& ga = t.grad_buffer(a);
            for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * (1.0 - wv[i]);
        }
        if (t.requires_grad(b)) {
            Tensor& gb = t.grad_buffer(b);
            for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * wv[i];
        }
        if (t.requires_grad(w)) {
            const Tensor& av = t.value(a);
            const Tensor& bv = t.value(b);
            Tensor& gw = t.grad_buffer(w);
            for (std::size_t i = 0; i < g.numel(); ++i) gw[i] += g[i] * (bv[i] - av[i]);
        }
    });
}

Var mix(Tape& tape, Var alpha, Var a, Var b) {
    const Tensor& alv = tape.value(alpha);
    const Tensor& av = tape.value(a);
    const Tensor& bv = tape.value(b);
    if (alv.numel() != 1) dim_error("mix", "alpha must hold one element, got " + shape_to_string(alv.shape()));
    require_same_shape(av, bv, "mix");
    const double al = alv[0];
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = al * av[i] + (1.0 - al) * bv[i];
    return tape.record("mix", std::move(out), {alpha, a, b}, [alpha, a, b](Tape& t, const Tensor& g) {
        const double al = t.value(alpha)[0];
        if (t.requires_grad(a)) {
            Tensor& ga = t.grad_buffer(a);
            for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * al;
        }
        if (t.requires_grad(b)) {
            Tensor& gb = t.grad_buffer(b);
            for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * (1.0 - al);
        }
        if (t.requires_grad(alpha)) {
            const Tensor& av = t.value(a);
            const Tensor& bv = t.value(b);
            double acc = 0.0;
            for (std::size_t i = 0; i < g.numel(); ++i) acc += g[i] * (av[i] - bv[i]);
            t.grad_buffer(alpha)[0] += acc;
        }
    });
}

Var add_channel_bias(Tape& tape, Var x, Var bias) {
    const Tensor& xv = tape.value(x);
    const Tensor& bv = tape.value(bias);
    require_rank(bv, 2, "add_channel_bias", "bias");
    if (xv.rank() < 2 || xv.dim(0) != bv.dim(0) || xv.dim(1) != bv.dim(1)) {
        dim_error("add_channel_bias", "x " + shape_to_string(xv.shape()) + " incompatible with bias " +
                                          shape_to_string(bv.shape()));
    }
    const std::size_t rows = bv.numel();
    const std::size_t inner = xv.numel() / rows;
    Tensor out = xv;
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t i = 0; i < inner; ++i) out[r * inner + i] += bv[r];
    }
    return tape.record("add_channel_bias", std::move(out), {x, bias}, [x, bias, rows, inner](Tape& t, const Tensor& g) {
        if (t.requires_grad(x)) t.grad_buffer(x) += g;
        if (t.requires_grad(bias)) {
            Tensor& gb = t.grad_buffer(bias);
            for (std::size_t r = 0; r < rows; ++r) {
                double acc = 0.0;
                for (std::size_t i = 0; i < inner; ++i) acc += g[r * inner + i];
                gb[r] += acc;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// resampling

Var avg_pool2(Tape& tape, Var x) {
    const Tensor& xv = tape.value(x);
    require_rank(xv, 4, "avg_pool2", "x");
    const std::size_t planes = xv.dim(0) * xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    if (H % 2 != 0 || W % 2 != 0) dim_error("avg_pool2", "spatial dims must be even, got " + shape_to_string(xv.shape()));
    const std::size_t h2 = H / 2, w2 = W / 2;
    Tensor out(Shape{xv.dim(0), xv.dim(1), h2, w2});
    for (std::size_t p = 0; p < planes; ++p) {
        const double* src = xv.data().data() + p * H * W;
        double* dst = out.data().data() + p * h2 * w2;
        for (std::size_t i = 0; i < h2; ++i) {
            for (std::size_t j = 0; j < w2; ++j) {
                dst[i * w2 + j] = 0.25 * (src[2 * i * W + 2 * j] + src[2 * i * W + 2 * j + 1] +
                                          src[(2 * i + 1) * W + 2 * j] + src[(2 * i + 1) * W + 2 * j + 1]);
            }
        }
    }
    return tape.record("avg_pool2", std::move(out), {x}, [x, planes, H, W](Tape& t, const Tensor& g) {
        Tensor& gx = t.grad_buffer(x);
        const std::size_t h2 = H / 2, w2 = W / 2;
        for (std::size_t p = 0; p < planes; ++p) {
            const double* src = g.data().data() + p * h2 * w2;
            double* dst = gx.data().data() + p * H * W;
            for (std::size_t i = 0; i < H; ++i) {
                for (std::size_t j = 0; j < W; ++j) dst[i * W + j] += 0.25 * src[(i / 2) * w2 + j / 2];
            }
        }
    });
}

Var upsample2(Tape& tape, Var x) {
    const Tensor& xv = tape.value(x);
    require_rank(xv, 4, "upsample2", "x");
    const std::size_t planes = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    const std::size_t H = 2 * h, W = 2 * w;
    Tensor out(Shape{xv.dim(0), xv.dim(1), H, W});
    for (std::size_t p = 0; p < planes; ++p) {
        const double* src = xv.data().data() + p * h * w;
        double* dst = out.data().data() + p * H * W;
        for (std::size_t i = 0; i < H; ++i) {
            for (std::size_t j = 0; j < W; ++j) dst[i * W + j] = src[(i / 2) * w + j / 2];
        }
    }
    return tape.record("upsample2", std::move(out), {x}, [x, planes, h, w](Tape& t, const Tensor& g) {
        Tensor& gx = t.grad_buffer(x);
        const std::size_t H = 2 * h, W = 2 * w;
        for (std::size_t p = 0; p < planes; ++p) {
            const double* src = g.data().data() + p * H * W;
            double* dst = gx.data().data() + p * h * w;
            for (std::size_t i = 0; i < H; ++i) {
                for (std::size_t j = 0; j < W; ++j) dst[(i / 2) * w + j / 2] += src[i * W + j];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// layout

Var concat(Tape& tape, Var a, Var b, std::size_t axis) {
    const Tensor& av = tape.value(a);
    const Tensor& bv = tape.value(b);
    if (av.rank() != bv.rank() || axis >= av.rank()) {
        dim_error("concat", shape_to_string(av.shape()) + " and " + shape_to_string(bv.shape()) + " on axis " +
                                std::to_string(axis));
    }
    for (std::size_t i = 0; i < av.rank(); ++i) {
        if (i != axis && av.dim(i) != bv.dim(i)) {
            dim_error("concat", "axis " + std::to_string(i) + " differs: " + shape_to_string(av.shape()) + " vs " +
                                    shape_to_string(bv.shape()));
        }
    }
    std::size_t outer = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= av.dim(i);
    const std::size_t ia = av.numel() / outer, ib = bv.numel() / outer;
    Shape shape = av.shape();
    shape[axis] += bv.dim(axis);
    Tensor out(shape);
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(av.data().data() + o * ia, ia, out.data().data() + o * (ia + ib));
        std::copy_n(bv.data().data() + o * ib, ib, out.data().data() + o * (ia + ib) + ia);
    }
    return tape.record("concat", std::move(out), {a, b}, [a, b, outer, ia, ib](Tape& t, const Tensor& g) {
        if (t.requires_grad(a)) {
            Tensor& ga = t.grad_buffer(a);
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t i = 0; i < ia; ++i) ga[o * ia + i] += g[o * (ia + ib) + i];
            }
        }
        if (t.requires_grad(b)) {
            Tensor& gb = t.grad_buffer(b);
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t i = 0; i < ib; ++i) gb[o * ib + i] += g[o * (ia + ib) + ia + i];
            }
        }
    });
}

Var stack(Tape& tape, const std::vector<Var>& items, std::size_t axis) {
    if (items.empty()) dim_error("stack", "no items");
    const Shape& item_shape = tape.value(items[0]).shape();
    if (axis > item_shape.size()) dim_error("stack", "axis " + std::to_string(axis) + " out of range");
    for (Var v : items) {
        if (tape.value(v).shape() != item_shape) {
            dim_error("stack", "item shape " + shape_to_string(tape.value(v).shape()) + " != " +
                                   shape_to_string(item_shape));
        }
    }
    std::size_t outer = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= item_shape[i];
    const std::size_t inner = shape_numel(item_shape) / outer;
    const std::size_t n = items.size();
    Shape shape = item_shape;
    shape.insert(shape.begin() + static_cast<std::ptrdiff_t>(axis), n);
    Tensor out(shape);
    for (std::size_t k = 0; k < n; ++k) {
        const Tensor& v = tape.value(items[k]);
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(v.data().data() + o * inner, inner, out.data().data() + (o * n + k) * inner);
        }
    }
    return tape.record("stack", std::move(out), items, [items, outer, inner](Tape& t, const Tensor& g) {
        const std::size_t n = items.size();
        for (std::size_t k = 0; k < n; ++k) {
            if (!t.requires_grad(items[k])) continue;
            Tensor& gk = t.grad_buffer(items[k]);
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t i = 0; i < inner; ++i) gk[o * inner + i] += g[(o * n + k) * inner + i];
            }
        }
    });
}

Var reshape(Tape& tape, Var x, Shape shape) {
    Tensor out = tape.value(x).reshaped(std::move(shape));
    return tape.record("reshape", std::move(out), {x}, [x](Tape& t, const Tensor& g) {
        Tensor& gx = t.grad_buffer(x);
        for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
    });
}

namespace {

// Index map of a permutation: out[i] = in[src[i]].
std::vector<std::size_t> permutation_sources(const Shape& in_shape, const std::vector<std::size_t>& perm) {
    const std::size_t rank = in_shape.size();
    std::vector<std::size_t> in_strides(rank, 1);
    for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
    Shape out_shape(rank);
    for (std::size_t i = 0; i < rank; ++i) out_shape[i] = in_shape[perm[i]];
    const std::size_t n = shape_numel(in_shape);
    std::vector<std::size_t> src(n);
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t flat = 0; flat < n; ++flat) {
        std::size_t s = 0;
        for (std::size_t i = 0; i < rank; ++i) s += idx[i] * in_strides[perm[i]];
        src[flat] = s;
        for (std::size_t i = rank; i-- > 0;) {
            if (++idx[i] < out_shape[i]) break;
            idx[i] = 0;
        }
    }
    return src;
}

}  // namespace

Var permute(Tape& tape, Var x, const std::vector<std::size_t>& perm) {
    const Tensor& xv = tape.value(x);
    if (perm.size() != xv.rank()) dim_error("permute", "permutation rank mismatch for " + shape_to_string(xv.shape()));
    std::vector<bool> seen(perm.size(), false);
    for (std::size_t p : perm) {
        if (p >= perm.size() || seen[p]) dim_error("permute", "invalid permutation");
        seen[p] = true;
    }
    Shape out_shape(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) out_shape[i] = xv.dim(perm[i]);
    auto src = permutation_sources(xv.shape(), perm);
    Tensor out(out_shape);
    for (std::size_t i = 0; i < src.size(); ++i) out[i] = xv[src[i]];
    return tape.record("permute", std::move(out), {x}, [x, src = std::move(src)](Tape& t, const Tensor& g) {
        Tensor& gx = t.grad_buffer(x);
        for (std::size_t i = 0; i < src.size(); ++i) gx[src[i]] += g[i];
    });
}

Var mean_axis(Tape& tape, Var x, std::size_t axis) {
    const Tensor& xv = tape.value(x);
    if (axis >= xv.rank()) dim_error("mean_axis", "axis " + std::to_string(axis) + " out of range for " +
                                                       shape_to_string(xv.shape()));
    std::size_t outer = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= xv.dim(i);
    const std::size_t n = xv.dim(axis);
    const std::size_t inner = n == 0 ? 0 : xv.numel() / (outer * n);
    if (n == 0) dim_error("mean_axis", "empty axis");
    Shape shape = xv.shape();
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
    Tensor out(shape);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t k = 0; k < n; ++k) {
            const double* src = xv.data().data() + (o * n + k) * inner;
            double* dst = out.data().data() + o * inner;
            for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
        double* dst = out.data().data() + o * inner;
        for (std::size_t i = 0; i < inner; ++i) dst[i] /= static_cast<double>(n);
    }
    return tape.record("mean_axis", std::move(out), {x}, [x, outer, n, inner](Tape& t, const Tensor& g) {
        Tensor& gx = t.grad_buffer(x);
        const double f = 1.0 / static_cast<double>(n);
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t k = 0; k < n; ++k) {
                for (std::size_t i = 0; i < inner; ++i) gx[(o * n + k) * inner + i] += f * g[o * inner + i];
            }
        }
    });
}

Var broadcast_trailing(Tape& tape, Var x, const Shape& trailing) {
    const Tensor& xv = tape.value(x);
    const std::size_t rep = shape_numel(trailing);
    Shape shape = xv.shape();
    shape.insert(shape.end(), trailing.begin(), trailing.end());
    Tensor out(shape);
    for (std::size_t i = 0; i < xv.numel(); ++i) {
        std::fill_n(out.data().data() + i * rep, rep, xv[i]);
    }
    return tape.record("broadcast_trailing", std::move(out), {x}, [x, rep](Tape& t, const Tensor& g) {
        Tensor& gx = t.grad_buffer(x);
        for (std::size_t i = 0; i < gx.numel(); ++i) {
            double acc = 0.0;
            for (std::size_t r = 0; r < rep; ++r) acc += g[i * rep + r];
            gx[i] += acc;
        }
    });
}

// ---------------------------------------------------------------------------
// reductions

Var sum(Tape& tape, Var x) {
    double acc = 0.0;
    for (double v : tape.value(x).data()) acc += v;
    return tape.record("sum", Tensor::scalar(acc), {x}, [x](Tape& t, const Tensor& g) {
        Tensor& gx = t.grad_buffer(x);
        for (double& v : gx.data()) v += g[0];
    });
}

Var mean(Tape& tape, Var x) {
    const Tensor& xv = tape.value(x);
    if (xv.numel() == 0) dim_error("mean", "empty tensor");
    double acc = 0.0;
    for (double v : xv.data()) acc += v;
    const double n = static_cast<double>(xv.numel());
    return tape.record("mean", Tensor::scalar(acc / n), {x}, [x, n](Tape& t, const Tensor& g) {
        Tensor& gx = t.grad_buffer(x);
        for (double& v : gx.data()) v += g[0] / n;
    });
}

Var mse(Tape& tape, Var a, Var b) {
    const Tensor& av = tape.value(a);
    const Tensor& bv = tape.value(b);
    require_same_shape(av, bv, "mse");
    if (av.numel() == 0) dim_error("mse", "empty tensors");
    double acc = 0.0;
    for (std::size_t i = 0; i < av.numel(); ++i) {
        const double d = av[i] - bv[i];
        acc += d * d;
    }
    const double n = static_cast<double>(av.numel());
    return tape.record("mse", Tensor::scalar(acc / n), {a, b}, [a, b, n](Tape& t, const Tensor& g) {
        const Tensor& av = t.value(a);
        const Tensor& bv = t.value(b);
        const double f = 2.0 * g[0] / n;
        if (t.requires_grad(a)) {
            Tensor& ga = t.grad_buffer(a);
            for (std::size_t i = 0; i < av.numel(); ++i) ga[i] += f * (av[i] - bv[i]);
        }
        if (t.requires_grad(b)) {
            Tensor& gb = t.grad_buffer(b);
            for (std::size_t i = 0; i < av.numel(); ++i) gb[i] -= f * (av[i] - bv[i]);
        }
    });
}

Var weighted_sum(Tape& tape, Var x, const Tensor& weights) {
    const Tensor& xv = tape.value(x);
    if (xv.numel() != weights.numel()) {
        dim_error("weighted_sum", "weights " + shape_to_string(weights.shape()) + " vs x " +
                                      shape_to_string(xv.shape()));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < xv.numel(); ++i) acc += xv[i] * weights[i];
    return tape.record("weighted_sum", Tensor::scalar(acc), {x}, [x, weights](Tape& t, const Tensor& g) {
        Tensor& gx = t.grad_buffer(x);
        for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g[0] * weights[i];
    });
}

// ---------------------------------------------------------------------------
// normalization and attention

Var layer_norm(Tape& tape, Var x, Var gamma, Var beta, double eps) {
    const Tensor& xv = tape.value(x);
    const Tensor& gv = tape.value(gamma);
    const Tensor& bv = tape.value(beta);
    if (xv.rank() == 0) dim_error("layer_norm", "input must have at least one axis");
    const std::size_t d = xv.shape().back();
    if (gv.numel() != d || bv.numel() != d) {
        dim_error("layer_norm", "scale/shift length must equal last axis " + std::to_string(d));
    }
    const std::size_t rows = xv.numel() / d;
    Tensor xhat(xv.shape());
    std::vector<double> inv_std(rows);
    Tensor out(xv.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xv.data().data() + r * d;
        double mu = 0.0;
        for (std::size_t i = 0; i < d; ++i) mu += xr[i];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
        var /= static_cast<double>(d);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t i = 0; i < d; ++i) {
            const double h = (xr[i] - mu) * inv_std[r];
            xhat[r * d + i] = h;
            out[r * d + i] = gv[i] * h + bv[i];
        }
    }
    return tape.record("layer_norm", std::move(out), {x, gamma, beta},
                       [x, gamma, beta, rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                           Tape& t, const Tensor& g) {
                           const Tensor& gv = t.value(gamma);
                           if (t.requires_grad(gamma)) {
                               Tensor& gg = t.grad_buffer(gamma);
                               for (std::size_t i = 0; i < g.numel(); ++i) gg[i % d] += g[i] * xhat[i];
                           }
                           if (t.requires_grad(beta)) {
                               Tensor& gb = t.grad_buffer(beta);
                               for (std::size_t i = 0; i < g.numel(); ++i) gb[i % d] += g[i];
                           }
                           if (t.requires_grad(x)) {
                               Tensor& gx = t.grad_buffer(x);
                               std::vector<double> dxhat(d);
                               for (std::size_t r = 0; r < rows; ++r) {
                                   double m1 = 0.0, m2 = 0.0;
                                   for (std::size_t i = 0; i < d; ++i) {
                                       dxhat[i] = g[r * d + i] * gv[i];
                                       m1 += dxhat[i];
                                       m2 += dxhat[i] * xhat[r * d + i];
                                   }
                                   m1 /= static_cast<double>(d);
                                   m2 /= static_cast<double>(d);
                                   for (std::size_t i = 0; i < d; ++i) {
                                       gx[r * d + i] += inv_std[r] * (dxhat[i] - m1 - xhat[r * d + i] * m2);
                                   }
                               }
                           }
                       });
}

namespace {

struct AttentionDims {
    std::size_t seqs, len, d, heads, dh;
};

AttentionDims attention_dims(const Tensor& x, const Tensor& wq, std::size_t heads, const char* op) {
    require_rank(x, 3, op, "x");
    const std::size_t d = x.dim(2);
    if (heads == 0 || d % heads != 0) {
        throw ConfigError(std::string(op) + ": model dim " + std::to_string(d) + " not divisible by heads " +
                          std::to_string(heads));
    }
    if (x.dim(1) == 0) dim_error(op, "sequence length must be >= 1");
    if (wq.rank() != 2 || wq.dim(0) != d || wq.dim(1) != d) {
        dim_error(op, "projection must be [" + std::to_string(d) + "," + std::to_string(d) + "], got " +
                          shape_to_string(wq.shape()));
    }
    return {x.dim(0), x.dim(1), d, heads, d / heads};
}

Tensor project(const Tensor& x, const Tensor& w, std::size_t rows, std::size_t d) {
    Tensor out(x.shape());
    mat(out, rows, d).noalias() = cmat(x, rows, d) * cmat(w, d, d);
    return out;
}

// Softmax weights laid out [S, heads, L, L].
Tensor softmax_scores(const Tensor& q, const Tensor& k, const AttentionDims& a) {
    Tensor attn(Shape{a.seqs, a.heads, a.len, a.len});
    const double inv = 1.0 / std::sqrt(static_cast<double>(a.dh));
    for (std::size_t s = 0; s < a.seqs; ++s) {
        for (std::size_t h = 0; h < a.heads; ++h) {
            for (std::size_t i = 0; i < a.len; ++i) {
                double* row = attn.data().data() + ((s * a.heads + h) * a.len + i) * a.len;
                const double* qi = q.data().data() + (s * a.len + i) * a.d + h * a.dh;
                for (std::size_t j = 0; j < a.len; ++j) {
                    const double* kj = k.data().data() + (s * a.len + j) * a.d + h * a.dh;
                    double acc = 0.0;
                    for (std::size_t c = 0; c < a.dh; ++c) acc += qi[c] * kj[c];
                    row[j] = acc * inv;
                }
                softmax_inplace(row, a.len);
            }
        }
    }
    return attn;
}

}  // namespace

Tensor attention_weights(const Tensor& x, const Tensor& wq, const Tensor& wk, std::size_t heads) {
    const AttentionDims a = attention_dims(x, wq, heads, "attention_weights");
    const std::size_t rows = a.seqs * a.len;
    return softmax_scores(project(x, wq, rows, a.d), project(x, wk, rows, a.d), a);
}

Var multi_head_attention(Tape& tape, Var x, Var wq, Var wk, Var wv, Var wo, std::size_t heads) {
    const Tensor& xv = tape.value(x);
    const AttentionDims a = attention_dims(xv, tape.value(wq), heads, "multi_head_attention");
    for (Var w : {wk, wv, wo}) {
        if (tape.value(w).shape() != tape.value(wq).shape()) {
            dim_error("multi_head_attention", "projection shapes differ");
        }
    }
    const std::size_t rows = a.seqs * a.len;
    Tensor q = project(xv, tape.value(wq), rows, a.d);
    Tensor k = project(xv, tape.value(wk), rows, a.d);
    Tensor v = project(xv, tape.value(wv), rows, a.d);
    Tensor attn = softmax_scores(q, k, a);

    Tensor heads_out(xv.shape());
    for (std::size_t s = 0; s < a.seqs; ++s) {
        for (std::size_t h = 0; h < a.heads; ++h) {
            for (std::size_t i = 0; i < a.len; ++i) {
                const double* row = attn.data().data() + ((s * a.heads + h) * a.len + i) * a.len;
                double* oi = heads_out.data().data() + (s * a.len + i) * a.d + h * a.dh;
                for (std::size_t j = 0; j < a.len; ++j) {
                    const double* vj = v.data().data() + (s * a.len + j) * a.d + h * a.dh;
                    for (std::size_t c = 0; c < a.dh; ++c) oi[c] += row[j] * vj[c];
                }
            }
        }
    }
    Tensor out = project(heads_out, tape.value(wo), rows, a.d);

    return tape.record(
        "multi_head_attention", std::move(out), {x, wq, wk, wv, wo},
        [x, wq, wk, wv, wo, a, q = std::move(q), k = std::move(k), v = std::move(v), attn = std::move(attn),
         heads_out = std::move(heads_out)](Tape& t, const Tensor& g) {
            const std::size_t rows = a.seqs * a.len;
            CMapR gm = cmat(g, rows, a.d);
            if (t.requires_grad(wo)) mat(t.grad_buffer(wo), a.d, a.d).noalias() += cmat(heads_out, rows, a.d).transpose() * gm;
            if (!t.requires_grad(x) && !t.requires_grad(wq) && !t.requires_grad(wk) && !t.requires_grad(wv)) return;

            Tensor d_heads(heads_out.shape());
            mat(d_heads, rows, a.d).noalias() = gm * cmat(t.value(wo), a.d, a.d).transpose();

            Tensor dq(q.shape()), dk(k.shape()), dv(v.shape());
            const double inv = 1.0 / std::sqrt(static_cast<double>(a.dh));
            std::vector<double> dscore(a.len);
            for (std::size_t s = 0; s < a.seqs; ++s) {
                for (std::size_t h = 0; h < a.heads; ++h) {
                    for (std::size_t i = 0; i < a.len; ++i) {
                        const double* row = attn.data().data() + ((s * a.heads + h) * a.len + i) * a.len;
                        const double* doi = d_heads.data().data() + (s * a.len + i) * a.d + h * a.dh;
                        double weighted = 0.0;
                        for (std::size_t j = 0; j < a.len; ++j) {
                            const double* vj = v.data().data() + (s * a.len + j) * a.d + h * a.dh;
                            double* dvj = dv.data().data() + (s * a.len + j) * a.d + h * a.dh;
                            double da = 0.0;
                            for (std::size_t c = 0; c < a.dh; ++c) {
                                da += doi[c] * vj[c];
                                dvj[c] += row[j] * doi[c];
                            }
                            dscore[j] = da;
                            weighted += row[j] * da;
                        }
                        const double* qi = q.data().data() + (s * a.len + i) * a.d + h * a.dh;
                        double* dqi = dq.data().data() + (s * a.len + i) * a.d + h * a.dh;
                        for (std::size_t j = 0; j < a.len; ++j) {
                            const double ds = row[j] * (dscore[j] - weighted) * inv;
                            const double* kj = k.data().data() + (s * a.len + j) * a.d + h * a.dh;
                            double* dkj = dk.data().data() + (s * a.len + j) * a.d + h * a.dh;
                            for (std::size_t c = 0; c < a.dh; ++c) {
                                dqi[c] += ds * kj[c];
                                dkj[c] += ds * qi[c];
                            }
                        }
                    }
                }
            }
            CMapR xm = cmat(t.value(x), rows, a.d);
            const std::pair<Var, const Tensor*> parts[] = {{wq, &dq}, {wk, &dk}, {wv, &dv}};
            for (const auto& [w, dproj] : parts) {
                CMapR dm = cmat(*dproj, rows, a.d);
                if (t.requires_grad(w)) mat(t.grad_buffer(w), a.d, a.d).noalias() += xm.transpose() * dm;
                if (t.requires_grad(x)) {
                    mat(t.grad_buffer(x), rows, a.d).noalias() += dm * cmat(t.value(w), a.d, a.d).transpose();
                }
            }
        });
}

Var attention_pool(Tape& tape, Var items, Var query) {
    const Tensor& iv = tape.value(items);
    const Tensor& qv = tape.value(query);
    require_rank(iv, 2, "attention_pool", "items");
    const std::size_t n = iv.dim(0), d = iv.dim(1);
    if (n == 0) throw DomainError("attention_pool: empty item set");
    if (qv.numel() != d) dim_error("attention_pool", "query length != item dim " + std::to_string(d));
    const double inv = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<double> weights(n);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t c = 0; c < d; ++c) acc += iv[i * d + c] * qv[c];
        weights[i] = acc * inv;
    }
    softmax_inplace(weights.data(), n);
    Tensor out(Shape{d});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < d; ++c) out[c] += weights[i] * iv[i * d + c];
    }
    return tape.record("attention_pool", std::move(out), {items, query},
                       [items, query, n, d, inv, weights = std::move(weights)](Tape& t, const Tensor& g) {
                           const Tensor& iv = t.value(items);
                           const Tensor& qv = t.value(query);
                           std::vector<double> da(n);
                           double weighted = 0.0;
                           for (std::size_t i = 0; i < n; ++i) {
                               double acc = 0.0;
                               for (std::size_t c = 0; c < d; ++c) acc += iv[i * d + c] * g[c];
                               da[i] = acc;
                               weighted += weights[i] * acc;
                           }
                           for (std::size_t i = 0; i < n; ++i) {
                               const double ds = weights[i] * (da[i] - weighted) * inv;
                               if (t.requires_grad(items)) {
                                   Tensor& gi = t.grad_buffer(items);
                                   for (std::size_t c = 0; c < d; ++c) {
                                       gi[i * d + c] += weights[i] * g[c] + ds * qv[c];
                                   }
                               }
                               if (t.requires_grad(query)) {
                                   Tensor& gq = t.grad_buffer(query);
                                   for (std::size_t c = 0; c < d; ++c) gq[c] += ds * iv[i * d + c];
                               }
                           }
                       });
}

Var dropout(Tape& tape, Var x, double p, std::uint64_t seed) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout probability must be in [0, 1)");
    if (p == 0.0) return x;
    const Tensor& xv = tape.value(x);
    Rng rng(seed);
    Tensor mask(xv.shape());
    const double keep_scale = 1.0 / (1.0 - p);
    for (double& m : mask.data()) m = rng.uniform() < p ? 0.0 : keep_scale;
    Tensor out = xv;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= mask[i];
    return tape.record("dropout", std::move(out), {x}, [x, mask = std::move(mask)](Tape& t, const Tensor& g) {
        Tensor& gx = t.grad_buffer(x);
        for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * mask[i];
    });
}

}  // namespace tamms::ops
