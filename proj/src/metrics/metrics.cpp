#include "tamms/metrics/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "tamms/core/errors.hpp"

namespace tamms::metrics {

ChangeMask::ChangeMask(std::size_t width, std::size_t height)
    : ChangeMask(width, height, std::vector<std::uint8_t>(width * height, 0)) {}

ChangeMask::ChangeMask(std::size_t width, std::size_t height, std::vector<std::uint8_t> bits)
    : width_(width), height_(height), bits_(std::move(bits)) {
    if (width_ == 0 || height_ == 0) throw DimensionError("change mask dimensions must be positive");
    if (bits_.size() != width_ * height_) {
        throw DimensionError("change mask has " + std::to_string(bits_.size()) + " cells, expected " +
                             std::to_string(width_ * height_));
    }
    for (std::uint8_t& b : bits_) {
        if (b > 1) throw ValidationError("change mask cells must be 0 or 1");
    }
}

void ChangeMask::fill_rect(std::size_t r0, std::size_t c0, std::size_t r1, std::size_t c1) {
    if (r1 > height_ || c1 > width_) throw IndexError("rectangle exceeds mask bounds");
    for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c) set(r, c);
}

std::size_t ChangeMask::area() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

std::optional<Point> centroid(const ChangeMask& mask) {
    const std::size_t W = mask.width(), H = mask.height();
    // Per-row and per-column counts, then integer moments of the pixel centres
    // (2j + 1) / 2 so the only rounding is the final division.
    std::vector<std::uint64_t> col_count(W, 0);
    std::uint64_t n = 0, row_moment = 0;
    const std::uint8_t* bits = mask.bits().data();
    for (std::size_t i = 0; i < H; ++i) {
        std::uint64_t in_row = 0;
        for (std::size_t j = 0; j < W; ++j) {
            col_count[j] += bits[i * W + j];
            in_row += bits[i * W + j];
        }
        n += in_row;
        row_moment += in_row * (2 * i + 1);
    }
    if (n == 0) return std::nullopt;
    std::uint64_t col_moment = 0;
    for (std::size_t j = 0; j < W; ++j) col_moment += col_count[j] * (2 * j + 1);
    return Point{static_cast<double>(col_moment) / (2.0 * static_cast<double>(W) * static_cast<double>(n)),
                 static_cast<double>(row_moment) / (2.0 * static_cast<double>(H) * static_cast<double>(n))};
}

void validate(const TcsConfig& cfg) {
    if (!(cfg.sigma > 0.0)) throw ConfigError("TCS sigma must be positive");
    if (!(cfg.beta >= 0.0)) throw ConfigError("TCS beta must be non-negative");
    if (!(cfg.epsilon > 0.0)) throw ConfigError("TCS epsilon must be positive");
    for (double v : {cfg.sps_both_empty, cfg.sps_one_empty}) {
        if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("empty-mask SPS values must lie in [0, 1]");
    }
}

namespace {

void require_same_dims(const ChangeMask& a, const ChangeMask& b) {
    if (a.width() != b.width() || a.height() != b.height()) {
        throw DimensionError("change masks differ in size: " + std::to_string(a.width()) + "x" +
                             std::to_string(a.height()) + " vs " + std::to_string(b.width()) + "x" +
                             std::to_string(b.height()));
    }
}

}  // namespace

double sps(const ChangeMask& hist, const ChangeMask& pred, const TcsConfig& cfg) {
    validate(cfg);
    require_same_dims(hist, pred);
    const auto ch = centroid(hist);
    const auto cp = centroid(pred);
    if (!ch && !cp) return cfg.sps_both_empty;
    if (!ch || !cp) return cfg.sps_one_empty;
    const double dx = cp->x - ch->x, dy = cp->y - ch->y;
    return std::exp(-std::sqrt(dx * dx + dy * dy) / cfg.sigma);
}

double acs(const ChangeMask& hist, const ChangeMask& pred, const TcsConfig& cfg) {
    validate(cfg);
    require_same_dims(hist, pred);
    const double ah = static_cast<double>(hist.area());
    const double ap = static_cast<double>(pred.area());
    return std::exp(-cfg.beta * std::abs(ap - ah) / (std::max(ap, ah) + cfg.epsilon));
}

TcsBreakdown tcs_breakdown(const ChangeMask& hist, const ChangeMask& pred, const TcsConfig& cfg) {
    TcsBreakdown out;
    out.sps = sps(hist, pred, cfg);
    out.acs = acs(hist, pred, cfg);
    out.tcs = out.sps * out.acs;
    return out;
}

double tcs(const ChangeMask& hist, const ChangeMask& pred, const TcsConfig& cfg) {
    return tcs_breakdown(hist, pred, cfg).tcs;
}

DetectorMethod detector_from_string(std::string_view name) {
    if (name == "abs_diff_otsu") return DetectorMethod::kAbsDiffOtsu;
    if (name == "abs_diff_fixed") return DetectorMethod::kAbsDiffFixed;
    throw ConfigError("unknown detector '" + std::string(name) + "' (expected abs_diff_otsu or abs_diff_fixed)");
}

std::string_view detector_name(DetectorMethod method) {
    return method == DetectorMethod::kAbsDiffOtsu ? "abs_diff_otsu" : "abs_diff_fixed";
}

Tensor grayscale(const Tensor& image) {
    if (image.rank() != 3 || (image.dim(2) != 3 && image.dim(2) != 1)) {
        throw DimensionError("expected an [H,W,3] or [H,W,1] image, got " + shape_to_string(image.shape()));
    }
    const std::size_t H = image.dim(0), W = image.dim(1), C = image.dim(2);
    Tensor gray(Shape{H, W});
    for (std::size_t p = 0; p < H * W; ++p) {
        gray[p] = C == 1 ? image[p]
                         : 0.2989 * image[p * 3] + 0.5870 * image[p * 3 + 1] + 0.1140 * image[p * 3 + 2];
    }
    return gray;
}

std::optional<std::size_t> otsu_bin(const Tensor& values) {
    constexpr std::size_t kBins = 256;
    std::array<double, kBins> hist{};
    for (double v : values.data()) {
        const double c = std::clamp(v, 0.0, 1.0);
        hist[std::min<std::size_t>(kBins - 1, static_cast<std::size_t>(c * kBins))] += 1.0;
    }
    const double total = static_cast<double>(values.numel());
    double sum_all = 0.0;
    for (std::size_t b = 0; b < kBins; ++b) sum_all += static_cast<double>(b) * hist[b];

    std::optional<std::size_t> best;
    double best_var = 0.0, w0 = 0.0, sum0 = 0.0;
    for (std::size_t k = 0; k + 1 < kBins; ++k) {
        w0 += hist[k];
        sum0 += static_cast<double>(k) * hist[k];
        const double w1 = total - w0;
        if (w0 == 0.0 || w1 == 0.0) continue;
        const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
        const double var = w0 * w1 * (m0 - m1) * (m0 - m1);
        if (var > best_var) {
            best_var = var;
            best = k;
        }
    }
    return best;
}

ChangeMask majority_filter(const ChangeMask& mask) {
    const std::size_t W = mask.width(), H = mask.height();
    ChangeMask out(W, H);
    for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
            int count = 0;
            for (int di = -1; di <= 1; ++di)
                for (int dj = -1; dj <= 1; ++dj) {
                    const long r = static_cast<long>(i) + di, c = static_cast<long>(j) + dj;
                    if (r >= 0 && c >= 0 && r < static_cast<long>(H) && c < static_cast<long>(W)) {
                        count += mask.get(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
                    }
                }
            out.set(i, j, count >= 5);
        }
    return out;
}

ChangeMask detect_changes(const Tensor& img_a, const Tensor& img_b, const DetectorConfig& cfg) {
    if (img_a.shape() != img_b.shape()) {
        throw DimensionError("images differ in shape: " + shape_to_string(img_a.shape()) + " vs " +
                             shape_to_string(img_b.shape()));
    }
    const Tensor ga = grayscale(img_a), gb = grayscale(img_b);
    const std::size_t H = ga.dim(0), W = ga.dim(1);
    Tensor diff(Shape{H, W});
    for (std::size_t p = 0; p < diff.numel(); ++p) diff[p] = std::abs(ga[p] - gb[p]);

    ChangeMask mask(W, H);
    if (cfg.method == DetectorMethod::kAbsDiffFixed) {
        if (!(cfg.threshold > 0.0 && cfg.threshold < 1.0)) throw ConfigError("fixed threshold must lie in (0, 1)");
        for (std::size_t p = 0; p < diff.numel(); ++p) mask.set(p / W, p % W, diff[p] > cfg.threshold);
    } else if (auto k = otsu_bin(diff)) {
        for (std::size_t p = 0; p < diff.numel(); ++p) {
            const auto bin = std::min<std::size_t>(255, static_cast<std::size_t>(std::clamp(diff[p], 0.0, 1.0) * 256));
            mask.set(p / W, p % W, bin > *k);
        }
    }
    return cfg.majority_filter ? majority_filter(mask) : mask;
}

double psnr(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("images differ in shape: " + shape_to_string(a.shape()) + " vs " +
                             shape_to_string(b.shape()));
    }
    if (a.numel() == 0) throw DomainError("psnr of empty images");
    double sq = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
    const double mse = sq / static_cast<double>(a.numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

namespace {

constexpr std::size_t kWindow = 11;
constexpr double kWindowSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, kWindow> gaussian_taps() {
    std::array<double, kWindow> g{};
    double total = 0.0;
    for (std::size_t i = 0; i < kWindow; ++i) {
        const double d = static_cast<double>(i) - static_cast<double>(kWindow / 2);
        g[i] = std::exp(-d * d / (2.0 * kWindowSigma * kWindowSigma));
        total += g[i];
    }
    for (double& v : g) v /= total;
    return g;
}

// Valid-mode separable Gaussian filter of a [H,W] plane stored at stride C.
std::vector<double> filter_valid(const std::vector<double>& plane, std::size_t H, std::size_t W) {
    static const auto taps = gaussian_taps();
    const std::size_t oh = H - kWindow + 1, ow = W - kWindow + 1;
    std::vector<double> rows(H * ow, 0.0);
    for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < kWindow; ++k) acc += taps[k] * plane[i * W + j + k];
            rows[i * ow + j] = acc;
        }
    std::vector<double> out(oh * ow, 0.0);
    for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < kWindow; ++k) acc += taps[k] * rows[(i + k) * ow + j];
            out[i * ow + j] = acc;
        }
    return out;
}

double ssim_plane(const std::vector<double>& a, const std::vector<double>& b, std::size_t H, std::size_t W) {
    std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
    }
    const auto mu_a = filter_valid(a, H, W), mu_b = filter_valid(b, H, W);
    const auto e_aa = filter_valid(aa, H, W), e_bb = filter_valid(bb, H, W), e_ab = filter_valid(ab, H, W);
    double total = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double ma = mu_a[i], mb = mu_b[i];
        const double va = e_aa[i] - ma * ma, vb = e_bb[i] - mb * mb, cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + kC1) * (2.0 * cov + kC2)) / ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
    }
    return total / static_cast<double>(mu_a.size());
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("images differ in shape: " + shape_to_string(a.shape()) + " vs " +
                             shape_to_string(b.shape()));
    }
    if (a.rank() != 2 && a.rank() != 3) throw DimensionError("ssim expects [H,W] or [H,W,C] images");
    const std::size_t H = a.dim(0), W = a.dim(1), C = a.rank() == 3 ? a.dim(2) : 1;
    if (H < kWindow || W < kWindow) {
        throw DomainError("ssim needs images of at least 11x11, got " + std::to_string(H) + "x" + std::to_string(W));
    }
    double total = 0.0;
    std::vector<double> pa(H * W), pb(H * W);
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t p = 0; p < H * W; ++p) {
            pa[p] = a[p * C + c];
            pb[p] = b[p * C + c];
        }
        total += ssim_plane(pa, pb, H, W);
    }
    return total / static_cast<double>(C);
}

}  // namespace tamms::metrics
