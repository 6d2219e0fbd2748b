#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tamms/core/tensor.hpp"

namespace tamms::metrics {

// Binary change map, row-major, one byte per pixel holding 0 or 1.
class ChangeMask {
public:
    ChangeMask(std::size_t width, std::size_t height);
    ChangeMask(std::size_t width, std::size_t height, std::vector<std::uint8_t> bits);

    std::size_t width() const { return width_; }
    std::size_t height() const { return height_; }
    const std::vector<std::uint8_t>& bits() const { return bits_; }

    bool get(std::size_t row, std::size_t col) const { return bits_[row * width_ + col] != 0; }
    void set(std::size_t row, std::size_t col, bool on = true) { bits_[row * width_ + col] = on ? 1 : 0; }

    // Sets every pixel of rows [r0, r1) x cols [c0, c1).
    void fill_rect(std::size_t r0, std::size_t c0, std::size_t r1, std::size_t c1);

    std::size_t area() const;
    bool empty() const { return area() == 0; }

    friend bool operator==(const ChangeMask&, const ChangeMask&) = default;

private:
    std::size_t width_;
    std::size_t height_;
    std::vector<std::uint8_t> bits_;
};

struct Point {
    double x = 0.0;  // column direction, normalized to [0, 1]
    double y = 0.0;  // row direction
};

// Mean of set-pixel centres ((j + 0.5) / W, (i + 0.5) / H); nullopt when empty.
std::optional<Point> centroid(const ChangeMask& mask);

// ---------------------------------------------------------------- TCS

struct TcsConfig {
    double sigma = 0.2;
    double beta = 1.0;
    double epsilon = 1e-8;
    // Empty-mask policy: SPS when both masks are empty / when exactly one is.
    double sps_both_empty = 1.0;
    double sps_one_empty = 0.0;
};

void validate(const TcsConfig& cfg);

double sps(const ChangeMask& hist, const ChangeMask& pred, const TcsConfig& cfg = {});
double acs(const ChangeMask& hist, const ChangeMask& pred, const TcsConfig& cfg = {});
double tcs(const ChangeMask& hist, const ChangeMask& pred, const TcsConfig& cfg = {});

struct TcsBreakdown {
    double sps = 0.0;
    double acs = 0.0;
    double tcs = 0.0;
};
TcsBreakdown tcs_breakdown(const ChangeMask& hist, const ChangeMask& pred, const TcsConfig& cfg = {});

// ---------------------------------------------------------------- change detection

enum class DetectorMethod { kAbsDiffOtsu, kAbsDiffFixed };

DetectorMethod detector_from_string(std::string_view name);
std::string_view detector_name(DetectorMethod method);

struct DetectorConfig {
    DetectorMethod method = DetectorMethod::kAbsDiffFixed;
    double threshold = 0.2;  // used by kAbsDiffFixed, must lie in (0, 1)
    bool majority_filter = false;
};

// Luminance 0.2989 R + 0.5870 G + 0.1140 B of an [H,W,3] image -> [H,W].
// Single-channel [H,W,1] inputs pass through.
Tensor grayscale(const Tensor& image);

// Otsu threshold over a 256-bin histogram of values in [0, 1]. Returns the
// bin index k*; pixels with bin > k* are foreground. nullopt when the
// between-class variance is zero for every split.
std::optional<std::size_t> otsu_bin(const Tensor& values);

// 3x3 majority filter with zero padding: a pixel is set iff at least 5 of
// the 9 window cells are set.
ChangeMask majority_filter(const ChangeMask& mask);

ChangeMask detect_changes(const Tensor& img_a, const Tensor& img_b, const DetectorConfig& cfg = {});

// ---------------------------------------------------------------- image quality

// 10 log10(1 / MSE); +infinity when the images are identical.
double psnr(const Tensor& a, const Tensor& b);

// Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5), C1 = 0.01^2,
// C2 = 0.03^2. Accepts [H,W] or [H,W,C]; channels are averaged.
double ssim(const Tensor& a, const Tensor& b);

}  // namespace tamms::metrics
