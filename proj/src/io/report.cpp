#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>

#include "tamms/core/errors.hpp"
#include "tamms/io/sits.hpp"

namespace tamms::io {

double round_sig9(double value) {
    if (!std::isfinite(value)) return value;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", value);
    return std::strtod(buf, nullptr);
}

namespace {

Json number_or_null(std::optional<double> v) {
    if (!v) return nullptr;
    return round_sig9(*v);
}

Json psnr_field(std::optional<double> v) {
    if (!v) return nullptr;
    if (std::isinf(*v) && *v > 0) return "inf";
    if (!std::isfinite(*v)) throw ValidationError("psnr must be finite or +inf");
    return round_sig9(*v);
}

std::optional<double> mean_of(const std::vector<double>& xs) {
    if (xs.empty()) return std::nullopt;
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

}  // namespace

Json report_json(const EvalReport& report) {
    Json doc;
    doc["config"] = report.config;
    doc["sequences"] = Json::array();
    std::vector<double> tcs, psnr, ssim;
    for (const SequenceResult& r : report.sequences) {
        for (double v : {r.tcs, r.sps, r.acs}) {
            if (!std::isfinite(v)) throw ValidationError("sequence '" + r.id + "' has a non-finite score");
        }
        Json item;
        item["id"] = r.id;
        item["tcs"] = round_sig9(r.tcs);
        item["sps"] = round_sig9(r.sps);
        item["acs"] = round_sig9(r.acs);
        item["psnr"] = psnr_field(r.psnr);
        item["ssim"] = number_or_null(r.ssim);
        doc["sequences"].push_back(std::move(item));
        tcs.push_back(r.tcs);
        if (r.psnr && std::isfinite(*r.psnr)) psnr.push_back(*r.psnr);
        if (r.ssim) ssim.push_back(*r.ssim);
    }
    if (report.sequences.empty()) {
        doc["aggregate"] = nullptr;
    } else {
        // mean_psnr skips identical pairs (psnr = inf); null when none are finite.
        doc["aggregate"] = {{"mean_tcs", number_or_null(mean_of(tcs))},
                            {"mean_psnr", number_or_null(mean_of(psnr))},
                            {"mean_ssim", number_or_null(mean_of(ssim))}};
    }
    return doc;
}

std::string render_json(const Json& doc) { return doc.dump(2) + "\n"; }

void write_report(const EvalReport& report, const std::filesystem::path& path) {
    write_file(path, render_json(report_json(report)));
}

}  // namespace tamms::io
