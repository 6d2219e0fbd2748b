#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>

#include "tamms/core/errors.hpp"
#include "tamms/core/rng.hpp"
#include "tamms/io/sits.hpp"
#include "test_util.hpp"

using namespace tamms;
using namespace tamms::io;
namespace fs = std::filesystem;

namespace {

Scenario scenario_of(ScenarioKind kind) {
    Scenario s;
    s.kind = kind;
    return s;
}

double sum(const Tensor& t) {
    double s = 0.0;
    for (double v : t.data()) s += v;
    return s;
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream(p, std::ios::binary) << text;
}

}  // namespace

// ---------------------------------------------------------------- generator

TEST(Synthetic, SameSeedIsBitIdentical) {
    for (auto kind : {ScenarioKind::kGrowingSquare, ScenarioKind::kMovingBlock, ScenarioKind::kSeasonalField,
                      ScenarioKind::kStatic}) {
        auto a = generate_synthetic(scenario_of(kind), 5, 4, 16, 11);
        auto b = generate_synthetic(scenario_of(kind), 5, 4, 16, 11);
        ASSERT_EQ(a.size(), 5u);
        for (std::size_t i = 0; i < a.size(); ++i) {
            EXPECT_EQ(a[i].frames, b[i].frames);
            EXPECT_EQ(a[i].timestamps, b[i].timestamps);
            EXPECT_EQ(a[i].id, b[i].id);
        }
        auto c = generate_synthetic(scenario_of(kind), 5, 4, 16, 12);
        EXPECT_NE(a[0].frames[0], c[0].frames[0]);
    }
}

TEST(Synthetic, SequencesSatisfyInvariantsAndGapRange) {
    for (auto kind : {ScenarioKind::kGrowingSquare, ScenarioKind::kMovingBlock, ScenarioKind::kSeasonalField,
                      ScenarioKind::kStatic}) {
        for (const SitsSequence& s : generate_synthetic(scenario_of(kind), 40, 5, 12, 3)) {
            EXPECT_NO_THROW(validate(s));
            EXPECT_EQ(s.frames.front().shape(), (Shape{12, 12, 3}));
            EXPECT_FALSE(s.scene_description.empty());
            for (std::size_t i = 1; i < s.timestamps.size(); ++i) {
                const auto gap = s.timestamps[i] - s.timestamps[i - 1];
                EXPECT_GE(gap, 30);
                EXPECT_LE(gap, 1100);
            }
        }
    }
}

TEST(Synthetic, StaticFramesStayWithinNoiseOfFirst) {
    Scenario sc = scenario_of(ScenarioKind::kStatic);
    sc.noise_amplitude = 0.05;
    for (const SitsSequence& s : generate_synthetic(sc, 10, 4, 16, 5)) {
        for (const Tensor& f : s.frames) EXPECT_LE(test::max_abs_diff(f, s.frames[0]), sc.noise_amplitude);
    }
}

TEST(Synthetic, NoiseIsBoundedAroundCleanRender) {
    Scenario sc = scenario_of(ScenarioKind::kGrowingSquare);
    for (const auto& item : generate_synthetic_detailed(sc, 10, 4, 16, 9)) {
        for (std::size_t f = 0; f < item.sequence.size(); ++f) {
            Tensor clean = render_clean(sc, item.params, item.sequence.timestamps[f], 16);
            EXPECT_LE(test::max_abs_diff(item.sequence.frames[f], clean), 0.5 * sc.noise_amplitude + 1e-15);
        }
    }
}

TEST(Synthetic, GrowingSquareSideIsLinearInElapsedDays) {
    Scenario sc = scenario_of(ScenarioKind::kGrowingSquare);
    for (const auto& item : generate_synthetic_detailed(sc, 30, 4, 16, 21)) {
        const auto& ts = item.sequence.timestamps;
        const double last_input = square_side(sc, item.params, ts[2]);
        const double target = square_side(sc, item.params, ts[3]);
        EXPECT_NEAR(target, last_input + sc.growth_rate * static_cast<double>(ts[3] - ts[2]), 1e-12);
        EXPECT_GE(item.params.start_side, 2.0);
        EXPECT_LT(item.params.start_side, 4.0);
    }
}

TEST(Synthetic, SquareCoverageMatchesAreaOracle) {
    // Placed well inside a 32x32 frame: total coverage is side^2 and the
    // bounding box oracle agrees pixel by pixel.
    Scenario sc = scenario_of(ScenarioKind::kGrowingSquare);
    Rng rng(4);
    for (int k = 0; k < 50; ++k) {
        SceneParams p;
        p.center_x = rng.uniform(12, 20);
        p.center_y = rng.uniform(12, 20);
        p.start_side = rng.uniform(2, 4);
        p.first_day = 1000;
        const std::int64_t day = 1000 + static_cast<std::int64_t>(rng.index(2000));
        const double side = square_side(sc, p, day);
        Tensor cov = object_coverage(sc, p, day, 32);
        EXPECT_NEAR(sum(cov), side * side, 1e-9);
        const double x0 = p.center_x - side / 2, x1 = p.center_x + side / 2;
        const double y0 = p.center_y - side / 2, y1 = p.center_y + side / 2;
        for (std::size_t i = 0; i < 32; ++i) {
            for (std::size_t j = 0; j < 32; ++j) {
                const double ox = std::max(0.0, std::min(x1, j + 1.0) - std::max(x0, double(j)));
                const double oy = std::max(0.0, std::min(y1, i + 1.0) - std::max(y0, double(i)));
                EXPECT_NEAR(cov[i * 32 + j], ox * oy, 1e-15);
            }
        }
    }
}

TEST(Synthetic, MovingBlockTranslatesAtVelocity) {
    Scenario sc = scenario_of(ScenarioKind::kMovingBlock);
    SceneParams p;
    p.center_x = 10.3;
    p.center_y = 12.1;
    p.direction = 0.4;
    p.first_day = 0;
    auto centre = [&](std::int64_t day) {
        Tensor cov = object_coverage(sc, p, day, 32);
        double m = 0, mx = 0, my = 0;
        for (std::size_t i = 0; i < 32; ++i) {
            for (std::size_t j = 0; j < 32; ++j) {
                const double c = cov[i * 32 + j];
                m += c;
                mx += c * (j + 0.5);
                my += c * (i + 0.5);
            }
        }
        EXPECT_NEAR(m, kBlockSide * kBlockSide, 1e-9);
        return std::pair{mx / m, my / m};
    };
    auto [x0, y0] = centre(0);
    auto [x1, y1] = centre(1500);
    EXPECT_NEAR(x0, 10.3, 1e-9);
    EXPECT_NEAR(y0, 12.1, 1e-9);
    EXPECT_NEAR(x1 - x0, sc.velocity * 1500 * std::cos(0.4), 1e-9);
    EXPECT_NEAR(y1 - y0, sc.velocity * 1500 * std::sin(0.4), 1e-9);
}

TEST(Synthetic, SeasonalBackgroundFollowsAnnualSinusoid) {
    Scenario sc = scenario_of(ScenarioKind::kSeasonalField);
    SceneParams p;
    p.seed = 77;
    p.phase = 1.1;
    const std::int64_t d0 = 11000, d1 = 11123;
    Tensor a = render_clean(sc, p, d0, 8);
    Tensor b = render_clean(sc, p, d1, 8);
    auto season = [&](double d) {
        return sc.seasonal_amplitude * std::sin(2 * std::numbers::pi * d / 365.25 + p.phase);
    };
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(b[i] - a[i], season(d1) - season(d0), 1e-12);
}

TEST(Synthetic, GrowingSquareGivesNonEmptyCleanChangeMasks) {
    Scenario sc = scenario_of(ScenarioKind::kGrowingSquare);
    metrics::DetectorConfig det{metrics::DetectorMethod::kAbsDiffOtsu};
    for (const auto& item : generate_synthetic_detailed(sc, 64, 4, 16, 1)) {
        const auto& ts = item.sequence.timestamps;
        for (std::size_t f = 1; f < ts.size(); ++f) {
            Tensor a = render_clean(sc, item.params, ts[f - 1], 16);
            Tensor b = render_clean(sc, item.params, ts[f], 16);
            EXPECT_FALSE(metrics::detect_changes(a, b, det).empty()) << item.sequence.id << " frame " << f;
        }
    }
}

TEST(Synthetic, RejectsBadParameters) {
    Scenario sc;
    EXPECT_THROW(generate_synthetic(sc, 1, 1, 16, 0), ConfigError);
    EXPECT_THROW(generate_synthetic(sc, 1, 4, 2, 0), ConfigError);
    sc.noise_amplitude = -0.1;
    EXPECT_THROW(generate_synthetic(sc, 1, 4, 16, 0), ConfigError);
    sc = Scenario{};
    sc.growth_rate = std::nan("");
    EXPECT_THROW(validate(sc), ConfigError);
    sc = Scenario{};
    sc.min_gap_days = 500;
    sc.max_gap_days = 100;
    EXPECT_THROW(validate(sc), ConfigError);
    EXPECT_THROW(scenario_from_string("bogus"), ConfigError);
    EXPECT_EQ(scenario_from_string("moving_block"), ScenarioKind::kMovingBlock);
    EXPECT_EQ(scenario_name(ScenarioKind::kSeasonalField), "seasonal_field");
}

// ---------------------------------------------------------------- codecs

TEST(Ppm, RoundTripWithinQuantization) {
    Rng rng(8);
    for (int k = 0; k < 20; ++k) {
        Tensor img = rng.uniform_tensor({1 + rng.index(9), 1 + rng.index(9), 3}, 0, 1);
        Tensor back = decode_ppm(encode_ppm(img));
        ASSERT_EQ(back.shape(), img.shape());
        EXPECT_LE(test::max_abs_diff(back, img), 0.5 / 255 + 1e-15);
        EXPECT_EQ(decode_ppm(encode_ppm(back)), back);
    }
}

TEST(Ppm, ByteScaleAndHeaderParsing) {
    std::string bytes = "P6\n# comment line\n2 1\n255\n";
    for (unsigned char v : {255, 0, 128, 1, 2, 3}) bytes.push_back(static_cast<char>(v));
    Tensor img = decode_ppm(bytes);
    ASSERT_EQ(img.shape(), (Shape{1, 2, 3}));
    EXPECT_EQ(img[0], 1.0);
    EXPECT_EQ(img[1], 0.0);
    EXPECT_EQ(img[2], 128.0 / 255.0);
    EXPECT_EQ(encode_ppm(img), "P6\n2 1\n255\n" + bytes.substr(bytes.size() - 6));
}

TEST(Ppm, RejectsMalformedInput) {
    EXPECT_THROW(decode_ppm("P5\n1 1\n255\n\x01"), ValidationError);
    EXPECT_THROW(decode_ppm("P6\n2 2\n255\n\x01\x02"), ValidationError);
    EXPECT_THROW(decode_ppm("P6\n1 1\n65535\n\x01\x02\x03\x04\x05\x06"), ValidationError);
    EXPECT_THROW(decode_ppm("P6\n1\n"), ValidationError);
    EXPECT_THROW(encode_ppm(Tensor({2, 2, 1})), DimensionError);
    EXPECT_THROW(read_ppm("/nonexistent/frame.ppm"), IoError);
}

TEST(Pbm, KnownLayoutAndRoundTrip) {
    metrics::ChangeMask m(10, 2);
    m.set(0, 0);
    m.set(0, 9);
    m.set(1, 7);
    const std::string bytes = encode_pbm(m);
    EXPECT_EQ(bytes, std::string("P4\n10 2\n\x80\x40\x01\x00", 12));
    EXPECT_EQ(decode_pbm(bytes), m);

    Rng rng(2);
    for (int k = 0; k < 30; ++k) {
        metrics::ChangeMask r(1 + rng.index(20), 1 + rng.index(20));
        for (std::size_t i = 0; i < r.height(); ++i)
            for (std::size_t j = 0; j < r.width(); ++j) r.set(i, j, rng.uniform() < 0.4);
        EXPECT_EQ(decode_pbm(encode_pbm(r)), r);
    }
    EXPECT_THROW(decode_pbm("P4\n9 1\n\x01"), ValidationError);
}

// ---------------------------------------------------------------- manifests

TEST(Manifest, WriteThenLoadHappyPath) {
    fs::path dir = test::scratch_dir("manifest_happy");
    SitsSequence seq = generate_synthetic(Scenario{}, 1, 3, 8, 4).front();
    fs::path manifest = write_sequence(seq, dir / seq.id);
    SitsSequence back = load_sequence(manifest);
    EXPECT_EQ(back.size(), 3u);
    EXPECT_EQ(back.timestamps, seq.timestamps);
    EXPECT_EQ(back.id, seq.id);
    EXPECT_EQ(back.scene_description, seq.scene_description);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_LE(test::max_abs_diff(back.frames[i], seq.frames[i]), 0.5 / 255 + 1e-15);
}

TEST(Manifest, DatasetIsListedInNameOrder) {
    fs::path dir = test::scratch_dir("manifest_dataset");
    auto seqs = generate_synthetic(Scenario{}, 12, 4, 8, 4);
    write_dataset(seqs, dir);
    auto loaded = load_dataset(dir);
    ASSERT_EQ(loaded.size(), 12u);
    for (std::size_t i = 1; i < loaded.size(); ++i) EXPECT_LT(loaded[i - 1].id, loaded[i].id);
    EXPECT_THROW(load_dataset(dir / "missing"), IoError);
}

TEST(Manifest, RejectsInvariantViolations) {
    fs::path dir = test::scratch_dir("manifest_bad");
    Tensor img({2, 2, 3}, 0.5);
    write_ppm(dir / "a.ppm", img);
    write_ppm(dir / "b.ppm", img);
    write_ppm(dir / "c.ppm", Tensor({3, 2, 3}, 0.5));
    auto manifest = [&](const std::string& frames) {
        write_text(dir / "m.json", R"({"id": "x", "scene_description": "s", "frames": [)" + frames + "]}");
        return dir / "m.json";
    };
    EXPECT_NO_THROW(load_sequence(manifest(R"({"path": "a.ppm", "timestamp_days": 10},
                                               {"path": "b.ppm", "timestamp_days": 11})")));
    EXPECT_THROW(load_sequence(manifest(R"({"path": "a.ppm", "timestamp_days": 10},
                                            {"path": "b.ppm", "timestamp_days": 10})")),
                 ValidationError);
    EXPECT_THROW(load_sequence(manifest(R"({"path": "a.ppm", "timestamp_days": 10},
                                            {"path": "c.ppm", "timestamp_days": 20})")),
                 ValidationError);
    EXPECT_THROW(load_sequence(manifest(R"({"path": "a.ppm", "timestamp_days": 10},
                                            {"path": "zz.ppm", "timestamp_days": 20})")),
                 IoError);
    EXPECT_THROW(load_sequence(manifest(R"({"path": "a.ppm", "timestamp_days": 10})")), ValidationError);
    EXPECT_THROW(load_sequence(manifest(R"({"path": "a.ppm", "timestamp_days": 1.5},
                                            {"path": "b.ppm", "timestamp_days": 3})")),
                 ValidationError);
    write_text(dir / "broken.json", "{not json");
    EXPECT_THROW(load_sequence(dir / "broken.json"), ValidationError);
    write_text(dir / "noid.json", R"({"scene_description": "s", "frames": []})");
    EXPECT_THROW(load_sequence(dir / "noid.json"), ValidationError);
    EXPECT_THROW(load_sequence(dir / "absent.json"), IoError);
}

TEST(Manifest, FullScaleByteLoadsAsOne) {
    fs::path dir = test::scratch_dir("manifest_scale");
    write_ppm(dir / "a.ppm", Tensor({1, 1, 3}, 1.0));
    write_ppm(dir / "b.ppm", Tensor({1, 1, 3}, 0.0));
    write_text(dir / "m.json", R"({"id": "x", "scene_description": "s", "frames": [
        {"path": "a.ppm", "timestamp_days": 1}, {"path": "b.ppm", "timestamp_days": 2}]})");
    SitsSequence s = load_sequence(dir / "m.json");
    EXPECT_EQ(s.frames[0][0], 1.0);
    EXPECT_EQ(s.frames[1][2], 0.0);
}

// ---------------------------------------------------------------- reports

TEST(Report, EmptyResultSet) {
    Json doc = report_json({});
    EXPECT_TRUE(doc["sequences"].is_array());
    EXPECT_TRUE(doc["sequences"].empty());
    EXPECT_TRUE(doc["aggregate"].is_null());
}

TEST(Report, MeansAndSentinels) {
    EvalReport one;
    one.sequences.push_back({"a", 1.0, 1.0, 1.0, std::numeric_limits<double>::infinity(), 1.0});
    Json d1 = report_json(one);
    EXPECT_EQ(d1["aggregate"]["mean_tcs"].get<double>(), 1.0);
    EXPECT_EQ(d1["sequences"][0]["psnr"], "inf");
    EXPECT_TRUE(d1["aggregate"]["mean_psnr"].is_null());

    EvalReport two;
    two.sequences.push_back({"a", 0.4, 0.5, 0.8, 20.0, 0.5});
    two.sequences.push_back({"b", 0.6, 0.7, 0.9, std::nullopt, std::nullopt});
    Json d2 = report_json(two);
    EXPECT_EQ(d2["aggregate"]["mean_tcs"].get<double>(), 0.5);
    EXPECT_EQ(d2["aggregate"]["mean_psnr"].get<double>(), 20.0);
    EXPECT_EQ(d2["aggregate"]["mean_ssim"].get<double>(), 0.5);
    EXPECT_TRUE(d2["sequences"][1]["psnr"].is_null());
}

TEST(Report, NineSignificantDigitsAndKeyOrder) {
    EXPECT_EQ(round_sig9(0.123456789123), 0.123456789);
    EXPECT_EQ(round_sig9(123456.7891234), 123456.789);
    EXPECT_EQ(round_sig9(0.0), 0.0);
    EvalReport r;
    r.config["seed"] = 3;
    r.config["detector"] = "abs_diff_otsu";
    r.sequences.push_back({"s", 0.434598208, 0.60653065971, 0.716531310574, 12.3456789012, 0.987654321098});
    const std::string text = render_json(report_json(r));
    EXPECT_NE(text.find("0.60653066"), std::string::npos);
    EXPECT_NE(text.find("12.3456789"), std::string::npos);
    EXPECT_EQ(text.find("12.34567890"), std::string::npos);
    // config, sequences, aggregate; within a sequence id first then tcs, sps, acs, psnr, ssim.
    EXPECT_LT(text.find("\"config\""), text.find("\"sequences\""));
    EXPECT_LT(text.find("\"sequences\""), text.find("\"aggregate\""));
    EXPECT_LT(text.find("\"seed\""), text.find("\"detector\""));
    EXPECT_LT(text.find("\"tcs\""), text.find("\"sps\""));
    EXPECT_LT(text.find("\"psnr\""), text.find("\"ssim\""));
    EXPECT_EQ(render_json(report_json(r)), text);
}

TEST(Report, UnwritablePathIsIoError) {
    EXPECT_THROW(write_report({}, "/nonexistent/dir/report.json"), IoError);
}
