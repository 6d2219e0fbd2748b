#include "tamms/cli/commands.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <thread>

#include <CLI11.hpp>

#include "tamms/cli/gradcheck_suites.hpp"
#include "tamms/cli/run_config.hpp"
#include "tamms/core/errors.hpp"
#include "tamms/core/ops.hpp"
#include "tamms/diffusion/diffusion.hpp"
#include "tamms/io/sits.hpp"
#include "tamms/metrics/metrics.hpp"

namespace tamms::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kToolVersion = TAMMS_VERSION;

// Thrown for flag values that parse but make no sense; reported as usage errors.
struct UsageError : Error {
    using Error::Error;
};

struct CommonFlags {
    std::string config_path;
    std::vector<std::string> overrides;
    std::uint64_t seed = 0;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config_path, "key=value config file")->check(CLI::ExistingFile);
    cmd->add_option("--set", f.overrides, "override one config key (key=value); repeatable, wins over --config");
    cmd->add_option("--seed", f.seed, "seed")->capture_default_str();
}

RunConfig resolve_config(const CommonFlags& f) {
    RunConfig cfg = f.config_path.empty() ? RunConfig{} : load_config(f.config_path);
    for (const std::string& kv : f.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
        try {
            set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw UsageError(std::string("--set: ") + e.what());
        }
    }
    validate(cfg);
    return cfg;
}

io::Json stamp(const RunConfig& cfg, std::uint64_t seed) {
    io::Json j;
    j["tool_version"] = kToolVersion;
    j["config_hash"] = config_hash(cfg);
    j["seed"] = seed;
    return j;
}

std::string fnv1a_hex(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
    return buf;
}

void require_frame_shapes(const std::vector<io::SitsSequence>& data, const diffusion::ModelConfig& m) {
    const Shape want{m.frame_size, m.frame_size, m.unet.image_channels};
    for (const io::SitsSequence& s : data) {
        for (const Tensor& f : s.frames) {
            if (f.shape() != want) {
                throw ValidationError("sequence '" + s.id + "' has frames of shape " + shape_to_string(f.shape()) +
                                      " but the config expects " + shape_to_string(want));
            }
        }
    }
}

// Sorted stems of the files in `dir` with the given extension.
std::vector<std::string> stems_with_extension(const fs::path& dir, const std::string& ext) {
    if (!fs::is_directory(dir)) throw IoError(dir.string() + ": not a directory");
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path().stem().string());
    }
    std::sort(out.begin(), out.end());
    return out;
}

// ---------------------------------------------------------------- synth

struct SynthFlags {
    CommonFlags common;
    std::string scenario;
    std::size_t n = 64;
    std::size_t frames = 4;
    std::size_t size = 16;
    std::string out;
};

int cmd_synth(const SynthFlags& f, std::ostream& out) {
    const RunConfig cfg = resolve_config(f.common);
    const io::ScenarioKind kind = io::scenario_from_string(f.scenario);
    if (f.n == 0 || f.frames < 2 || f.size < 2) throw UsageError("need --n >= 1, --frames >= 2 and --size >= 2");
    const auto seqs = io::generate_synthetic(cfg.scenario(kind), f.n, f.frames, f.size, f.common.seed);
    fs::create_directories(f.out);
    io::write_dataset(seqs, f.out);

    io::Json j = stamp(cfg, f.common.seed);
    j["scenario"] = f.scenario;
    j["n"] = f.n;
    j["frames"] = f.frames;
    j["size"] = f.size;
    io::write_file(fs::path(f.out) / "synth.json", io::render_json(j));
    out << "synth: " << seqs.size() << " " << f.scenario << " sequences, " << f.frames << " frames of " << f.size
        << "x" << f.size << " -> " << f.out << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------- train

struct TrainFlags {
    CommonFlags common;
    int stage = -1;
    std::string data;
    std::string checkpoint_in;
    std::string checkpoint_out;
    std::string report;
};

double mean_of(const std::vector<double>& v, std::size_t a, std::size_t b) {
    double s = 0.0;
    for (std::size_t i = a; i < b; ++i) s += v[i];
    return s / static_cast<double>(b - a);
}

int cmd_train(const TrainFlags& f, std::ostream& out) {
    const RunConfig cfg = resolve_config(f.common);
    const diffusion::ModelConfig model = cfg.model();

    ParamStore store;
    if (f.checkpoint_in.empty()) {
        if (f.stage > 0) {
            throw StateError("stage " + std::to_string(f.stage) + " requires a stage-" + std::to_string(f.stage - 1) +
                             " checkpoint (--checkpoint-in)");
        }
        diffusion::init_model(store, model, f.common.seed);
    } else {
        store = diffusion::load_checkpoint(f.checkpoint_in);
    }
    const auto data = io::load_dataset(f.data);
    require_frame_shapes(data, model);

    const diffusion::TrainReport r = diffusion::train_stage(cfg.stage(f.stage), data, store, model, f.common.seed);
    diffusion::save_checkpoint(f.checkpoint_out, store);

    io::Json j;
    j["stage"] = r.stage;
    j["steps"] = r.steps;
    j["loss"] = r.loss;
    j["seed"] = r.seed;
    j["config_hash"] = config_hash(cfg);
    j["tool_version"] = kToolVersion;
    const fs::path report = f.report.empty() ? fs::path(f.checkpoint_out + ".json") : fs::path(f.report);
    io::write_file(report, io::render_json(j));

    out << "train: stage " << r.stage << ", " << r.steps << " steps";
    if (r.loss.size() >= 2) {
        const std::size_t w = std::min<std::size_t>(100, r.loss.size() / 2);
        out << ", loss " << mean_of(r.loss, 0, w) << " -> " << mean_of(r.loss, r.loss.size() - w, r.loss.size());
    }
    out << " -> " << f.checkpoint_out << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------- forecast

struct ForecastFlags {
    CommonFlags common;
    std::string data;
    std::string checkpoint;
    std::string out;
    std::string semantic = "full";
    std::optional<std::int64_t> horizon_days;
};

int cmd_forecast(const ForecastFlags& f, std::ostream& out) {
    const RunConfig cfg = resolve_config(f.common);
    const diffusion::ModelConfig model = cfg.model();
    const std::string bytes = io::read_file(f.checkpoint);
    ParamStore store = diffusion::decode_checkpoint(bytes);
    if (diffusion::completed_stage(store) < 1) {
        throw StateError("forecasting needs a checkpoint that completed stage 1 or later, found stage " +
                         std::to_string(diffusion::completed_stage(store)));
    }
    const auto data = io::load_dataset(f.data);
    require_frame_shapes(data, model);
    if (f.horizon_days && *f.horizon_days <= 0) throw UsageError("--horizon-days must be positive");
    const auto source = f.semantic == "zeroed" ? diffusion::SemanticSource::kZeroed : diffusion::SemanticSource::kFull;
    const auto sched = diffusion::make_noise_schedule(model.diffusion_steps);
    const std::size_t H = model.history;

    fs::create_directories(f.out);
    io::Json j = stamp(cfg, f.common.seed);
    j["checkpoint_fnv1a"] = fnv1a_hex(bytes);
    j["semantic"] = f.semantic;
    j["forecasts"] = io::Json::array();
    for (std::size_t i = 0; i < data.size(); ++i) {
        const io::SitsSequence& seq = data[i];
        // With a horizon the window is the last H frames; otherwise the last
        // frame is the target and the H frames before it are the history.
        const std::size_t end = f.horizon_days ? seq.size() : seq.size() - 1;
        if (end < H || (!f.horizon_days && seq.size() < H + 1)) {
            throw ValidationError("sequence '" + seq.id + "' has " + std::to_string(seq.size()) + " frames; need " +
                                  std::to_string(H + (f.horizon_days ? 0 : 1)) +
                                  (f.horizon_days ? "" : " (history + target), or pass --horizon-days"));
        }
        io::SitsSequence hist;
        hist.id = seq.id;
        hist.scene_description = seq.scene_description;
        hist.frames.assign(seq.frames.begin() + (end - H), seq.frames.begin() + end);
        hist.timestamps.assign(seq.timestamps.begin() + (end - H), seq.timestamps.begin() + end);
        const std::int64_t day = f.horizon_days ? hist.timestamps.back() + *f.horizon_days : seq.timestamps[end];
        const Tensor frame =
            diffusion::sample_forecast(hist, day, store, model, sched, mix_seed(f.common.seed, i), source);
        io::write_ppm(fs::path(f.out) / (seq.id + ".ppm"), frame);
        j["forecasts"].push_back({{"id", seq.id}, {"file", seq.id + ".ppm"}, {"target_day", day}});
    }
    io::write_file(fs::path(f.out) / "forecast.json", io::render_json(j));
    out << "forecast: " << data.size() << " sequences -> " << f.out << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateFlags {
    CommonFlags common;
    std::string data;
    std::string forecasts;
    std::string masks_hist;
    std::string masks_pred;
    std::string detector;
    std::string report;
    std::size_t threads = 1;
};

template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += threads) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

int cmd_evaluate(const EvaluateFlags& f, std::ostream& out) {
    RunConfig cfg = resolve_config(f.common);
    if (!f.detector.empty()) cfg.detector = f.detector;
    const metrics::DetectorConfig det = cfg.detector_config();
    const metrics::TcsConfig tcs = cfg.tcs_config();
    const bool mask_mode = !f.masks_hist.empty() || !f.masks_pred.empty();
    if (mask_mode == !f.forecasts.empty()) {
        throw UsageError("pass either --forecasts or both --masks-hist and --masks-pred");
    }
    if (mask_mode && (f.masks_hist.empty() || f.masks_pred.empty())) {
        throw UsageError("--masks-hist and --masks-pred go together");
    }
    if (!mask_mode && f.data.empty()) throw UsageError("--forecasts needs --data");

    io::EvalReport report;
    report.config = stamp(cfg, f.common.seed);
    report.config["mode"] = mask_mode ? "masks" : "forecasts";
    report.config["detector"] = cfg.detector;
    report.config["detector_threshold"] = cfg.detector_threshold;
    report.config["majority_filter"] = cfg.majority_filter;
    report.config["tcs_sigma"] = tcs.sigma;
    report.config["tcs_beta"] = tcs.beta;
    report.config["tcs_epsilon"] = tcs.epsilon;
    report.config["sps_both_empty"] = tcs.sps_both_empty;
    report.config["sps_one_empty"] = tcs.sps_one_empty;

    if (mask_mode) {
        const auto hist = stems_with_extension(f.masks_hist, ".pbm");
        const auto pred = stems_with_extension(f.masks_pred, ".pbm");
        if (hist != pred) {
            throw ValidationError("mask directories do not pair up: " + std::to_string(hist.size()) +
                                  " historical vs " + std::to_string(pred.size()) + " predicted masks");
        }
        report.sequences.resize(hist.size());
        parallel_for(hist.size(), f.threads, [&](std::size_t i) {
            const auto mh = io::read_pbm(fs::path(f.masks_hist) / (hist[i] + ".pbm"));
            const auto mp = io::read_pbm(fs::path(f.masks_pred) / (hist[i] + ".pbm"));
            const auto b = metrics::tcs_breakdown(mh, mp, tcs);
            report.sequences[i] = {hist[i], b.tcs, b.sps, b.acs, std::nullopt, std::nullopt};
        });
    } else {
        const auto data = io::load_dataset(f.data);
        const auto found = stems_with_extension(f.forecasts, ".ppm");
        std::vector<std::string> ids;
        for (const auto& s : data) ids.push_back(s.id);
        std::vector<std::string> sorted_ids = ids;
        std::sort(sorted_ids.begin(), sorted_ids.end());
        if (found != sorted_ids) {
            throw ValidationError("forecasts do not align with the data set: " + std::to_string(found.size()) +
                                  " forecasts for " + std::to_string(data.size()) + " sequences");
        }
        const std::size_t H = static_cast<std::size_t>(cfg.history);
        report.sequences.resize(data.size());
        parallel_for(data.size(), f.threads, [&](std::size_t i) {
            const io::SitsSequence& seq = data[i];
            const Tensor forecast = io::read_ppm(fs::path(f.forecasts) / (seq.id + ".ppm"));
            // A sequence longer than the history window ends with the ground-truth target.
            const bool has_target = seq.size() > H;
            const std::size_t last = has_target ? seq.size() - 2 : seq.size() - 1;
            if (last < 1) throw ValidationError("sequence '" + seq.id + "' needs two history frames");
            if (forecast.shape() != seq.frames[last].shape()) {
                throw ValidationError("forecast for '" + seq.id + "' has shape " + shape_to_string(forecast.shape()));
            }
            const auto mh = metrics::detect_changes(seq.frames[last - 1], seq.frames[last], det);
            const auto mp = metrics::detect_changes(seq.frames[last], forecast, det);
            const auto b = metrics::tcs_breakdown(mh, mp, tcs);
            io::SequenceResult r{seq.id, b.tcs, b.sps, b.acs, std::nullopt, std::nullopt};
            if (has_target) {
                r.psnr = metrics::psnr(forecast, seq.frames.back());
                r.ssim = metrics::ssim(forecast, seq.frames.back());
            }
            report.sequences[i] = r;
        });
    }
    io::write_report(report, f.report);
    const io::Json doc = io::report_json(report);
    out << "evaluate: " << report.sequences.size() << " sequences";
    if (!doc["aggregate"].is_null()) out << ", mean_tcs " << doc["aggregate"]["mean_tcs"].get<double>();
    out << " -> " << f.report << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------- gradcheck

struct GradcheckFlags {
    std::uint64_t seed = 0;
    std::string module = "all";
    std::size_t configs = 20;
    bool inject_fault = false;
};

int cmd_gradcheck(const GradcheckFlags& f, std::ostream& out) {
    if (f.configs == 0) throw UsageError("--configs must be positive");
    testing::set_backward_fault(f.inject_fault);
    std::vector<GradcheckResult> results;
    try {
        results = run_gradcheck(f.module, f.seed, f.configs);
    } catch (...) {
        testing::set_backward_fault(false);
        throw;
    }
    testing::set_backward_fault(false);

    bool ok = true;
    double worst = 0.0;
    for (const GradcheckResult& r : results) {
        const bool pass = r.max_rel_error < kGradcheckTolerance;
        ok = ok && pass;
        worst = std::max(worst, r.max_rel_error);
        char line[320];
        std::snprintf(line, sizeof line, "%-4s %-12s %-20s configs %3zu coords %6zu max_rel_error %.3e worst %s (config %zu, analytic %.6e numeric %.6e)\n",
                      pass ? "ok" : "FAIL", r.module.c_str(), r.component.c_str(), r.configs, r.coordinates,
                      r.max_rel_error, r.worst_parameter.c_str(), r.worst_config, r.worst_analytic, r.worst_numeric);
        out << line;
    }
    char line[128];
    std::snprintf(line, sizeof line, "gradcheck %s: %zu components, max_rel_error %.3e, tolerance %.0e\n",
                  ok ? "passed" : "FAILED", results.size(), worst, kGradcheckTolerance);
    out << line;
    return ok ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------- config

int cmd_config(const CommonFlags& f, bool keys, std::ostream& out) {
    if (keys) {
        for (const ConfigKey& k : config_keys()) out << k.name << "\t" << k.help << "\n";
        return kExitOk;
    }
    const RunConfig cfg = resolve_config(f);
    out << "# config_hash " << config_hash(cfg) << "\n" << serialize(cfg);
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Temporal-aware forecasting pipeline for satellite image time series (desk scale)", "tamms"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);
    app.footer(
        "Exit codes: 0 success, 1 runtime or validation failure, 2 usage error.\n"
        "The config key use_contrastive / contrastive_weight is accepted but inert: the contrastive\n"
        "loss depends on the language-model pipeline, which is not part of this tool.");

    SynthFlags synth;
    auto* c_synth = app.add_subcommand("synth", "generate a synthetic SITS data set");
    add_common(c_synth, synth.common);
    std::vector<std::string> scenario_names;
    for (auto k : {io::ScenarioKind::kGrowingSquare, io::ScenarioKind::kMovingBlock, io::ScenarioKind::kSeasonalField,
                   io::ScenarioKind::kStatic}) {
        scenario_names.emplace_back(io::scenario_name(k));
    }
    c_synth->add_option("--scenario", synth.scenario, "scenario")->required()->check(CLI::IsMember(scenario_names));
    c_synth->add_option("--n", synth.n, "number of sequences")->capture_default_str();
    c_synth->add_option("--frames", synth.frames, "frames per sequence")->capture_default_str();
    c_synth->add_option("--size", synth.size, "frame side in pixels")->capture_default_str();
    c_synth->add_option("--out", synth.out, "output directory")->required();

    TrainFlags train;
    auto* c_train = app.add_subcommand("train", "run one training stage (0 pretrains the U-Net, then 1, 2, 3)");
    add_common(c_train, train.common);
    c_train->add_option("--stage", train.stage, "stage")->required()->check(CLI::Range(0, 3));
    c_train->add_option("--data", train.data, "data set directory")->required();
    c_train->add_option("--checkpoint-in", train.checkpoint_in, "checkpoint of the previous stage");
    c_train->add_option("--checkpoint-out", train.checkpoint_out, "checkpoint to write")->required();
    c_train->add_option("--report", train.report, "training report JSON (default <checkpoint-out>.json)");

    ForecastFlags forecast;
    auto* c_forecast = app.add_subcommand("forecast", "sample one forecast frame per sequence");
    add_common(c_forecast, forecast.common);
    c_forecast->add_option("--data", forecast.data, "data set directory")->required();
    c_forecast->add_option("--checkpoint", forecast.checkpoint, "trained checkpoint")->required();
    c_forecast->add_option("--out", forecast.out, "output directory")->required();
    c_forecast->add_option("--semantic", forecast.semantic, "semantic path: full or zeroed (structural-only ablation)")
        ->check(CLI::IsMember({"full", "zeroed"}))
        ->capture_default_str();
    c_forecast->add_option("--horizon-days", forecast.horizon_days,
                           "forecast this many days past the last frame instead of predicting the last frame");

    EvaluateFlags evaluate;
    auto* c_eval = app.add_subcommand("evaluate", "TCS / PSNR / SSIM report for forecasts or precomputed masks");
    add_common(c_eval, evaluate.common);
    c_eval->add_option("--data", evaluate.data, "data set directory");
    c_eval->add_option("--forecasts", evaluate.forecasts, "directory of <id>.ppm forecasts");
    c_eval->add_option("--masks-hist", evaluate.masks_hist, "directory of <id>.pbm historical change masks");
    c_eval->add_option("--masks-pred", evaluate.masks_pred, "directory of <id>.pbm predicted change masks");
    c_eval->add_option("--detector", evaluate.detector, "change detector (overrides the config key)")
        ->check(CLI::IsMember({"abs_diff_otsu", "abs_diff_fixed"}));
    c_eval->add_option("--report", evaluate.report, "report JSON to write")->required();
    c_eval->add_option("--threads", evaluate.threads, "worker threads")->capture_default_str()->check(CLI::PositiveNumber);

    GradcheckFlags grad;
    auto* c_grad = app.add_subcommand("gradcheck", "verify analytic gradients against central differences");
    std::vector<std::string> module_names = gradcheck_modules();
    module_names.emplace_back("all");
    c_grad->add_option("--module", grad.module, "module")->check(CLI::IsMember(module_names))->capture_default_str();
    c_grad->add_option("--seed", grad.seed, "seed")->capture_default_str();
    c_grad->add_option("--configs", grad.configs, "random configs per component")->capture_default_str();
    c_grad->add_flag("--inject-fault", grad.inject_fault, "corrupt the dense backward kernel")->group("");

    CommonFlags config_flags;
    bool list_keys = false;
    auto* c_config = app.add_subcommand("config", "print the resolved config and its hash");
    add_common(c_config, config_flags);
    c_config->add_flag("--keys", list_keys, "list every config key with its meaning");

    std::vector<const char*> argv{"tamms"};
    for (const std::string& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*c_synth) return cmd_synth(synth, out);
        if (*c_train) return cmd_train(train, out);
        if (*c_forecast) return cmd_forecast(forecast, out);
        if (*c_eval) return cmd_evaluate(evaluate, out);
        if (*c_grad) return cmd_gradcheck(grad, out);
        if (*c_config) return cmd_config(config_flags, list_keys, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\nRun with --help for usage.\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}

}  // namespace tamms::cli
