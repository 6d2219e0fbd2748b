#include "tamms/cli/run_config.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <set>
#include <variant>

#include "tamms/core/errors.hpp"

namespace tamms::cli {

namespace {

using Field = std::variant<std::int64_t RunConfig::*, double RunConfig::*, bool RunConfig::*, std::string RunConfig::*>;

struct KeySpec {
    const char* name;
    Field field;
    const char* help;
};

const std::vector<KeySpec>& registry() {
    static const std::vector<KeySpec> keys{
        {"frame_size", &RunConfig::frame_size, "frame side in pixels (even)"},
        {"history", &RunConfig::history, "input frames per forecast"},
        {"prediction_length", &RunConfig::prediction_length, "frames forecast per window (only 1 is supported)"},
        {"diffusion_steps", &RunConfig::diffusion_steps, "noise schedule length"},
        {"unet_ch1", &RunConfig::unet_ch1, "U-Net channels at full resolution"},
        {"unet_ch2", &RunConfig::unet_ch2, "U-Net channels at half resolution"},
        {"temb_dim", &RunConfig::temb_dim, "timestep embedding width (even)"},
        {"token_dim", &RunConfig::token_dim, "PTE token width"},
        {"pte_hidden", &RunConfig::pte_hidden, "PTE MLP hidden width"},
        {"cond_dim", &RunConfig::cond_dim, "length of the semantic vector M_t"},
        {"fusion_dim", &RunConfig::fusion_dim, "SemProc hidden width"},
        {"heads", &RunConfig::heads, "temporal transformer heads"},
        {"feed_forward", &RunConfig::feed_forward, "add a feed-forward sublayer to the temporal transformer"},
        {"dropout", &RunConfig::dropout, "temporal transformer dropout while training"},
        {"alpha_init", &RunConfig::alpha_init, "raw temporal mixing weight a_l, alpha = sigmoid(a_l)"},
        {"ctrl_out_kernel", &RunConfig::ctrl_out_kernel, "cubic kernel extent of the control block's output conv (odd)"},
        {"lr", &RunConfig::lr, "AdamW learning rate"},
        {"lr_min", &RunConfig::lr_min, "cosine floor for stage 3"},
        {"weight_decay", &RunConfig::weight_decay, "AdamW decoupled weight decay"},
        {"grad_clip", &RunConfig::grad_clip, "global gradient norm clip, <= 0 disables"},
        {"batch", &RunConfig::batch, "training batch size"},
        {"stage0_steps", &RunConfig::stage0_steps, "U-Net pretraining steps"},
        {"stage1_steps", &RunConfig::stage1_steps, "structural control steps"},
        {"stage2_steps", &RunConfig::stage2_steps, "semantic fusion steps"},
        {"stage3_steps", &RunConfig::stage3_steps, "cosine fine-tuning steps"},
        {"use_contrastive", &RunConfig::use_contrastive,
         "accepted for compatibility; the contrastive loss needs the language-model pipeline and is never applied"},
        {"contrastive_weight", &RunConfig::contrastive_weight, "weight of the (inert) contrastive loss"},
        {"growth_rate", &RunConfig::growth_rate, "growing_square side growth, px/day"},
        {"velocity", &RunConfig::velocity, "moving_block speed, px/day"},
        {"seasonal_amplitude", &RunConfig::seasonal_amplitude, "seasonal_field background swing"},
        {"noise_amplitude", &RunConfig::noise_amplitude, "per-pixel noise is U[-a/2, a/2]"},
        {"min_gap_days", &RunConfig::min_gap_days, "shortest gap between frames"},
        {"max_gap_days", &RunConfig::max_gap_days, "longest gap between frames"},
        {"detector", &RunConfig::detector, "change detector: abs_diff_otsu or abs_diff_fixed"},
        {"detector_threshold", &RunConfig::detector_threshold, "threshold of abs_diff_fixed"},
        {"majority_filter", &RunConfig::majority_filter, "3x3 majority filter on change masks"},
        {"tcs_sigma", &RunConfig::tcs_sigma, "SPS length scale"},
        {"tcs_beta", &RunConfig::tcs_beta, "ACS exponent"},
        {"sps_both_empty", &RunConfig::sps_both_empty, "SPS when both masks are empty"},
        {"sps_one_empty", &RunConfig::sps_one_empty, "SPS when exactly one mask is empty"},
    };
    return keys;
}

const KeySpec& find_key(std::string_view key) {
    for (const KeySpec& k : registry()) {
        if (key == k.name) return k;
    }
    throw ConfigError("unknown config key '" + std::string(key) + "'");
}

std::string_view trim(std::string_view s) {
    const auto ws = " \t\r";
    const auto a = s.find_first_not_of(ws);
    if (a == std::string_view::npos) return {};
    return s.substr(a, s.find_last_not_of(ws) - a + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* kind) {
    throw ConfigError("config key '" + std::string(key) + "' expects " + kind + ", got '" + std::string(value) + "'");
}

std::string format_double(double v) {
    std::array<char, 64> buf{};
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), end);
}

void require(bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = [] {
        std::vector<ConfigKey> out;
        for (const KeySpec& k : registry()) out.push_back({k.name, k.help});
        return out;
    }();
    return keys;
}

void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value) {
    const KeySpec& spec = find_key(key);
    value = trim(value);
    std::visit(
        [&](auto member) {
            using T = std::remove_reference_t<decltype(cfg.*member)>;
            if constexpr (std::is_same_v<T, std::string>) {
                cfg.*member = std::string(value);
            } else if constexpr (std::is_same_v<T, bool>) {
                if (value == "true" || value == "1") {
                    cfg.*member = true;
                } else if (value == "false" || value == "0") {
                    cfg.*member = false;
                } else {
                    bad_value(key, value, "true or false");
                }
            } else {
                T parsed{};
                auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), parsed);
                if (ec != std::errc() || end != value.data() + value.size() || value.empty()) {
                    bad_value(key, value, std::is_same_v<T, double> ? "a number" : "an integer");
                }
                if constexpr (std::is_same_v<T, double>) {
                    if (!std::isfinite(parsed)) bad_value(key, value, "a finite number");
                }
                cfg.*member = parsed;
            }
        },
        spec.field);
}

std::string get_config_value(const RunConfig& cfg, std::string_view key) {
    const KeySpec& spec = find_key(key);
    return std::visit(
        [&](auto member) -> std::string {
            const auto& v = cfg.*member;
            using T = std::remove_cvref_t<decltype(v)>;
            if constexpr (std::is_same_v<T, std::string>) return v;
            else if constexpr (std::is_same_v<T, bool>) return v ? "true" : "false";
            else if constexpr (std::is_same_v<T, double>) return format_double(v);
            else return std::to_string(v);
        },
        spec.field);
}

void validate(const RunConfig& c) {
    require(c.prediction_length == 1, "prediction_length must be 1: the model forecasts a single frame");
    for (auto [name, v] : {std::pair{"frame_size", c.frame_size}, {"history", c.history},
                           {"diffusion_steps", c.diffusion_steps}, {"unet_ch1", c.unet_ch1},
                           {"unet_ch2", c.unet_ch2}, {"temb_dim", c.temb_dim}, {"token_dim", c.token_dim},
                           {"pte_hidden", c.pte_hidden}, {"cond_dim", c.cond_dim}, {"fusion_dim", c.fusion_dim},
                           {"heads", c.heads}, {"ctrl_out_kernel", c.ctrl_out_kernel}, {"batch", c.batch}}) {
        require(v > 0, std::string(name) + " must be positive");
    }
    for (auto [name, v] : {std::pair{"stage0_steps", c.stage0_steps}, {"stage1_steps", c.stage1_steps},
                           {"stage2_steps", c.stage2_steps}, {"stage3_steps", c.stage3_steps}}) {
        require(v >= 0, std::string(name) + " must be non-negative");
    }
    require(c.contrastive_weight >= 0.0, "contrastive_weight must be non-negative");
    require(c.dropout >= 0.0 && c.dropout < 1.0, "dropout must lie in [0, 1)");
    diffusion::validate(c.model());
    for (int s = 0; s <= 3; ++s) {
        diffusion::StageConfig st = c.stage(s);
        require(st.lr > 0.0, "lr must be positive");
        require(st.lr_min >= 0.0 && st.lr_min <= st.lr, "lr_min must lie in [0, lr]");
        require(st.weight_decay >= 0.0, "weight_decay must be non-negative");
    }
    io::validate(c.scenario(io::ScenarioKind::kGrowingSquare));
    metrics::validate(c.tcs_config());
    c.detector_config();
}

RunConfig parse_config(std::string_view text, RunConfig base) {
    std::set<std::string, std::less<>> seen;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = trim(text.substr(0, nl));
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (line.empty() || line.front() == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
        }
        const std::string key(trim(line.substr(0, eq)));
        if (!seen.insert(key).second) {
            throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
        }
        try {
            set_config_value(base, key, line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return base;
}

RunConfig load_config(const std::filesystem::path& path) { return parse_config(io::read_file(path)); }

std::string serialize(const RunConfig& cfg) {
    std::string out;
    for (const KeySpec& k : registry()) out += std::string(k.name) + "=" + get_config_value(cfg, k.name) + "\n";
    return out;
}

std::string config_hash(const RunConfig& cfg) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : serialize(cfg)) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

diffusion::ModelConfig RunConfig::model() const {
    diffusion::ModelConfig m;
    m.frame_size = static_cast<std::size_t>(frame_size);
    m.history = static_cast<std::size_t>(history);
    m.diffusion_steps = static_cast<std::size_t>(diffusion_steps);
    m.unet.ch1 = static_cast<std::size_t>(unet_ch1);
    m.unet.ch2 = static_cast<std::size_t>(unet_ch2);
    m.unet.temb_dim = static_cast<std::size_t>(temb_dim);
    m.tam.pte.token_dim = static_cast<std::size_t>(token_dim);
    m.tam.pte.hidden_dim = static_cast<std::size_t>(pte_hidden);
    m.tam.cond_dim = static_cast<std::size_t>(cond_dim);
    m.fusion_dim = static_cast<std::size_t>(fusion_dim);
    m.heads = static_cast<std::size_t>(heads);
    m.feed_forward = feed_forward;
    m.dropout = dropout;
    m.alpha_init = alpha_init;
    m.ctrl_out_kernel = static_cast<std::size_t>(ctrl_out_kernel);
    return m;
}

diffusion::StageConfig RunConfig::stage(int s) const {
    diffusion::StageConfig st = diffusion::default_stage(s);
    const std::int64_t steps[4] = {stage0_steps, stage1_steps, stage2_steps, stage3_steps};
    st.steps = static_cast<std::size_t>(steps[s]);
    st.batch = static_cast<std::size_t>(batch);
    st.lr = lr;
    st.lr_min = lr_min;
    st.weight_decay = weight_decay;
    st.grad_clip = grad_clip;
    return st;
}

io::Scenario RunConfig::scenario(io::ScenarioKind kind) const {
    io::Scenario sc;
    sc.kind = kind;
    sc.growth_rate = growth_rate;
    sc.velocity = velocity;
    sc.seasonal_amplitude = seasonal_amplitude;
    sc.noise_amplitude = noise_amplitude;
    sc.min_gap_days = min_gap_days;
    sc.max_gap_days = max_gap_days;
    return sc;
}

metrics::DetectorConfig RunConfig::detector_config() const {
    metrics::DetectorConfig d;
    d.method = metrics::detector_from_string(detector);
    d.threshold = detector_threshold;
    d.majority_filter = majority_filter;
    if (d.method == metrics::DetectorMethod::kAbsDiffFixed) {
        require(d.threshold > 0.0 && d.threshold < 1.0, "detector_threshold must lie in (0, 1)");
    }
    return d;
}

metrics::TcsConfig RunConfig::tcs_config() const {
    metrics::TcsConfig t;
    t.sigma = tcs_sigma;
    t.beta = tcs_beta;
    t.sps_both_empty = sps_both_empty;
    t.sps_one_empty = sps_one_empty;
    return t;
}

}  // namespace tamms::cli
