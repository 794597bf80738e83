#pragma once

// Run configuration and the five pipeline commands. Each command reads a
// JSON config, writes its outputs plus the fully resolved config into an
// output directory and throws siva::Error on failure.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <limits>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "siva/error.hpp"
#include "siva/io.hpp"
#include "siva/nn.hpp"
#include "siva/physics.hpp"
#include "siva/signal.hpp"
#include "siva/sim.hpp"
#include "siva/sindy.hpp"
#include "siva/train.hpp"
#include "siva/uq.hpp"

namespace siva::app {

using io::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// logging

enum class LogLevel { Quiet = 0, Error = 1, Warn = 2, Info = 3, Debug = 4 };

inline LogLevel log_level()
{
    const char* env = std::getenv("SIVA_LOG_LEVEL");
    if (!env) return LogLevel::Info;
    const std::string v = env;
    if (v == "quiet") return LogLevel::Quiet;
    if (v == "error") return LogLevel::Error;
    if (v == "warn") return LogLevel::Warn;
    if (v == "debug") return LogLevel::Debug;
    return LogLevel::Info;
}

inline void log(LogLevel level, const std::string& msg)
{
    static const LogLevel threshold = log_level();
    if (level > threshold) return;
    static const char* tags[] = {"", "error", "warn", "info", "debug"};
    std::cerr << "[siva " << tags[static_cast<int>(level)] << "] " << msg << "\n";
}

// ---------------------------------------------------------------------------
// config

inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& section)
{
    require(j.is_object(), section + ": expected an object");
    for (const auto& [key, _] : j.items())
        require(allowed.count(key) > 0, section + ": unknown key '" + key + "'");
}

struct DatasetSource {
    std::string name;
    fs::path displacement, velocity, acceleration, force;  // empty path = not given
};

struct PreprocessConfig {
    bool enabled = false;
    signal::StateDerivationSettings derive;
    double target_rate_hz = 0.0;  // 0 keeps the native rate
    double start_at_s = 0.0;
};

struct ForcePulse {
    std::vector<double> peak_n;  // one entry per dof
    double duration_s = 0.0;
    double start_s = 0.0;
};

struct SimulationCase {
    std::string name;
    std::vector<double> initial_displacement_m;
    std::vector<double> initial_velocity_m_per_s;
    std::optional<ForcePulse> force;
};

struct SimulateConfig {
    double duration_s = 1.0;
    double sample_rate_hz = 10000.0;
    json true_parameters;
    std::vector<SimulationCase> cases;
    sim::IvpConfig ivp;
    double output_rate_hz = 0.0;  // 0 keeps the simulation rate
    double trim_start_s = 0.0;
};

struct SelectConfig {
    std::vector<std::string> approaches{"I", "II", "III"};
    int samples_n = 1000;
    std::optional<int> from_epoch;  // none: the detected convergence epoch
    std::string score_on = "training";
    int candidate_stride = 1;
    bool include_summary_candidates = false;
    double force_cutoff_s = std::numeric_limits<double>::infinity();
    int pdf_points = 201;
    int band_members = 100;
    sim::IvpConfig ivp;
};

struct SindyConfig {
    std::vector<std::string> library;
    double threshold = 0.1;
    int max_iters = 10;
    std::string dataset = "training";
};

struct RunConfig {
    fs::path base_dir;
    std::uint64_t seed = 42;
    std::optional<physics::ModelSpec> model;
    std::optional<SimulateConfig> simulate;
    std::optional<DatasetSource> training;
    std::vector<DatasetSource> validation;
    PreprocessConfig preprocess;
    train::TrainConfig train;
    SelectConfig select;
    std::optional<SindyConfig> sindy;
    fs::path bundle;  // empty: <out>/bundle.json
    fs::path selection;  // empty: <out>/selection.json

    fs::path resolve(const fs::path& p) const { return p.empty() || p.is_absolute() ? p : base_dir / p; }

    const physics::ModelSpec& require_model() const
    {
        require(model.has_value(), "config: missing 'model' section");
        return *model;
    }
};

inline double number_or_inf(const json& j)
{
    if (j.is_string()) {
        require(j.get<std::string>() == "inf", "config: expected a number or \"inf\"");
        return std::numeric_limits<double>::infinity();
    }
    return j.get<double>();
}

inline json inf_or_number(double v)
{
    if (std::isinf(v)) return "inf";
    return v;
}

inline sim::IvpConfig parse_ivp(const json& j, sim::IvpConfig ivp = {})
{
    if (j.contains("rel_tol")) ivp.rel_tol = j.at("rel_tol").get<double>();
    if (j.contains("abs_tol")) ivp.abs_tol = j.at("abs_tol").get<double>();
    if (j.contains("max_steps")) ivp.max_steps = j.at("max_steps").get<long>();
    return ivp;
}

inline DatasetSource parse_dataset(const json& j, const std::string& fallback_name)
{
    check_keys(j, {"name", "prefix", "displacement", "velocity", "acceleration", "force"}, "dataset");
    DatasetSource d;
    d.name = j.value("name", fallback_name);
    if (j.contains("prefix")) {
        const std::string p = j.at("prefix").get<std::string>();
        d.displacement = p + "_displacement.csv";
        d.velocity = p + "_velocity.csv";
        d.acceleration = p + "_acceleration.csv";
    }
    if (j.contains("displacement")) d.displacement = j.at("displacement").get<std::string>();
    if (j.contains("velocity")) d.velocity = j.at("velocity").get<std::string>();
    if (j.contains("acceleration")) d.acceleration = j.at("acceleration").get<std::string>();
    if (j.contains("force")) d.force = j.at("force").get<std::string>();
    return d;
}

inline RunConfig parse_config(const json& j, const fs::path& base_dir)
{
    RunConfig c;
    c.base_dir = base_dir;
    try {
        check_keys(j, {"seed", "model", "simulate", "data", "train", "select", "sindy", "bundle", "selection"}, "config");
        if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("model")) c.model = io::model_from_json(j.at("model"));
        if (j.contains("bundle")) c.bundle = j.at("bundle").get<std::string>();
        if (j.contains("selection")) c.selection = j.at("selection").get<std::string>();

        if (j.contains("simulate")) {
            const auto& s = j.at("simulate");
            check_keys(s, {"duration_s", "sample_rate_hz", "true_parameters", "cases", "rel_tol", "abs_tol", "max_steps",
                           "output_rate_hz", "trim_start_s"},
                       "simulate");
            SimulateConfig sc;
            sc.duration_s = s.value("duration_s", sc.duration_s);
            sc.sample_rate_hz = s.value("sample_rate_hz", sc.sample_rate_hz);
            require(s.contains("true_parameters"), "simulate: missing 'true_parameters'");
            sc.true_parameters = s.at("true_parameters");
            sc.ivp = parse_ivp(s);
            sc.output_rate_hz = s.value("output_rate_hz", 0.0);
            sc.trim_start_s = s.value("trim_start_s", 0.0);
            require(s.contains("cases") && !s.at("cases").empty(), "simulate: at least one case is required");
            for (const auto& cj : s.at("cases")) {
                check_keys(cj, {"name", "initial_displacement_m", "initial_velocity_m_per_s", "force"}, "simulate case");
                SimulationCase k;
                k.name = cj.at("name").get<std::string>();
                k.initial_displacement_m = cj.at("initial_displacement_m").get<std::vector<double>>();
                k.initial_velocity_m_per_s = cj.at("initial_velocity_m_per_s").get<std::vector<double>>();
                if (cj.contains("force")) {
                    const auto& fj = cj.at("force");
                    check_keys(fj, {"shape", "peak_n", "duration_s", "start_s"}, "simulate force");
                    require(fj.value("shape", std::string("half_sine")) == "half_sine",
                            "simulate force: only the 'half_sine' shape is supported");
                    k.force = ForcePulse{fj.at("peak_n").get<std::vector<double>>(), fj.at("duration_s").get<double>(),
                                         fj.value("start_s", 0.0)};
                    require(k.force->duration_s > 0.0, "simulate force: duration_s must be positive");
                }
                sc.cases.push_back(std::move(k));
            }
            require(sc.duration_s > 0.0 && sc.sample_rate_hz > 0.0, "simulate: duration and sample rate must be positive");
            c.simulate = std::move(sc);
        }

        if (j.contains("data")) {
            const auto& d = j.at("data");
            check_keys(d, {"training", "validation", "preprocess"}, "data");
            if (d.contains("training")) c.training = parse_dataset(d.at("training"), "training");
            if (d.contains("validation")) {
                int k = 0;
                for (const auto& v : d.at("validation")) c.validation.push_back(parse_dataset(v, "validation_" + std::to_string(k++)));
            }
            if (d.contains("preprocess")) {
                const auto& p = d.at("preprocess");
                check_keys(p, {"enabled", "filter_order", "band_low_hz", "band_high_hz", "highpass_hz", "target_rate_hz",
                               "start_at_s"},
                           "preprocess");
                c.preprocess.enabled = p.value("enabled", true);
                c.preprocess.derive.order = p.value("filter_order", c.preprocess.derive.order);
                c.preprocess.derive.band_low_hz = p.value("band_low_hz", c.preprocess.derive.band_low_hz);
                c.preprocess.derive.band_high_hz = p.value("band_high_hz", c.preprocess.derive.band_high_hz);
                c.preprocess.derive.highpass_hz = p.value("highpass_hz", c.preprocess.derive.highpass_hz);
                c.preprocess.target_rate_hz = p.value("target_rate_hz", 0.0);
                c.preprocess.start_at_s = p.value("start_at_s", 0.0);
            }
        }

        c.train.seed = c.seed;
        if (j.contains("train")) {
            const auto& t = j.at("train");
            check_keys(t, {"max_epochs", "batch_size", "latent_dim", "learning_rate", "gamma", "mse_normalization",
                           "discriminator_input_scaling", "convergence_window", "convergence_param_tolerance",
                           "convergence_dloss_tolerance", "generator_widths", "discriminator_widths", "leaky_slope",
                           "output_weight_scale", "initial_mantissa"},
                       "train");
            auto& tc = c.train;
            tc.max_epochs = t.value("max_epochs", tc.max_epochs);
            tc.batch_size = t.value("batch_size", tc.batch_size);
            tc.latent_dim = t.value("latent_dim", tc.latent_dim);
            tc.learning_rate = t.value("learning_rate", tc.learning_rate);
            tc.gamma = t.value("gamma", tc.gamma);
            tc.mse_normalization = t.value("mse_normalization", tc.mse_normalization);
            tc.discriminator_input_scaling = t.value("discriminator_input_scaling", tc.discriminator_input_scaling);
            tc.convergence_window = t.value("convergence_window", tc.convergence_window);
            tc.convergence_param_tol = t.value("convergence_param_tolerance", tc.convergence_param_tol);
            tc.convergence_dloss_tol = t.value("convergence_dloss_tolerance", tc.convergence_dloss_tol);
            if (t.contains("generator_widths")) tc.generator_widths = t.at("generator_widths").get<std::vector<int>>();
            if (t.contains("discriminator_widths"))
                tc.discriminator_widths = t.at("discriminator_widths").get<std::vector<int>>();
            tc.leaky_slope = t.value("leaky_slope", tc.leaky_slope);
            tc.output_weight_scale = t.value("output_weight_scale", tc.output_weight_scale);
            tc.initial_mantissa = t.value("initial_mantissa", tc.initial_mantissa);
            tc.validate();
        }

        if (j.contains("select")) {
            const auto& s = j.at("select");
            check_keys(s, {"approaches", "samples_n", "from_epoch", "score_on", "candidate_stride",
                           "include_summary_candidates", "force_cutoff_s", "pdf_points", "band_members", "rel_tol",
                           "abs_tol", "max_steps"},
                       "select");
            auto& sc = c.select;
            if (s.contains("approaches")) sc.approaches = s.at("approaches").get<std::vector<std::string>>();
            for (const auto& a : sc.approaches)
                require(a == "I" || a == "II" || a == "III", "select: unknown approach '" + a + "'");
            sc.samples_n = s.value("samples_n", sc.samples_n);
            if (s.contains("from_epoch") && !s.at("from_epoch").is_null()) {
                if (s.at("from_epoch").is_string())
                    require(s.at("from_epoch").get<std::string>() == "convergence",
                            "select: from_epoch must be an integer or \"convergence\"");
                else
                    sc.from_epoch = s.at("from_epoch").get<int>();
            }
            sc.score_on = s.value("score_on", sc.score_on);
            require(sc.score_on == "training" || sc.score_on == "validation" || sc.score_on == "both",
                    "select: score_on must be 'training', 'validation' or 'both'");
            sc.candidate_stride = s.value("candidate_stride", sc.candidate_stride);
            require(sc.candidate_stride >= 1, "select: candidate_stride must be at least 1");
            sc.include_summary_candidates = s.value("include_summary_candidates", sc.include_summary_candidates);
            if (s.contains("force_cutoff_s")) sc.force_cutoff_s = number_or_inf(s.at("force_cutoff_s"));
            sc.pdf_points = s.value("pdf_points", sc.pdf_points);
            sc.band_members = s.value("band_members", sc.band_members);
            sc.ivp = parse_ivp(s);
            require(sc.samples_n >= 1, "select: samples_n must be at least 1");
        }

        if (j.contains("sindy")) {
            const auto& s = j.at("sindy");
            check_keys(s, {"library", "threshold", "max_iters", "dataset"}, "sindy");
            SindyConfig sc;
            if (s.contains("library")) sc.library = s.at("library").get<std::vector<std::string>>();
            sc.threshold = s.value("threshold", sc.threshold);
            sc.max_iters = s.value("max_iters", sc.max_iters);
            sc.dataset = s.value("dataset", sc.dataset);
            c.sindy = std::move(sc);
        }
    } catch (const json::exception& e) {
        throw Error(std::string("config: ") + e.what());
    }
    return c;
}

inline RunConfig load_config(const fs::path& path)
{
    const json j = io::read_json(path);
    return parse_config(j, fs::absolute(path).parent_path());
}

inline json dataset_to_json(const DatasetSource& d)
{
    json j{{"name", d.name}};
    if (!d.displacement.empty()) j["displacement"] = d.displacement.generic_string();
    if (!d.velocity.empty()) j["velocity"] = d.velocity.generic_string();
    if (!d.acceleration.empty()) j["acceleration"] = d.acceleration.generic_string();
    if (!d.force.empty()) j["force"] = d.force.generic_string();
    return j;
}

/// Every setting with its default filled in; dataset paths are absolute.
inline json resolved_config(const RunConfig& c)
{
    json j;
    j["seed"] = c.seed;
    if (c.model) j["model"] = io::model_to_json(*c.model);
    if (c.simulate) {
        const auto& s = *c.simulate;
        json cases = json::array();
        for (const auto& k : s.cases) {
            json cj{{"name", k.name},
                    {"initial_displacement_m", k.initial_displacement_m},
                    {"initial_velocity_m_per_s", k.initial_velocity_m_per_s}};
            if (k.force)
                cj["force"] = {{"shape", "half_sine"},
                               {"peak_n", k.force->peak_n},
                               {"duration_s", k.force->duration_s},
                               {"start_s", k.force->start_s}};
            cases.push_back(cj);
        }
        j["simulate"] = {{"duration_s", s.duration_s},       {"sample_rate_hz", s.sample_rate_hz},
                         {"true_parameters", s.true_parameters}, {"cases", cases},
                         {"rel_tol", s.ivp.rel_tol},         {"abs_tol", s.ivp.abs_tol},
                         {"max_steps", s.ivp.max_steps},     {"output_rate_hz", s.output_rate_hz},
                         {"trim_start_s", s.trim_start_s}};
    }
    if (c.training || !c.validation.empty()) {
        json d;
        auto abs_ds = [&](DatasetSource ds) {
            for (auto* p : {&ds.displacement, &ds.velocity, &ds.acceleration, &ds.force})
                if (!p->empty()) *p = c.resolve(*p).lexically_normal();
            return dataset_to_json(ds);
        };
        if (c.training) d["training"] = abs_ds(*c.training);
        d["validation"] = json::array();
        for (const auto& v : c.validation) d["validation"].push_back(abs_ds(v));
        const auto& p = c.preprocess;
        d["preprocess"] = {{"enabled", p.enabled},
                           {"filter_order", p.derive.order},
                           {"band_low_hz", p.derive.band_low_hz},
                           {"band_high_hz", p.derive.band_high_hz},
                           {"highpass_hz", p.derive.highpass_hz},
                           {"target_rate_hz", p.target_rate_hz},
                           {"start_at_s", p.start_at_s}};
        j["data"] = d;
    }
    const auto& t = c.train;
    j["train"] = {{"max_epochs", t.max_epochs},
                  {"batch_size", t.batch_size},
                  {"latent_dim", t.latent_dim},
                  {"learning_rate", t.learning_rate},
                  {"gamma", t.gamma},
                  {"mse_normalization", t.mse_normalization},
                  {"discriminator_input_scaling", t.discriminator_input_scaling},
                  {"convergence_window", t.convergence_window},
                  {"convergence_param_tolerance", t.convergence_param_tol},
                  {"convergence_dloss_tolerance", t.convergence_dloss_tol},
                  {"generator_widths", t.generator_widths},
                  {"discriminator_widths", t.discriminator_widths},
                  {"leaky_slope", t.leaky_slope},
                  {"output_weight_scale", t.output_weight_scale},
                  {"initial_mantissa", t.initial_mantissa}};
    const auto& s = c.select;
    j["select"] = {{"approaches", s.approaches},
                   {"samples_n", s.samples_n},
                   {"from_epoch", s.from_epoch ? json(*s.from_epoch) : json("convergence")},
                   {"score_on", s.score_on},
                   {"candidate_stride", s.candidate_stride},
                   {"include_summary_candidates", s.include_summary_candidates},
                   {"force_cutoff_s", inf_or_number(s.force_cutoff_s)},
                   {"pdf_points", s.pdf_points},
                   {"band_members", s.band_members},
                   {"rel_tol", s.ivp.rel_tol},
                   {"abs_tol", s.ivp.abs_tol},
                   {"max_steps", s.ivp.max_steps}};
    if (c.sindy)
        j["sindy"] = {{"library", c.sindy->library},
                      {"threshold", c.sindy->threshold},
                      {"max_iters", c.sindy->max_iters},
                      {"dataset", c.sindy->dataset}};
    return j;
}

// ---------------------------------------------------------------------------
// datasets

inline train::StateTriplet load_dataset(const RunConfig& c, const DatasetSource& src, train::DataRole role, int dof)
{
    train::StateTriplet t;
    t.name = src.name;
    t.role = role;
    require(!src.acceleration.empty(), "dataset '" + src.name + "': an acceleration file is required");
    const auto acc = io::read_csv(c.resolve(src.acceleration));
    std::optional<signal::TimeSeries> force;
    if (!src.force.empty()) force = io::read_csv(c.resolve(src.force));

    if (c.preprocess.enabled) {
        const auto states = signal::derive_states(acc, c.preprocess.derive);
        t.displacement = states.displacement;
        t.velocity = states.velocity;
        t.acceleration = states.acceleration;
    } else {
        require(!src.displacement.empty() && !src.velocity.empty(),
                "dataset '" + src.name + "': displacement and velocity files are required without preprocessing");
        t.displacement = io::read_csv(c.resolve(src.displacement));
        t.velocity = io::read_csv(c.resolve(src.velocity));
        t.acceleration = acc;
    }
    t.force = force;
    const double rate = c.preprocess.target_rate_hz;
    if (c.preprocess.enabled && (rate > 0.0 || c.preprocess.start_at_s > t.acceleration.start_time)) {
        const double r = rate > 0.0 ? rate : t.acceleration.sample_rate;
        const double start = c.preprocess.start_at_s;
        t.displacement = signal::resample_and_trim(t.displacement, r, start);
        t.velocity = signal::resample_and_trim(t.velocity, r, start);
        t.acceleration = signal::resample_and_trim(t.acceleration, r, start);
        if (t.force) t.force = signal::resample_and_trim(*t.force, r, start);
    }
    for (const auto* s : {&t.displacement, &t.velocity})
        require(s->sample_rate == t.acceleration.sample_rate && s->start_time == t.acceleration.start_time,
                "dataset '" + src.name + "': state files are not on a common time grid");
    if (t.force)
        require(t.force->sample_rate == t.acceleration.sample_rate && t.force->start_time == t.acceleration.start_time,
                "dataset '" + src.name + "': force file is not on the acceleration time grid");
    t.validate(dof);
    return t;
}

inline train::SivaDatasets load_datasets(const RunConfig& c, int dof)
{
    require(c.training.has_value(), "config: missing 'data.training'");
    train::SivaDatasets d;
    d.training = load_dataset(c, *c.training, train::DataRole::Training, dof);
    require(!c.validation.empty(), "config: 'data.validation' must list at least one dataset");
    for (const auto& v : c.validation) d.validation.push_back(load_dataset(c, v, train::DataRole::Validation, dof));
    return d;
}

inline std::vector<train::StateTriplet> scoring_datasets(const RunConfig& c, const train::SivaDatasets& d)
{
    std::vector<train::StateTriplet> out;
    if (c.select.score_on != "validation") out.push_back(d.training);
    if (c.select.score_on != "training")
        for (const auto& v : d.validation) out.push_back(v);
    return out;
}

// ---------------------------------------------------------------------------
// simulate

inline signal::TimeSeries half_sine_force(const ForcePulse& pulse, double rate, Eigen::Index samples)
{
    signal::TimeSeries f;
    f.sample_rate = rate;
    f.channels = Eigen::MatrixXd::Zero(samples, static_cast<Eigen::Index>(pulse.peak_n.size()));
    for (Eigen::Index i = 0; i < samples; ++i) {
        const double tau = (static_cast<double>(i) / rate - pulse.start_s) / pulse.duration_s;
        if (tau < 0.0 || tau > 1.0) continue;
        const double shape = std::sin(std::numbers::pi * tau);
        for (std::size_t d = 0; d < pulse.peak_n.size(); ++d)
            f.channels(i, static_cast<Eigen::Index>(d)) = pulse.peak_n[d] * shape;
    }
    return f;
}

struct SimulatedCase {
    std::string name;
    signal::TimeSeries displacement, velocity, acceleration;
    std::optional<signal::TimeSeries> force;
};

inline std::vector<SimulatedCase> run_simulation(const RunConfig& c)
{
    require(c.simulate.has_value(), "config: missing 'simulate' section");
    const auto& model = c.require_model();
    const auto& s = *c.simulate;
    const auto params = io::parameters_from_json(s.true_parameters, model);
    const int dof = model.dof();
    const auto samples = static_cast<Eigen::Index>(std::llround(s.duration_s * s.sample_rate_hz)) + 1;

    signal::TimeSeries grid;
    grid.sample_rate = s.sample_rate_hz;
    grid.channels.resize(samples, 1);
    auto ivp = s.ivp;
    ivp.output_grid = sim::grid_of(grid);

    std::vector<SimulatedCase> out;
    for (const auto& k : s.cases) {
        require(static_cast<int>(k.initial_displacement_m.size()) == dof &&
                    static_cast<int>(k.initial_velocity_m_per_s.size()) == dof,
                "simulate case '" + k.name + "': initial conditions need one value per dof");
        Eigen::VectorXd y0(2 * dof);
        for (int d = 0; d < dof; ++d) {
            y0(d) = k.initial_displacement_m[static_cast<std::size_t>(d)];
            y0(dof + d) = k.initial_velocity_m_per_s[static_cast<std::size_t>(d)];
        }
        std::optional<sim::ForceSignal> force;
        if (k.force) {
            require(static_cast<int>(k.force->peak_n.size()) == dof,
                    "simulate case '" + k.name + "': force peak_n needs one value per dof");
            force = sim::ForceSignal{half_sine_force(*k.force, s.sample_rate_hz, samples),
                                     k.force->start_s + k.force->duration_s};
        }
        log(LogLevel::Info, "simulating case '" + k.name + "'");
        const auto traj = sim::integrate_rk45(model, params, y0, 0.0, ivp.output_grid.back(), force ? &*force : nullptr, ivp);

        SimulatedCase sc;
        sc.name = k.name;
        auto series = [&](const Eigen::MatrixXd& m) {
            signal::TimeSeries t;
            t.sample_rate = s.sample_rate_hz;
            t.channels = m;
            return t;
        };
        sc.displacement = series(traj.states.leftCols(dof));
        sc.velocity = series(traj.states.rightCols(dof));
        sc.acceleration = series(traj.accelerations);
        if (force) sc.force = force->series;
        if (s.output_rate_hz > 0.0 || s.trim_start_s > 0.0) {
            const double r = s.output_rate_hz > 0.0 ? s.output_rate_hz : s.sample_rate_hz;
            for (auto* t : {&sc.displacement, &sc.velocity, &sc.acceleration})
                *t = signal::resample_and_trim(*t, r, s.trim_start_s);
            if (sc.force) sc.force = signal::resample_and_trim(*sc.force, r, s.trim_start_s);
        }
        out.push_back(std::move(sc));
    }
    return out;
}

inline void prepare_output_dir(const fs::path& out, const RunConfig& c, const std::string& command)
{
    std::error_code ec;
    fs::create_directories(out, ec);
    require(fs::is_directory(out), "cannot create output directory '" + out.string() + "'");
    json resolved = resolved_config(c);
    resolved["command"] = command;
    io::write_json(out / ("resolved_config_" + command + ".json"), resolved);
}

inline void cmd_simulate(const RunConfig& c, const fs::path& out)
{
    c.require_model();
    require(c.simulate.has_value(), "config: missing 'simulate' section");
    prepare_output_dir(out, c, "simulate");
    for (const auto& sc : run_simulation(c)) {
        io::write_csv(out / (sc.name + "_displacement.csv"), sc.displacement);
        io::write_csv(out / (sc.name + "_velocity.csv"), sc.velocity);
        io::write_csv(out / (sc.name + "_acceleration.csv"), sc.acceleration);
        if (sc.force) io::write_csv(out / (sc.name + "_force.csv"), *sc.force);
    }
}

// ---------------------------------------------------------------------------
// identify

struct Bundle {
    physics::ModelSpec model;
    json config;
    nn::Mlp generator;
    nn::Mlp discriminator;
    std::vector<train::EpochRecord> records;
    std::optional<int> convergence_epoch;
    std::optional<std::string> error;
};

inline json bundle_to_json(const Bundle& b)
{
    json records = json::array();
    for (const auto& r : b.records) records.push_back(io::record_to_json(r));
    return {{"format", "siva-bundle-1"},
            {"model", io::model_to_json(b.model)},
            {"config", b.config},
            {"generator", io::mlp_to_json(b.generator)},
            {"discriminator", io::mlp_to_json(b.discriminator)},
            {"records", records},
            {"convergence_epoch", b.convergence_epoch ? json(*b.convergence_epoch) : json(nullptr)},
            {"error", b.error ? json(*b.error) : json(nullptr)}};
}

inline Bundle bundle_from_json(const json& j)
{
    try {
        require(j.value("format", std::string()) == "siva-bundle-1", "bundle: unrecognised format");
        Bundle b;
        b.model = io::model_from_json(j.at("model"));
        b.config = j.at("config");
        b.generator = io::mlp_from_json(j.at("generator"));
        b.discriminator = io::mlp_from_json(j.at("discriminator"));
        for (const auto& r : j.at("records")) b.records.push_back(io::record_from_json(r, b.model));
        if (!j.at("convergence_epoch").is_null()) b.convergence_epoch = j.at("convergence_epoch").get<int>();
        if (!j.at("error").is_null()) b.error = j.at("error").get<std::string>();
        return b;
    } catch (const json::exception& e) {
        throw Error(std::string("bundle: ") + e.what());
    }
}

inline fs::path bundle_path(const RunConfig& c, const fs::path& out)
{
    return c.bundle.empty() ? out / "bundle.json" : c.resolve(c.bundle);
}

inline fs::path selection_path(const RunConfig& c, const fs::path& out)
{
    return c.selection.empty() ? out / "selection.json" : c.resolve(c.selection);
}

inline Bundle cmd_identify(const RunConfig& c, const fs::path& out)
{
    const auto& model = c.require_model();
    const auto data = load_datasets(c, model.dof());  // every input parses before training starts
    prepare_output_dir(out, c, "identify");

    auto P = train::make_generator(model, c.train, c.seed);
    auto D = train::make_discriminator(model, c.train, c.seed + 1);
    std::string log_lines;
    const int report_every = std::max(1, c.train.max_epochs / 20);
    auto on_epoch = [&](const train::EpochRecord& r) {
        log_lines += io::record_to_json(r).dump() + "\n";
        if (r.epoch % report_every == 0 || r.epoch == 1) {
            std::string msg = "epoch " + std::to_string(r.epoch) + " d_loss " + io::format_double(r.d_loss) + " mse " +
                              io::format_double(r.mse_loss);
            log(LogLevel::Info, msg);
        }
    };
    log(LogLevel::Info, "training for " + std::to_string(c.train.max_epochs) + " epochs");
    auto result = train::run_training(std::move(P), std::move(D), model, data, c.train, on_epoch);
    io::write_text(out / "epochs.jsonl", log_lines);

    Bundle b;
    b.model = model;
    b.config = resolved_config(c);
    b.generator = std::move(result.generator);
    b.discriminator = std::move(result.discriminator);
    b.records = std::move(result.records);
    b.convergence_epoch = train::detect_convergence(b.records, c.train);
    b.error = result.error;
    io::write_json(bundle_path(c, out), bundle_to_json(b));
    if (b.convergence_epoch)
        log(LogLevel::Info, "convergence detected at epoch " + std::to_string(*b.convergence_epoch));
    else
        log(LogLevel::Warn, "no convergence epoch detected");
    if (b.error) throw Error("training stopped: " + *b.error);
    return b;
}

// ---------------------------------------------------------------------------
// select

inline json fit_to_json(const uq::CoefficientPosterior& p)
{
    json j{{"mean", p.fit.mean},
           {"std", p.fit.std},
           {"sample_count", p.fit.sample_count},
           {"degenerate", p.fit.degenerate},
           {"ci95", {p.fit.ci_low(), p.fit.ci_high()}},
           {"skewness", p.fit.skewness},
           {"excess_kurtosis", p.fit.excess_kurtosis},
           {"jarque_bera", p.fit.jarque_bera},
           {"non_normal", p.fit.non_normal}};
    if (p.pdf) j["pdf"] = {{"grid", p.pdf->grid}, {"density", p.pdf->density}};
    return j;
}

inline json posterior_to_json(const uq::ParameterPosterior& post)
{
    json j = json::object();
    for (const auto& c : post.coefficients) j[c.name] = fit_to_json(c);
    return j;
}

inline int resolve_from_epoch(const SelectConfig& s, const Bundle& b, std::string& source)
{
    require(!b.records.empty(), "select: the bundle holds no epoch records");
    if (s.from_epoch) {
        source = "config";
        return *s.from_epoch;
    }
    if (b.convergence_epoch) {
        source = "convergence";
        return *b.convergence_epoch;
    }
    source = "second_half";
    const int last = b.records.back().epoch;
    log(LogLevel::Warn, "no convergence epoch in bundle; harvesting the second half of training");
    return last / 2 + 1;
}

struct SelectionReport {
    json document;
    std::vector<std::pair<std::string, physics::ParameterSet>> parameters;  // per approach
};

inline SelectionReport run_selection(const RunConfig& c, const Bundle& b, std::uint64_t seed)
{
    const auto& s = c.select;
    const auto& model = b.model;
    SelectionReport rep;
    json approaches = json::object();

    std::optional<train::SivaDatasets> data;
    std::vector<train::StateTriplet> scoring;
    if (c.training) {
        data = load_datasets(c, model.dof());
        scoring = scoring_datasets(c, *data);
    }
    uq::ResimulationSettings resim{s.ivp, s.force_cutoff_s};
    auto score = [&](const physics::ParameterSet& p) -> json {
        if (scoring.empty()) return nullptr;
        return inf_or_number(uq::score_candidate(model, p, scoring, resim));
    };

    auto wants = [&](const std::string& a) { return std::find(s.approaches.begin(), s.approaches.end(), a) != s.approaches.end(); };
    std::optional<uq::Selection> one, two;
    if (wants("I")) {
        train::Rng rng(seed);
        one = uq::approach_one(b.generator, model, s.samples_n, rng, s.pdf_points);
        approaches["I"] = {{"parameters", io::parameters_to_json(one->parameters)},
                           {"posterior", posterior_to_json(one->posterior)},
                           {"samples_n", s.samples_n},
                           {"mse", score(one->parameters)}};
        rep.parameters.emplace_back("I", one->parameters);
    }
    std::string source;
    const int from_epoch = (wants("II") || wants("III")) ? resolve_from_epoch(s, b, source) : 0;
    if (wants("II")) {
        two = uq::approach_two(model, b.records, from_epoch, s.pdf_points);
        approaches["II"] = {{"parameters", io::parameters_to_json(two->parameters)},
                            {"posterior", posterior_to_json(two->posterior)},
                            {"from_epoch", from_epoch},
                            {"from_epoch_source", source},
                            {"mse", score(two->parameters)}};
        rep.parameters.emplace_back("II", two->parameters);
    }
    if (wants("III")) {
        require(!scoring.empty(), "select: approach III needs measured displacement data ('data' section)");
        std::vector<physics::ParameterSet> candidates;
        std::vector<std::string> origin;
        std::size_t k = 0;
        for (const auto& r : b.records) {
            if (r.epoch < from_epoch) continue;
            if (k++ % static_cast<std::size_t>(s.candidate_stride) != 0) continue;
            candidates.push_back(r.param_mean);
            origin.push_back("epoch " + std::to_string(r.epoch));
        }
        if (s.include_summary_candidates) {
            if (one) {
                candidates.push_back(one->parameters);
                origin.push_back("approach I mean");
            }
            if (two) {
                candidates.push_back(two->parameters);
                origin.push_back("approach II mean");
            }
        }
        require(!candidates.empty(), "select: no candidates for approach III (from_epoch " +
                                         std::to_string(from_epoch) + " is beyond the last epoch)");
        log(LogLevel::Info, "approach III: simulating " + std::to_string(candidates.size()) + " candidates");
        const auto three = uq::approach_three(candidates, model, scoring, resim);
        json mses = json::array();
        for (double m : three.candidate_mse) mses.push_back(inf_or_number(m));
        approaches["III"] = {{"parameters", io::parameters_to_json(three.best)},
                             {"mse", three.mse},
                             {"best_index", three.best_index},
                             {"best_origin", origin[three.best_index]},
                             {"candidate_count", candidates.size()},
                             {"candidate_mse", mses}};
        rep.parameters.emplace_back("III", three.best);
    }
    json scored = json::array();
    for (const auto& d : scoring) scored.push_back(d.name);
    rep.document = {{"format", "siva-selection-1"},
                    {"seed", seed},
                    {"convergence_epoch", b.convergence_epoch ? json(*b.convergence_epoch) : json(nullptr)},
                    {"scored_on", scored},
                    {"approaches", approaches}};
    return rep;
}

inline std::string selection_csv(const SelectionReport& rep)
{
    std::string out = "approach,coefficient,value,mean,std,ci95_low,ci95_high\n";
    for (const auto& [name, params] : rep.parameters) {
        const auto& a = rep.document.at("approaches").at(name);
        for (std::size_t i = 0; i < params.size(); ++i) {
            out += name + "," + params.names[i] + "," + io::format_double(params.values[i]);
            if (a.contains("posterior")) {
                const auto& f = a.at("posterior").at(params.names[i]);
                out += "," + io::format_double(f.at("mean").get<double>()) + "," +
                       io::format_double(f.at("std").get<double>()) + "," +
                       io::format_double(f.at("ci95")[0].get<double>()) + "," +
                       io::format_double(f.at("ci95")[1].get<double>());
            } else {
                out += ",,,,";
            }
            out += "\n";
        }
    }
    return out;
}

inline SelectionReport cmd_select(const RunConfig& c, const fs::path& out)
{
    const auto bpath = bundle_path(c, out);
    const auto b = bundle_from_json(io::read_json(bpath));
    prepare_output_dir(out, c, "select");
    auto rep = run_selection(c, b, c.seed);
    io::write_json(selection_path(c, out), rep.document);
    io::write_text(out / "selection.csv", selection_csv(rep));
    return rep;
}

// ---------------------------------------------------------------------------
// sindy

inline sindy::FunctionLibrary parse_library(const std::vector<std::string>& terms)
{
    require(!terms.empty(), "sindy: the candidate library is empty");
    sindy::FunctionLibrary lib;
    for (const auto& t : terms) lib.add(io::parse_monomial(t));
    return lib;
}

inline json cmd_sindy(const RunConfig& c, const fs::path& out)
{
    require(c.sindy.has_value(), "config: missing 'sindy' section");
    const auto& model = c.require_model();
    const auto& sc = *c.sindy;
    const auto library = parse_library(sc.library);
    library.validate(model.dof());

    const DatasetSource* src = nullptr;
    if (sc.dataset == "training") {
        require(c.training.has_value(), "sindy: missing 'data.training'");
        src = &*c.training;
    } else {
        for (const auto& v : c.validation)
            if (v.name == sc.dataset) src = &v;
        require(src != nullptr, "sindy: no dataset named '" + sc.dataset + "'");
    }
    const auto data = load_dataset(c, *src, train::DataRole::Training, model.dof());
    prepare_output_dir(out, c, "sindy");

    const auto theta = sindy::build_library(data.displacement, data.velocity, library);
    const auto targets = sindy::force_targets(data.acceleration, model.masses, data.force ? &*data.force : nullptr);
    const auto fit = sindy::stls(theta, targets, sc.threshold, sc.max_iters);
    if (fit.rank_deficient) log(LogLevel::Warn, "sindy: rank-deficient active set; coefficients are best effort");

    json equations = json::array();
    const auto text = sindy::equation_strings(fit, library);
    for (Eigen::Index eq = 0; eq < fit.coefficients.cols(); ++eq) {
        json terms = json::array();
        for (Eigen::Index j = 0; j < fit.coefficients.rows(); ++j)
            terms.push_back({{"term", library.labels[static_cast<std::size_t>(j)]},
                             {"coefficient", fit.coefficients(j, eq)},
                             {"active", static_cast<bool>(fit.active(j, eq))}});
        equations.push_back({{"equation", eq}, {"terms", terms}, {"text", text[static_cast<std::size_t>(eq)]}});
    }
    json mse = nullptr;
    try {
        const auto identified = sindy::to_model(fit, library, model.masses);
        uq::ResimulationSettings resim{c.select.ivp, c.select.force_cutoff_s};
        mse = uq::score_candidate(identified.model, identified.parameters, {data}, resim);
        if (std::isinf(mse.get<double>())) mse = "inf";
    } catch (const Error& e) {
        log(LogLevel::Warn, std::string("sindy: resimulation skipped: ") + e.what());
    }
    json report{{"format", "siva-sindy-1"},
                {"dataset", data.name},
                {"threshold", sc.threshold},
                {"iterations", fit.iterations},
                {"rank_deficient", fit.rank_deficient},
                {"condition_estimate", inf_or_number(fit.condition_estimate)},
                {"equations", equations},
                {"displacement_mse", mse}};
    io::write_json(out / "sindy.json", report);
    return report;
}

// ---------------------------------------------------------------------------
// report

inline signal::TimeSeries interleave(const signal::TimeSeries& a, const Eigen::MatrixXd& b)
{
    signal::TimeSeries s = a;
    s.channels.resize(a.length(), 2 * a.channel_count());
    for (Eigen::Index c = 0; c < a.channel_count(); ++c) {
        s.channels.col(2 * c) = a.channels.col(c);
        s.channels.col(2 * c + 1) = b.col(c);
    }
    return s;
}

inline std::vector<std::string> paired_names(Eigen::Index dof, const std::string& a, const std::string& b)
{
    std::vector<std::string> n;
    for (Eigen::Index d = 0; d < dof; ++d) {
        n.push_back(a + "_q" + std::to_string(d));
        n.push_back(b + "_q" + std::to_string(d));
    }
    return n;
}

inline std::string spectrum_csv(const signal::Spectrum& sp, const std::vector<std::string>& names)
{
    std::string out = "frequency_hz";
    for (const auto& n : names) out += "," + n;
    out += "\n";
    for (Eigen::Index k = 0; k < sp.frequencies.size(); ++k) {
        out += io::format_double(sp.frequencies(k));
        for (Eigen::Index c = 0; c < sp.magnitudes.cols(); ++c) out += "," + io::format_double(sp.magnitudes(k, c));
        out += "\n";
    }
    return out;
}

/// Measured vs simulated displacement, DFT magnitudes and an MSE table for
/// every selected parameter set on every dataset, plus an Approach I band.
inline void cmd_report(const RunConfig& c, const fs::path& out)
{
    const auto b = bundle_from_json(io::read_json(bundle_path(c, out)));
    const auto sel = io::read_json(selection_path(c, out));
    const auto& model = b.model;
    const auto data = load_datasets(c, model.dof());
    prepare_output_dir(out, c, "report");
    uq::ResimulationSettings resim{c.select.ivp, c.select.force_cutoff_s};

    std::vector<train::StateTriplet> all{data.training};
    for (const auto& v : data.validation) all.push_back(v);

    std::string table = "approach,dataset,mse\n";
    const auto dof = static_cast<Eigen::Index>(model.dof());
    for (const auto& [name, a] : sel.at("approaches").items()) {
        const auto params = io::parameters_from_json(a.at("parameters"), model);
        for (const auto& d : all) {
            sim::Trajectory traj;
            try {
                traj = uq::resimulate(model, params, d, resim);
            } catch (const Error& e) {
                log(LogLevel::Warn, "report: approach " + name + " on '" + d.name + "' failed to simulate: " + e.what());
                table += name + "," + d.name + ",inf\n";
                continue;
            }
            const double mse = sim::displacement_mse(d.displacement, traj);
            table += name + "," + d.name + "," + io::format_double(mse) + "\n";
            const Eigen::MatrixXd simulated = traj.states.leftCols(dof);
            const auto both = interleave(d.displacement, simulated);
            const std::string stem = d.name + "_approach_" + name;
            io::write_csv(out / (stem + "_displacement.csv"), both, paired_names(dof, "measured", "simulated"));
            io::write_text(out / (stem + "_spectrum.csv"),
                           spectrum_csv(signal::dft_magnitude(both), paired_names(dof, "measured", "simulated")));
        }
    }
    io::write_text(out / "mse_table.csv", table);

    if (sel.at("approaches").contains("I") && c.select.band_members >= 2) {
        train::Rng rng(c.seed);
        const auto one = uq::approach_one(b.generator, model, c.select.band_members, rng);
        std::vector<sim::Trajectory> members;
        for (Eigen::Index r = 0; r < one.samples.rows(); ++r) {
            const Eigen::RowVectorXd row = one.samples.row(r);
            try {
                members.push_back(uq::resimulate(
                    model, physics::make_parameters(model, {row.data(), row.data() + row.size()}), data.training, resim));
            } catch (const Error& e) {
                log(LogLevel::Warn, std::string("band member skipped: ") + e.what());
            }
        }
        if (members.size() >= 2) {
            const auto band = uq::response_band(members);
            signal::TimeSeries s = data.training.displacement;
            s.channels.resize(band.mean.rows(), 3 * dof);
            std::vector<std::string> names;
            for (Eigen::Index d = 0; d < dof; ++d) {
                s.channels.col(3 * d) = band.mean.col(d);
                s.channels.col(3 * d + 1) = band.lower.col(d);
                s.channels.col(3 * d + 2) = band.upper.col(d);
                for (const char* k : {"mean", "lower95", "upper95"}) names.push_back(std::string(k) + "_q" + std::to_string(d));
            }
            io::write_csv(out / (data.training.name + "_approach_I_band.csv"), s, names);
        }
    }
}

}  // namespace siva::app
