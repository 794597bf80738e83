#pragma once

// Distribution fits over harvested parameter samples and the three ways of
// turning a trained generator into one parameter set.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "siva/error.hpp"
#include "siva/nn.hpp"
#include "siva/physics.hpp"
#include "siva/sim.hpp"
#include "siva/train.hpp"

namespace siva::uq {

using physics::ModelSpec;
using physics::ParameterSet;

/// Jarque-Bera 5% critical value (chi-square, 2 dof).
inline constexpr double kJarqueBeraCritical = 5.991464547107979;
inline constexpr double kZ95 = 1.96;

struct NormalFit {
    double mean = 0.0;
    double std = 0.0;
    int sample_count = 0;
    bool degenerate = false;
    double skewness = 0.0;
    double excess_kurtosis = 0.0;
    double jarque_bera = 0.0;
    bool non_normal = false;  // JB above its 5% critical value

    double ci_low() const { return mean - kZ95 * std; }
    double ci_high() const { return mean + kZ95 * std; }
};

/// Mean and maximum-likelihood std (divide by n), or the n-1 sample std when
/// `unbiased`. Shape diagnostics are the moment estimators.
inline NormalFit fit_normal(std::span<const double> samples, bool unbiased = false)
{
    require(samples.size() >= 2, "fit_normal: at least 2 samples are required, got " + std::to_string(samples.size()));
    const double n = static_cast<double>(samples.size());
    NormalFit f;
    f.sample_count = static_cast<int>(samples.size());
    double sum = 0.0;
    for (double v : samples) {
        require(std::isfinite(v), "fit_normal: non-finite sample");
        sum += v;
    }
    f.mean = sum / n;
    double m2 = 0.0, m3 = 0.0, m4 = 0.0;
    for (double v : samples) {
        const double d = v - f.mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    f.std = std::sqrt(unbiased ? m2 * n / (n - 1.0) : m2);
    f.degenerate = m2 <= 0.0 || f.std <= std::abs(f.mean) * 1e-15;
    if (!f.degenerate) {
        f.skewness = m3 / std::pow(m2, 1.5);
        f.excess_kurtosis = m4 / (m2 * m2) - 3.0;
        f.jarque_bera = n / 6.0 * (f.skewness * f.skewness + 0.25 * f.excess_kurtosis * f.excess_kurtosis);
        f.non_normal = f.jarque_bera > kJarqueBeraCritical;
    } else {
        f.std = 0.0;
    }
    return f;
}

struct PdfGrid {
    std::vector<double> grid;
    std::vector<double> density;
};

inline double normal_density(double x, double mean, double std)
{
    const double z = (x - mean) / std;
    return std::exp(-0.5 * z * z) / (std * std::sqrt(2.0 * std::numbers::pi));
}

/// Evenly spaced grid over mean +- 6 std with Gaussian densities.
inline PdfGrid pdf_grid(const NormalFit& fit, int points)
{
    require(!fit.degenerate && fit.std > 0.0, "pdf_grid: degenerate fit (std = 0) has no density");
    require(points >= 3, "pdf_grid: at least 3 points are required");
    PdfGrid g;
    const double lo = fit.mean - 6.0 * fit.std;
    const double step = 12.0 * fit.std / (points - 1);
    for (int i = 0; i < points; ++i) {
        const double x = i + 1 == points ? fit.mean + 6.0 * fit.std : lo + i * step;
        g.grid.push_back(x);
        g.density.push_back(normal_density(x, fit.mean, fit.std));
    }
    return g;
}

inline double trapezoid(const std::vector<double>& x, const std::vector<double>& y)
{
    require(x.size() == y.size(), "trapezoid: length mismatch");
    double s = 0.0;
    for (std::size_t i = 1; i < x.size(); ++i) s += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
    return s;
}

struct CoefficientPosterior {
    std::string name;
    NormalFit fit;
    std::optional<PdfGrid> pdf;  // absent for point masses
};

struct ParameterPosterior {
    std::vector<CoefficientPosterior> coefficients;

    const CoefficientPosterior& at(const std::string& name) const
    {
        for (const auto& c : coefficients)
            if (c.name == name) return c;
        throw Error("posterior has no coefficient named '" + name + "'");
    }
};

/// Samples are rows, coefficients are columns.
inline ParameterPosterior posterior_from_samples(const std::vector<std::string>& names, const Eigen::MatrixXd& samples,
                                                 int pdf_points = 201, bool unbiased = false)
{
    require(static_cast<Eigen::Index>(names.size()) == samples.cols(), "posterior: name count mismatch");
    ParameterPosterior post;
    for (Eigen::Index c = 0; c < samples.cols(); ++c) {
        CoefficientPosterior cp;
        cp.name = names[static_cast<std::size_t>(c)];
        if (samples.rows() >= 2) {
            const Eigen::VectorXd col = samples.col(c);
            cp.fit = fit_normal({col.data(), static_cast<std::size_t>(col.size())}, unbiased);
            if (!cp.fit.degenerate) cp.pdf = pdf_grid(cp.fit, pdf_points);
        } else {
            cp.fit.mean = samples(0, c);
            cp.fit.sample_count = 1;
            cp.fit.degenerate = true;
        }
        post.coefficients.push_back(std::move(cp));
    }
    return post;
}

struct Selection {
    ParameterSet parameters;
    ParameterPosterior posterior;
    Eigen::MatrixXd samples;  // rows are the harvested parameter sets
};

inline ParameterSet column_means(const ModelSpec& model, const Eigen::MatrixXd& samples)
{
    const Eigen::RowVectorXd mean = samples.colwise().mean();
    return physics::make_parameters(model, {mean.data(), mean.data() + mean.size()});
}

/// Approach I: decode N parameter sets from fresh noise through the trained generator.
inline Selection approach_one(const nn::Mlp& P, const ModelSpec& model, int N, train::Rng& rng, int pdf_points = 201)
{
    require(N >= 1, "approach_one: N must be at least 1");
    require(P.output_dim() == model.raw_width(), "approach_one: generator output does not match the encoding layout");
    const auto noise = train::sample_noise(N, P.input_dim(), rng);
    Selection s;
    s.samples = train::decode_batch(model, nn::mlp_forward(P, noise));
    s.parameters = column_means(model, s.samples);
    s.posterior = posterior_from_samples(model.coefficient_names(), s.samples, pdf_points);
    return s;
}

/// Approach II: per-epoch mean parameters from `from_epoch` (1-based) onward.
inline Selection approach_two(const ModelSpec& model, const std::vector<train::EpochRecord>& records, int from_epoch,
                              int pdf_points = 201)
{
    require(!records.empty(), "approach_two: no epoch records");
    require(from_epoch >= 1, "approach_two: from_epoch is 1-based");
    std::vector<const train::EpochRecord*> slice;
    for (const auto& r : records)
        if (r.epoch >= from_epoch) slice.push_back(&r);
    require(!slice.empty(), "approach_two: from_epoch " + std::to_string(from_epoch) + " is beyond the last epoch " +
                                std::to_string(records.back().epoch));
    const int n = model.coefficient_count();
    Selection s;
    s.samples.resize(static_cast<Eigen::Index>(slice.size()), n);
    for (std::size_t i = 0; i < slice.size(); ++i) {
        require(static_cast<int>(slice[i]->param_mean.size()) == n, "approach_two: record width mismatch");
        for (int c = 0; c < n; ++c)
            s.samples(static_cast<Eigen::Index>(i), c) = slice[i]->param_mean.values[static_cast<std::size_t>(c)];
    }
    s.parameters = column_means(model, s.samples);
    s.posterior = posterior_from_samples(model.coefficient_names(), s.samples, pdf_points);
    return s;
}

struct ResimulationSettings {
    sim::IvpConfig ivp;
    double force_cutoff = std::numeric_limits<double>::infinity();  // s, relative to the dataset start
};

/// Simulates `params` on the grid of `data`, starting from its first
/// measured displacement and velocity and driven by its force, if any.
inline sim::Trajectory resimulate(const ModelSpec& model, const ParameterSet& params, const train::StateTriplet& data,
                                  const ResimulationSettings& settings)
{
    const int dof = model.dof();
    Eigen::VectorXd y0(2 * dof);
    y0.head(dof) = data.displacement.channels.row(0).transpose();
    y0.tail(dof) = data.velocity.channels.row(0).transpose();
    auto ivp = settings.ivp;
    ivp.output_grid = sim::grid_of(data.displacement);
    std::optional<sim::ForceSignal> force;
    if (data.force) force = sim::ForceSignal{*data.force, data.force->start_time + settings.force_cutoff};
    return sim::integrate_rk45(model, params, y0, data.displacement.start_time, data.displacement.end_time(),
                               force ? &*force : nullptr, ivp);
}

/// Mean displacement MSE over the datasets; +inf when any simulation fails.
inline double score_candidate(const ModelSpec& model, const ParameterSet& params,
                              const std::vector<train::StateTriplet>& datasets, const ResimulationSettings& settings)
{
    double total = 0.0;
    try {
        for (const auto& d : datasets) {
            const double mse = sim::displacement_mse(d.displacement, resimulate(model, params, d, settings));
            if (!std::isfinite(mse)) return std::numeric_limits<double>::infinity();
            total += mse;
        }
    } catch (const Error&) {
        return std::numeric_limits<double>::infinity();
    }
    return total / static_cast<double>(datasets.size());
}

struct ApproachThreeResult {
    ParameterSet best;
    std::size_t best_index = 0;
    double mse = std::numeric_limits<double>::infinity();
    std::vector<double> candidate_mse;
};

/// Approach III: exhaustive resimulation, argmin of displacement MSE. Ties
/// go to the lowest index.
inline ApproachThreeResult approach_three(const std::vector<ParameterSet>& candidates, const ModelSpec& model,
                                          const std::vector<train::StateTriplet>& datasets,
                                          const ResimulationSettings& settings)
{
    require(!candidates.empty(), "approach_three: no candidates");
    require(!datasets.empty(), "approach_three: no datasets with measured displacement");
    for (const auto& d : datasets)
        require(d.displacement.length() >= 2 && d.displacement.channel_count() == model.dof(),
                "approach_three: dataset '" + d.name + "' lacks usable displacement data");
    ApproachThreeResult r;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const double mse = score_candidate(model, candidates[i], datasets, settings);
        r.candidate_mse.push_back(mse);
        if (mse < r.mse) {
            r.mse = mse;
            r.best_index = i;
        }
    }
    require(std::isfinite(r.mse), "approach_three: every candidate failed to simulate");
    r.best = candidates[r.best_index];
    return r;
}

struct ResponseBand {
    Eigen::VectorXd times;
    Eigen::MatrixXd mean, lower, upper;  // samples x state columns
};

/// Pointwise mean +- 1.96 MLE std of the trajectories' states.
inline ResponseBand response_band(const std::vector<sim::Trajectory>& trajectories)
{
    require(trajectories.size() >= 2, "response_band: at least 2 trajectories are required");
    const auto& first = trajectories.front();
    for (const auto& t : trajectories)
        require(t.times.size() == first.times.size() && t.times == first.times &&
                    t.states.cols() == first.states.cols(),
                "response_band: trajectories are not on a common grid");
    const double n = static_cast<double>(trajectories.size());
    ResponseBand b;
    b.times = first.times;
    b.mean = Eigen::MatrixXd::Zero(first.states.rows(), first.states.cols());
    for (const auto& t : trajectories) b.mean += t.states;
    b.mean /= n;
    Eigen::MatrixXd var = Eigen::MatrixXd::Zero(b.mean.rows(), b.mean.cols());
    for (const auto& t : trajectories) var += (t.states - b.mean).cwiseAbs2();
    const Eigen::MatrixXd sd = (var / n).cwiseSqrt();
    b.lower = b.mean - kZ95 * sd;
    b.upper = b.mean + kZ95 * sd;
    return b;
}

}  // namespace siva::uq
