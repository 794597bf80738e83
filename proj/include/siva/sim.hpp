#pragma once

// Forward simulation of identified models with the Dormand-Prince 5(4) pair,
// PI step-size control and the pair's 4th-order continuous extension, which
// places the solution on arbitrary measurement time stamps.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "siva/error.hpp"
#include "siva/physics.hpp"
#include "siva/signal.hpp"

namespace siva::sim {

using physics::ModelSpec;
using physics::ParameterSet;
using signal::TimeSeries;

struct IvpConfig {
    double rel_tol = 1e-8;
    double abs_tol = 1e-8;
    std::vector<double> output_grid;  // s, strictly increasing, inside the time span
    long max_steps = 2'000'000;
};

struct Trajectory {
    Eigen::VectorXd times;
    Eigen::MatrixXd states;         // samples x (2 dof), columns [q, qd]
    Eigen::MatrixXd accelerations;  // samples x dof
    long accepted_steps = 0;
    long rejected_steps = 0;

    int dof() const { return static_cast<int>(accelerations.cols()); }
};

/// Sampled force with piecewise-linear interpolation on
/// [first sample, min(cutoff, last sample)] and zero elsewhere.
struct ForceSignal {
    TimeSeries series;
    double cutoff_time = std::numeric_limits<double>::infinity();
};

inline void interp_force_into(const ForceSignal& force, double t, std::span<double> out)
{
    const auto& s = force.series;
    const double end = std::min(force.cutoff_time, s.end_time());
    std::fill(out.begin(), out.end(), 0.0);
    if (s.length() == 0 || t < s.start_time || t > end) return;
    double pos = (t - s.start_time) * s.sample_rate;
    if (std::abs(pos - std::round(pos)) < 1e-9) pos = std::round(pos);  // snap onto knots
    auto i = static_cast<Eigen::Index>(std::floor(pos));
    i = std::clamp<Eigen::Index>(i, 0, s.length() - 1);
    const double frac = pos - static_cast<double>(i);
    for (Eigen::Index c = 0; c < s.channel_count(); ++c) {
        const double a = s.channels(i, c);
        const double b = i + 1 < s.length() ? s.channels(i + 1, c) : a;
        out[static_cast<std::size_t>(c)] = frac == 0.0 ? a : a + frac * (b - a);
    }
}

inline Eigen::VectorXd interp_force(const ForceSignal& force, double t)
{
    require(force.series.length() >= 1, "interp_force: empty force series");
    Eigen::VectorXd f(force.series.channel_count());
    interp_force_into(force, t, {f.data(), static_cast<std::size_t>(f.size())});
    return f;
}

namespace detail {

// Dormand-Prince 5(4) tableau.
inline constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
inline constexpr double a21 = 1.0 / 5;
inline constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
inline constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
inline constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
inline constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                        a65 = -5103.0 / 18656;
inline constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
// 5th-order minus embedded 4th-order weights
inline constexpr double e1 = -71.0 / 57600, e3 = 71.0 / 16695, e4 = -71.0 / 1920, e5 = 17253.0 / 339200,
                        e6 = -22.0 / 525, e7 = 1.0 / 40;

// Continuous extension: y(t + th h) = y + h * sum_i k_i * sum_j P[i][j] th^(j+1).
inline constexpr double P[7][4] = {
    {1.0, -8048581381.0 / 2820520608, 8663915743.0 / 2820520608, -12715105075.0 / 11282082432},
    {0.0, 0.0, 0.0, 0.0},
    {0.0, 131558114200.0 / 32700410799, -68118460800.0 / 10900136933, 87487479700.0 / 32700410799},
    {0.0, -1754552775.0 / 470086768, 14199869525.0 / 1410260304, -10690763975.0 / 1880347072},
    {0.0, 127303824393.0 / 49829197408, -318862633887.0 / 49829197408, 701980252875.0 / 199316789632},
    {0.0, -282668133.0 / 205662961, 2019193451.0 / 616988883, -1453857185.0 / 822651844},
    {0.0, 40617522.0 / 29380423, -110615467.0 / 29380423, 69997945.0 / 29380423}};

// PI controller constants.
inline constexpr double kSafety = 0.9;
inline constexpr double kBeta = 0.04;
inline constexpr double kExpo = 0.2 - kBeta * 0.75;
inline constexpr double kMinFactor = 0.2;
inline constexpr double kMaxFactor = 10.0;

inline double rms_norm(const Eigen::VectorXd& v, const Eigen::VectorXd& scale)
{
    return std::sqrt((v.array() / scale.array()).square().mean());
}

}  // namespace detail

/// Integrates the first-order form y = [q, qd], y' = [qd, qdd(q, qd, F(t))].
inline Trajectory integrate_rk45(const ModelSpec& model, const ParameterSet& params,
                                 const Eigen::VectorXd& initial_state, double t0, double t1,
                                 const ForceSignal* force, const IvpConfig& config)
{
    using namespace detail;
    const int dof = model.dof();
    const Eigen::Index n = 2 * dof;
    require(initial_state.size() == n, "integrate_rk45: initial state must have 2 * dof entries");
    require(initial_state.allFinite(), "integrate_rk45: non-finite initial state");
    require(t1 > t0, "integrate_rk45: time span must be increasing");
    require(config.rel_tol > 0.0 && config.abs_tol > 0.0, "integrate_rk45: tolerances must be positive");
    require(params.size() == model.coefficients.size(), "integrate_rk45: parameter count does not match model");
    if (force) require(force->series.channel_count() == dof, "integrate_rk45: force channels must equal dof");

    std::vector<double> grid = config.output_grid;
    if (grid.empty()) grid = {t0, t1};
    const double grid_tol = 1e-12 * std::max(1.0, std::abs(t1));
    for (std::size_t i = 0; i < grid.size(); ++i) {
        require(grid[i] >= t0 - grid_tol && grid[i] <= t1 + grid_tol, "integrate_rk45: output time outside span");
        if (i > 0) require(grid[i] > grid[i - 1], "integrate_rk45: output grid must be strictly increasing");
    }

    std::vector<double> fbuf(static_cast<std::size_t>(dof), 0.0);
    const std::span<const double> coef(params.values);
    auto rhs = [&](double t, const Eigen::VectorXd& y, Eigen::VectorXd& dy) {
        if (force) interp_force_into(*force, t, fbuf);
        dy.head(dof) = y.tail(dof);
        physics::eval_accel_into(model, coef, {y.data(), static_cast<std::size_t>(dof)},
                                 {y.data() + dof, static_cast<std::size_t>(dof)},
                                 force ? std::span<const double>(fbuf) : std::span<const double>{},
                                 {dy.data() + dof, static_cast<std::size_t>(dof)});
        if (!dy.allFinite()) throw Error("integrate_rk45: non-finite derivative at t = " + std::to_string(t));
    };

    Trajectory traj;
    traj.times.resize(static_cast<Eigen::Index>(grid.size()));
    traj.states.resize(static_cast<Eigen::Index>(grid.size()), n);
    std::size_t next_out = 0;
    auto emit = [&](double t, const Eigen::VectorXd& y) {
        traj.times(static_cast<Eigen::Index>(next_out)) = t;
        traj.states.row(static_cast<Eigen::Index>(next_out)) = y.transpose();
        ++next_out;
    };

    Eigen::VectorXd y = initial_state, y_new(n), k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), tmp(n),
                    scale(n), err(n);
    double t = t0;
    rhs(t, y, k1);

    while (next_out < grid.size() && grid[next_out] <= t0 + grid_tol) emit(grid[next_out], y);

    // initial step size
    scale = config.abs_tol + y.array().abs() * config.rel_tol;
    const double d0 = rms_norm(y, scale);
    const double d1 = rms_norm(k1, scale);
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h0 = std::min(h0, t1 - t0);
    tmp = y + h0 * k1;
    rhs(t + h0, tmp, k2);
    const double d2 = rms_norm(k2 - k1, scale) / h0;
    const double h1 = std::max(d1, d2) <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / std::max(d1, d2), 0.2);
    double h = std::min({100.0 * h0, h1, t1 - t0});

    double err_old = 1e-4;
    bool last_rejected = false;
    long steps = 0;
    while (t < t1) {
        if (++steps > config.max_steps) throw Error("integrate_rk45: maximum step count exceeded");
        const double min_step = 16.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(t));
        if (h < min_step) throw Error("integrate_rk45: step size underflow at t = " + std::to_string(t));
        if (t + h > t1) h = t1 - t;

        tmp = y + h * (a21 * k1);
        rhs(t + c2 * h, tmp, k2);
        tmp = y + h * (a31 * k1 + a32 * k2);
        rhs(t + c3 * h, tmp, k3);
        tmp = y + h * (a41 * k1 + a42 * k2 + a43 * k3);
        rhs(t + c4 * h, tmp, k4);
        tmp = y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
        rhs(t + c5 * h, tmp, k5);
        tmp = y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
        rhs(t + h, tmp, k6);
        y_new = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
        const double t_new = t + h;
        rhs(t_new, y_new, k7);

        err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
        scale = config.abs_tol + y.array().abs().max(y_new.array().abs()) * config.rel_tol;
        const double err_norm = rms_norm(err, scale);
        const double fac11 = std::pow(std::max(err_norm, 1e-300), kExpo);

        if (err_norm <= 1.0) {
            // dense output for every grid point inside (t, t_new]
            while (next_out < grid.size() && grid[next_out] <= t_new + grid_tol) {
                const double theta = std::clamp((grid[next_out] - t) / h, 0.0, 1.0);
                double powers[4] = {theta, theta * theta, theta * theta * theta, theta * theta * theta * theta};
                auto w = [&](int i) {
                    return P[i][0] * powers[0] + P[i][1] * powers[1] + P[i][2] * powers[2] + P[i][3] * powers[3];
                };
                tmp = y + h * (w(0) * k1 + w(2) * k3 + w(3) * k4 + w(4) * k5 + w(5) * k6 + w(6) * k7);
                emit(grid[next_out], tmp);
            }
            double fac = fac11 / std::pow(err_old, kBeta);
            fac = std::clamp(fac / kSafety, 1.0 / kMaxFactor, 1.0 / kMinFactor);
            double h_new = h / fac;
            if (last_rejected) h_new = std::min(h_new, h);
            err_old = std::max(err_norm, 1e-4);
            t = t_new;
            y = y_new;
            k1 = k7;
            h = h_new;
            last_rejected = false;
            ++traj.accepted_steps;
        } else {
            h /= std::min(1.0 / kMinFactor, fac11 / kSafety);
            last_rejected = true;
            ++traj.rejected_steps;
        }
    }
    require(next_out == grid.size(), "integrate_rk45: output grid not fully covered");

    traj.accelerations.resize(traj.states.rows(), dof);
    for (Eigen::Index i = 0; i < traj.states.rows(); ++i) {
        const Eigen::VectorXd row = traj.states.row(i).transpose();
        if (force) interp_force_into(*force, traj.times(i), fbuf);
        Eigen::VectorXd acc(dof);
        physics::eval_accel_into(model, coef, {row.data(), static_cast<std::size_t>(dof)},
                                 {row.data() + dof, static_cast<std::size_t>(dof)},
                                 force ? std::span<const double>(fbuf) : std::span<const double>{},
                                 {acc.data(), static_cast<std::size_t>(dof)});
        traj.accelerations.row(i) = acc.transpose();
    }
    return traj;
}

/// Output grid matching the time stamps of a measured series.
inline std::vector<double> grid_of(const TimeSeries& series)
{
    std::vector<double> g(static_cast<std::size_t>(series.length()));
    for (Eigen::Index i = 0; i < series.length(); ++i) g[static_cast<std::size_t>(i)] = series.time(i);
    return g;
}

/// (1/J) sum_j sum_dof (x_j - x~_j)^2 over a common time grid.
inline double displacement_mse(const TimeSeries& measured, const Trajectory& simulated)
{
    require(measured.length() == simulated.times.size(), "displacement_mse: sample counts differ");
    require(measured.channel_count() == simulated.dof(), "displacement_mse: channel counts differ");
    const double tol = 1e-6 * measured.dt();
    for (Eigen::Index j = 0; j < measured.length(); ++j)
        require(std::abs(measured.time(j) - simulated.times(j)) <= tol, "displacement_mse: time grids differ");
    const Eigen::MatrixXd diff = measured.channels - simulated.states.leftCols(simulated.dof());
    return diff.squaredNorm() / static_cast<double>(measured.length());
}

}  // namespace siva::sim
