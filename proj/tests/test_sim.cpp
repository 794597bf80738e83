#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "siva/sim.hpp"

using namespace siva;
using physics::make_parameters;

namespace {

std::vector<double> uniform_grid(double t1, int n)
{
    std::vector<double> g;
    for (int i = 0; i <= n; ++i) g.push_back(t1 * i / n);
    return g;
}

sim::IvpConfig tolerances(double rel, double abs, std::vector<double> grid)
{
    sim::IvpConfig c;
    c.rel_tol = rel;
    c.abs_tol = abs;
    c.output_grid = std::move(grid);
    return c;
}

Eigen::VectorXd state(double x, double v)
{
    Eigen::VectorXd y(2);
    y << x, v;
    return y;
}

sim::Trajectory duffing_run(const std::vector<double>& coef, double v0, double rel = 1e-10, double abs = 1e-12)
{
    const auto m = physics::duffing_model(0.05);
    return sim::integrate_rk45(m, make_parameters(m, coef), state(0.0, v0), 0.0, 1.0, nullptr,
                               tolerances(rel, abs, uniform_grid(1.0, 10000)));
}

double harmonic_error(double tol)
{
    const auto m = physics::duffing_model(1.0);
    const double w = 2.0 * std::numbers::pi;
    const auto traj = sim::integrate_rk45(m, make_parameters(m, {0.0, 0.0, w * w, 0.0}), state(1.0, 0.0), 0.0, 10.0,
                                          nullptr, tolerances(tol, tol, uniform_grid(10.0, 2000)));
    double worst = 0.0;
    for (Eigen::Index i = 0; i < traj.times.size(); ++i)
        worst = std::max(worst, std::abs(traj.states(i, 0) - std::cos(w * traj.times(i))));
    return worst;
}

signal::TimeSeries column(const Eigen::VectorXd& v, double fs)
{
    signal::TimeSeries s;
    s.sample_rate = fs;
    s.channels = v;
    return s;
}

}  // namespace

TEST(SimIntegrate, HarmonicOscillatorMatchesClosedForm)
{
    EXPECT_LT(harmonic_error(1e-8), 1e-6);
}

TEST(SimIntegrate, TighterToleranceNeverHurts)
{
    double prev = harmonic_error(1e-4);
    for (double tol : {1e-6, 1e-8, 1e-10}) {
        const double now = harmonic_error(tol);
        EXPECT_LE(now, prev) << tol;
        prev = now;
    }
}

TEST(SimIntegrate, ZeroDynamicsStayPut)
{
    const auto m = physics::duffing_model(0.05);
    const auto traj = sim::integrate_rk45(m, make_parameters(m, {0.0, 0.0, 0.0, 0.0}), state(0.3, 0.0), 0.0, 2.0,
                                          nullptr, tolerances(1e-8, 1e-8, uniform_grid(2.0, 50)));
    EXPECT_TRUE((traj.states.col(0).array() == 0.3).all());
    EXPECT_TRUE(traj.states.col(1).isZero(0.0));
}

TEST(SimIntegrate, ConstantForceOnLinearSpring)
{
    const auto m = physics::duffing_model(2.0);
    const double k = 50.0, F = 3.0, w = std::sqrt(k / 2.0);
    signal::TimeSeries f;
    f.sample_rate = 10.0;
    f.channels = Eigen::MatrixXd::Constant(31, 1, F);
    const sim::ForceSignal force{f};
    const auto traj = sim::integrate_rk45(m, make_parameters(m, {0.0, 0.0, k, 0.0}), state(0.0, 0.0), 0.0, 3.0, &force,
                                          tolerances(1e-10, 1e-12, uniform_grid(3.0, 300)));
    for (Eigen::Index i = 0; i < traj.times.size(); ++i)
        EXPECT_NEAR(traj.states(i, 0), F / k * (1.0 - std::cos(w * traj.times(i))), 1e-8);
}

TEST(SimIntegrate, UndampedDuffingConservesEnergy)
{
    const double m = 0.05, k = 300.0, knl = 3e8;
    const auto traj = duffing_run({0.0, 0.0, k, knl}, 5.0, 1e-12, 1e-14);
    auto energy = [&](Eigen::Index i) {
        const double x = traj.states(i, 0), v = traj.states(i, 1);
        return 0.5 * m * v * v + 0.5 * k * x * x + 0.25 * knl * x * x * x * x;
    };
    const double e0 = energy(0);
    double drift = 0.0;
    for (Eigen::Index i = 0; i < traj.times.size(); ++i) drift = std::max(drift, std::abs(energy(i) - e0) / e0);
    EXPECT_LT(drift, 1e-6);
}

TEST(SimIntegrate, AccelerationsMatchEquationOfMotion)
{
    const std::vector<double> truth{0.5, 4000.0, 300.0, 3e8};
    const auto traj = duffing_run(truth, 5.0);
    const auto m = physics::duffing_model(0.05);
    const auto p = make_parameters(m, truth);
    for (Eigen::Index i = 0; i < traj.times.size(); i += 997) {
        const double q = traj.states(i, 0), qd = traj.states(i, 1);
        EXPECT_DOUBLE_EQ(traj.accelerations(i, 0), physics::eval_accel(m, p, {&q, 1}, {&qd, 1})(0));
    }
}

TEST(SimIntegrate, RerunsAreBitIdentical)
{
    const std::vector<double> truth{0.5, 4000.0, 300.0, 3e8};
    const auto a = duffing_run(truth, 8.0);
    const auto b = duffing_run(truth, 8.0);
    EXPECT_TRUE(a.states == b.states);
    EXPECT_EQ(a.accepted_steps, b.accepted_steps);
}

TEST(SimIntegrate, OutputGridIsHonoured)
{
    const auto traj = duffing_run({0.5, 4000.0, 300.0, 3e8}, 5.0);
    ASSERT_EQ(traj.times.size(), 10001);
    EXPECT_EQ(traj.times(0), 0.0);
    EXPECT_EQ(traj.times(10000), 1.0);
    EXPECT_EQ(traj.states(0, 1), 5.0);
}

TEST(SimIntegrate, RejectsBadSetup)
{
    const auto m = physics::duffing_model(0.05);
    const auto p = make_parameters(m, {0.5, 4000.0, 300.0, 3e8});
    EXPECT_THROW(sim::integrate_rk45(m, p, state(0, 5), 1.0, 0.0, nullptr, tolerances(1e-8, 1e-8, {})), Error);
    EXPECT_THROW(sim::integrate_rk45(m, p, Eigen::VectorXd::Zero(3), 0.0, 1.0, nullptr, tolerances(1e-8, 1e-8, {})),
                 Error);
    EXPECT_THROW(sim::integrate_rk45(m, p, state(0, 5), 0.0, 1.0, nullptr, tolerances(1e-8, 1e-8, {0.5, 0.2})), Error);
    EXPECT_THROW(sim::integrate_rk45(m, p, state(0, 5), 0.0, 1.0, nullptr, tolerances(1e-8, 1e-8, {0.5, 1.5})), Error);
}

TEST(SimForce, InterpolationExamples)
{
    signal::TimeSeries f;
    f.sample_rate = 1.0;
    f.start_time = 1.0;
    f.channels.resize(3, 1);
    f.channels << 10.0, 20.0, 40.0;
    const sim::ForceSignal force{f, 2.5};
    EXPECT_EQ(sim::interp_force(force, 1.0)(0), 10.0);
    EXPECT_EQ(sim::interp_force(force, 2.0)(0), 20.0);
    EXPECT_DOUBLE_EQ(sim::interp_force(force, 1.5)(0), 15.0);
    EXPECT_EQ(sim::interp_force(force, 2.6)(0), 0.0);
    EXPECT_EQ(sim::interp_force(force, 0.5)(0), 0.0);
    const sim::ForceSignal open{f};
    EXPECT_EQ(sim::interp_force(open, 3.0)(0), 40.0);
    EXPECT_EQ(sim::interp_force(open, 3.5)(0), 0.0);
}

TEST(SimForce, KnotsAreExactOnFineGrids)
{
    signal::TimeSeries f;
    f.sample_rate = 2048.0;
    f.channels = Eigen::VectorXd::LinSpaced(100, 0.0, 99.0);
    const sim::ForceSignal force{f};
    for (int i = 0; i < 100; ++i) EXPECT_EQ(sim::interp_force(force, i / 2048.0)(0), static_cast<double>(i));
}

TEST(SimMse, Examples)
{
    sim::Trajectory t;
    t.times = Eigen::VectorXd::LinSpaced(2, 0.0, 1.0);
    t.states = Eigen::MatrixXd::Ones(2, 2);
    t.accelerations = Eigen::MatrixXd::Zero(2, 1);
    EXPECT_DOUBLE_EQ(sim::displacement_mse(column(Eigen::VectorXd::Zero(2), 1.0), t), 1.0);
    t.states.setZero();
    EXPECT_DOUBLE_EQ(sim::displacement_mse(column(Eigen::VectorXd::Zero(2), 1.0), t), 0.0);
    EXPECT_THROW(sim::displacement_mse(column(Eigen::VectorXd::Zero(3), 1.0), t), Error);
    EXPECT_THROW(sim::displacement_mse(column(Eigen::VectorXd::Zero(2), 2.0), t), Error);
}

// Published Duffing coefficient sets and their displacement MSE against the
// exact response, reported in mm^2.
TEST(SimMse, PublishedDuffingErrorsReproduce)
{
    const auto truth = duffing_run({0.5, 4000.0, 300.0, 3e8}, 5.0);
    const auto measured = column(truth.states.col(0), 10000.0);
    struct Row {
        std::vector<double> coef;
        double mse_mm2;
    };
    const std::vector<Row> rows{{{0.50089, 3946.1, 316.27, 2.9934e8}, 9.235e-3},
                                {{0.50001, 3998.8, 315.06, 2.9937e8}, 0.01241},
                                {{0.48832, 4052.5, 299.9, 2.9142e8}, 0.2835},
                                {{0.49961, 4004.4, 301.84, 2.9997e8}, 3.262e-3},
                                {{0.49999, 3996.4, 298.64, 2.9999e8}, 1.100e-4}};
    for (const auto& r : rows) {
        const double mse_m2 = sim::displacement_mse(measured, duffing_run(r.coef, 5.0));
        EXPECT_NEAR(mse_m2 * 1e6 / r.mse_mm2, 1.0, 0.01) << r.mse_mm2;
    }
}
