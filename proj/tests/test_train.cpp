#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "siva/sim.hpp"
#include "siva/train.hpp"

using namespace siva;
using namespace siva::train;
using nn::Matrix;

namespace {

const std::vector<double> kTruth{0.5, 4000.0, 300.0, 3e8};

StateTriplet duffing_triplet(const std::string& name, DataRole role, double v0, double duration = 0.1,
                             double fs = 2000.0)
{
    auto model = physics::duffing_model(0.05);
    sim::IvpConfig ivp;
    ivp.rel_tol = 1e-10;
    ivp.abs_tol = 1e-12;
    const int n = static_cast<int>(std::lround(duration * fs));
    for (int i = 0; i <= n; ++i) ivp.output_grid.push_back(i / fs);
    Eigen::VectorXd y0(2);
    y0 << 0.0, v0;
    const auto traj =
        sim::integrate_rk45(model, physics::make_parameters(model, kTruth), y0, 0.0, duration, nullptr, ivp);
    auto series = [&](const Eigen::MatrixXd& m) {
        signal::TimeSeries s;
        s.sample_rate = fs;
        s.channels = m;
        return s;
    };
    return {name, role, series(traj.states.col(0)), series(traj.states.col(1)), series(traj.accelerations), {}};
}

SivaDatasets duffing_data()
{
    return {duffing_triplet("train", DataRole::Training, 5.0),
            {duffing_triplet("val3", DataRole::Validation, 3.0), duffing_triplet("val8", DataRole::Validation, 8.0)}};
}

TrainConfig small_config()
{
    TrainConfig c;
    c.max_epochs = 3;
    c.batch_size = 50;
    c.latent_dim = 4;
    c.generator_widths = {8, 6};
    c.discriminator_widths = {6, 5};
    c.learning_rate = 1e-3;
    return c;
}

physics::ModelSpec sci_duffing()
{
    auto m = physics::duffing_model(0.05);
    for (auto& c : m.coefficients) c.encoding = physics::EncodingMode::SciNotation;
    return m;
}

// D whose output is sigmoid(0) = 0.5 for every input
nn::Mlp constant_half_discriminator(const physics::ModelSpec& model, const TrainConfig& config)
{
    auto D = make_discriminator(model, config, 3);
    D.layers.back().weight.setZero();
    D.layers.back().bias.setZero();
    return D;
}

// fourth-order central differences; the generator loss is O(1e5) so plain
// two-point differences lose too many digits to roundoff
double max_rel_fd_error(nn::Mlp& net, const std::function<double()>& loss, const nn::Gradients& grads, double h)
{
    double worst = 0.0;
    auto at = [&](double& p, double keep, double x) {
        p = keep + x;
        return loss();
    };
    auto check = [&](double& p, double analytic) {
        const double keep = p;
        const double fd = (-at(p, keep, 2 * h) + 8 * at(p, keep, h) - 8 * at(p, keep, -h) + at(p, keep, -2 * h)) / (12 * h);
        p = keep;
        worst = std::max(worst, std::abs(fd - analytic) / std::max({std::abs(fd), std::abs(analytic), 1e-6}));
    };
    for (std::size_t k = 0; k < net.layers.size(); ++k) {
        auto& l = net.layers[k];
        for (Eigen::Index i = 0; i < l.weight.size(); ++i) check(l.weight.data()[i], grads.weight[k].data()[i]);
        for (Eigen::Index i = 0; i < l.bias.size(); ++i) check(l.bias(i), grads.bias[k](i));
    }
    return worst;
}

std::vector<Eigen::Index> first_indices(int n, int stride = 3)
{
    std::vector<Eigen::Index> idx;
    for (int i = 0; i < n; ++i) idx.push_back(static_cast<Eigen::Index>(i * stride));
    return idx;
}

}  // namespace

TEST(TrainNoise, DeterministicForSeed)
{
    Rng a(42), b(42), c(43);
    const Matrix x = sample_noise(5, 16, a);
    EXPECT_EQ(x, sample_noise(5, 16, b));
    EXPECT_NE(x, sample_noise(5, 16, c));
}

TEST(TrainNoise, StandardNormalMoments)
{
    Rng rng(42);
    const Matrix z = sample_noise(1000000, 1, rng);
    const double mean = z.mean();
    const double sd = std::sqrt((z.array() - mean).square().mean());
    EXPECT_NEAR(mean, 0.0, 0.01);
    EXPECT_NEAR(sd, 1.0, 0.01);
}

TEST(TrainNoise, RejectsEmptyRequest)
{
    Rng rng(1);
    EXPECT_THROW(sample_noise(0, 16, rng), Error);
    EXPECT_THROW(sample_noise(3, 0, rng), Error);
}

TEST(TrainDiscriminator, ConstantHalfGivesLn4)
{
    const auto model = physics::duffing_model(0.05);
    const auto config = small_config();
    const auto D = constant_half_discriminator(model, config);
    const Matrix real = Matrix::Random(40, 1), fake = Matrix::Random(40, 1);
    EXPECT_NEAR(evaluate_discriminator(D, real, fake).loss, std::log(4.0), 1e-12);
}

TEST(TrainDiscriminator, IdenticalBatchesNeverBeatLn4)
{
    const auto model = physics::duffing_model(0.05);
    const auto config = small_config();
    const Matrix batch = Matrix::Random(60, 1);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto D = make_discriminator(model, config, seed);
        EXPECT_GE(evaluate_discriminator(D, batch, batch).loss, std::log(4.0) - 1e-12);
    }
    EXPECT_NEAR(evaluate_discriminator(constant_half_discriminator(model, config), batch, batch).loss,
                std::log(4.0), 1e-12);
}

TEST(TrainDiscriminator, GradientMatchesFiniteDifferences)
{
    const auto model = physics::duffing_model(0.05);
    auto D = make_discriminator(model, small_config(), 9);
    const Matrix real = Matrix::Random(30, 1) * 2.0, fake = Matrix::Random(30, 1) * 2.0 + Matrix::Constant(30, 1, 0.5);
    const auto e = evaluate_discriminator(D, real, fake);
    const double worst =
        max_rel_fd_error(D, [&] { return evaluate_discriminator(D, real, fake).loss; }, e.grads, 1e-4);
    EXPECT_LT(worst, 1e-5);
}

TEST(TrainGenerator, HeadStartsAtDeclaredDecade)
{
    auto model = sci_duffing();
    model.coefficients[0].scale = -0.5;
    auto config = small_config();
    config.initial_mantissa = 1.0;
    auto P = make_generator(model, config, 4);
    P.layers.back().weight.setZero();
    Rng rng(1);
    const auto coef = decode_batch(model, nn::mlp_forward(P, sample_noise(3, config.latent_dim, rng)));
    const std::vector<double> expect{-0.1, 1e3, 1e2, 1e8};
    for (int c = 0; c < 4; ++c)
        for (int r = 0; r < 3; ++r) EXPECT_NEAR(coef(r, c) / expect[static_cast<std::size_t>(c)], 1.0, 1e-12);

    config.initial_mantissa = 0.0;
    auto Q = make_generator(model, config, 4);
    EXPECT_TRUE(Q.layers.back().bias(0) == 0.0 && Q.layers.back().bias(2) == 0.0);
    EXPECT_EQ(Q.layers.back().bias(3), 3.0);
}

TEST(TrainGenerator, AdversarialTermIsLn2AgainstConstantD)
{
    const auto model = sci_duffing();
    const auto config = small_config();
    const auto problem = TrainingProblem::prepare(model, duffing_data(), config);
    const auto P = make_generator(model, config, 1);
    const auto D = constant_half_discriminator(model, config);
    Rng rng(5);
    const Matrix noise = sample_noise(20, config.latent_dim, rng);
    const auto e = evaluate_generator(P, D, problem, noise, first_indices(20), sample_validation(problem, 20, rng), 1.0);
    EXPECT_NEAR(e.adv_loss, std::log(2.0), 1e-12);
}

TEST(TrainGenerator, TrueParametersGiveZeroMse)
{
    const auto model = physics::duffing_model(0.05);  // direct encoding: exact decode
    auto config = small_config();
    const auto problem = TrainingProblem::prepare(model, duffing_data(), config);
    auto P = make_generator(model, config, 1);
    P.layers.back().weight.setZero();
    const auto raw = physics::encode_values(model, kTruth);
    for (std::size_t c = 0; c < raw.size(); ++c) P.layers.back().bias(static_cast<Eigen::Index>(c)) = raw[c];
    const auto D = make_discriminator(model, config, 2);
    Rng rng(5);
    const Matrix noise = sample_noise(30, config.latent_dim, rng);
    const auto e = evaluate_generator(P, D, problem, noise, first_indices(30, 6), sample_validation(problem, 30, rng), 1.0);
    EXPECT_EQ(e.mse_loss, 0.0);
}

TEST(TrainGenerator, EndToEndGradientMatchesFiniteDifferences)
{
    std::mt19937_64 g(77);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 5; ++trial) {
        const auto model = sci_duffing();
        auto config = small_config();
        config.mse_normalization = trial % 2 == 1;
        const auto problem = TrainingProblem::prepare(model, duffing_data(), config);
        auto P = make_generator(model, config, 100 + static_cast<std::uint64_t>(trial));
        // start near the truth so that both loss terms are well scaled
        const auto raw = physics::encode_values(model, kTruth);
        for (std::size_t c = 0; c < raw.size(); ++c) P.layers.back().bias(static_cast<Eigen::Index>(c)) = raw[c] + 0.05 * u(g);
        const auto D = make_discriminator(model, config, 200 + static_cast<std::uint64_t>(trial));
        Rng rng(300 + static_cast<std::uint64_t>(trial));
        const Matrix noise = sample_noise(12, config.latent_dim, rng);
        const auto idx = first_indices(12, 16);
        const auto picks = sample_validation(problem, 12, rng);
        const double gamma = 0.5 + trial;
        const auto e = evaluate_generator(P, D, problem, noise, idx, picks, gamma);
        const double worst = max_rel_fd_error(
            P, [&] { return evaluate_generator(P, D, problem, noise, idx, picks, gamma).total; }, e.grads, 1e-4);
        EXPECT_LT(worst, 1e-4) << "trial " << trial;
    }
}

TEST(TrainGenerator, ZeroGammaLeavesOnlyAdversarialGradient)
{
    const auto model = sci_duffing();
    const auto config = small_config();
    auto data = duffing_data();
    const auto problem = TrainingProblem::prepare(model, data, config);
    data.training.acceleration.channels *= 3.0;
    const auto shifted = TrainingProblem::prepare(model, data, config);

    const auto P = make_generator(model, config, 1);
    const auto D = make_discriminator(model, config, 2);
    Rng rng(5);
    const Matrix noise = sample_noise(16, config.latent_dim, rng);
    const auto picks = sample_validation(problem, 16, rng);
    const auto a = evaluate_generator(P, D, problem, noise, first_indices(16), picks, 0.0);
    const auto b = evaluate_generator(P, D, shifted, noise, first_indices(16), picks, 0.0);
    EXPECT_EQ(a.total, a.adv_loss);
    EXPECT_NE(a.mse_loss, b.mse_loss);
    for (std::size_t k = 0; k < a.grads.weight.size(); ++k) {
        EXPECT_EQ(a.grads.weight[k], b.grads.weight[k]);
        EXPECT_EQ(a.grads.bias[k], b.grads.bias[k]);
    }
}

TEST(TrainGenerator, DataProvenanceRoles)
{
    const auto model = sci_duffing();
    const auto config = small_config();
    const auto problem = TrainingProblem::prepare(model, duffing_data(), config);
    const auto P = make_generator(model, config, 1);
    const auto D = make_discriminator(model, config, 2);
    Rng rng(5);
    const Matrix noise = sample_noise(8, config.latent_dim, rng);
    const auto picks = sample_validation(problem, 8, rng);
    const auto e = evaluate_generator(P, D, problem, noise, first_indices(8), picks, 1.0);
    EXPECT_EQ(e.mse_role, DataRole::Training);
    EXPECT_EQ(e.adversarial_role, DataRole::Validation);

    auto mixed = problem;
    mixed.validation[0].role = DataRole::Training;
    EXPECT_THROW(evaluate_generator(P, D, mixed, noise, first_indices(8), picks, 1.0), Error);

    auto data = duffing_data();
    data.validation.clear();
    EXPECT_THROW(TrainingProblem::prepare(model, data, config), Error);
}

TEST(TrainSteps, UpdatesTouchOnlyTheirOwnNetwork)
{
    const auto model = sci_duffing();
    const auto config = small_config();
    const auto problem = TrainingProblem::prepare(model, duffing_data(), config);
    auto P = make_generator(model, config, 1);
    auto D = make_discriminator(model, config, 2);
    auto p_opt = nn::AdamState::for_network(P, config.learning_rate);
    auto d_opt = nn::AdamState::for_network(D, config.learning_rate);
    Rng rng(9);

    const auto P_before = P, D_before = D;
    const auto picks = sample_validation(problem, 10, rng);
    const Matrix fake = fake_validation_accels(
        problem, decode_batch(model, nn::mlp_forward(P, sample_noise(10, config.latent_dim, rng))), picks);
    discriminator_step(D, d_opt, problem, real_validation_accels(problem, sample_validation(problem, 10, rng)), fake);
    EXPECT_TRUE(P == P_before);
    EXPECT_FALSE(D == D_before);

    const auto D_mid = D;
    generator_step(P, p_opt, D, problem, first_indices(10), rng, config);
    EXPECT_TRUE(D == D_mid);
    EXPECT_FALSE(P == P_before);
}

TEST(TrainLoop, RecordCountAndDeterminism)
{
    const auto model = sci_duffing();
    const auto config = small_config();
    const auto data = duffing_data();
    auto run = [&] {
        return run_training(make_generator(model, config, 1), make_discriminator(model, config, 2), model, data, config);
    };
    const auto a = run();
    const auto b = run();
    ASSERT_FALSE(a.error.has_value());
    ASSERT_EQ(a.records.size(), 3u);
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        EXPECT_EQ(a.records[i].epoch, static_cast<int>(i) + 1);
        EXPECT_EQ(a.records[i].d_loss, b.records[i].d_loss);
        EXPECT_EQ(a.records[i].mse_loss, b.records[i].mse_loss);
        EXPECT_EQ(a.records[i].param_mean.values, b.records[i].param_mean.values);
        EXPECT_GE(a.records[i].d_loss, 0.0);
        EXPECT_GE(a.records[i].adv_loss, 0.0);
    }
    EXPECT_TRUE(a.generator == b.generator);
}

TEST(TrainLoop, RejectsOversizedBatchAndMismatchedNetworks)
{
    const auto model = sci_duffing();
    auto config = small_config();
    const auto data = duffing_data();
    config.batch_size = 500;
    EXPECT_THROW(run_training(make_generator(model, config, 1), make_discriminator(model, config, 2), model, data, config),
                 Error);
    config = small_config();
    auto other = config;
    other.latent_dim = 7;
    EXPECT_THROW(run_training(make_generator(model, other, 1), make_discriminator(model, config, 2), model, data, config),
                 Error);
    config.gamma = -1.0;
    EXPECT_THROW(config.validate(), Error);
}

TEST(TrainLoop, NonFiniteLossStopsWithPartialRecords)
{
    const auto model = sci_duffing();
    auto config = small_config();
    config.max_epochs = 2;
    auto P = make_generator(model, config, 1);
    P.layers.back().bias(1) = 299.0;  // exponent of b -> 10^299, accelerations overflow
    P.layers.back().bias(3) = 299.0;
    const auto r = run_training(P, make_discriminator(model, config, 2), model, duffing_data(), config);
    ASSERT_TRUE(r.error.has_value());
    EXPECT_TRUE(r.records.empty());
    EXPECT_NE(r.error->find("epoch 1"), std::string::npos);
}

namespace {

std::vector<EpochRecord> records_from(const std::vector<double>& values, double d_loss)
{
    std::vector<EpochRecord> out;
    for (std::size_t i = 0; i < values.size(); ++i)
        out.push_back({static_cast<int>(i) + 1, d_loss, std::log(2.0), 0.0, {{"a"}, {values[i]}}});
    return out;
}

}  // namespace

TEST(TrainConvergence, ConstantHistoryConvergesAtWindow)
{
    TrainConfig c;
    EXPECT_EQ(detect_convergence(records_from(std::vector<double>(300, 2.0), std::log(4.0)), c), c.convergence_window);
}

TEST(TrainConvergence, DivergingHistoryNeverConverges)
{
    std::vector<double> v;
    for (int i = 0; i < 400; ++i) v.push_back(std::exp(0.05 * i));
    TrainConfig c;
    EXPECT_FALSE(detect_convergence(records_from(v, std::log(4.0)), c).has_value());
}

TEST(TrainConvergence, ShortHistoryOrDiscriminatorOffTarget)
{
    TrainConfig c;
    EXPECT_FALSE(detect_convergence(records_from(std::vector<double>(99, 2.0), std::log(4.0)), c).has_value());
    EXPECT_FALSE(detect_convergence(records_from(std::vector<double>(300, 2.0), 0.5), c).has_value());
}

TEST(TrainConvergence, SettlesAfterTransient)
{
    std::vector<double> v;
    for (int i = 0; i < 500; ++i) v.push_back(i < 200 ? 10.0 * (200 - i) : 1.0);
    TrainConfig c;
    const auto e = detect_convergence(records_from(v, std::log(4.0)), c);
    ASSERT_TRUE(e.has_value());
    EXPECT_GT(*e, 200);
    EXPECT_LE(*e, 300);
}
