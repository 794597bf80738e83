#pragma once

// Adversarial identification loop.
//
// A parameter generator P maps standard-normal noise to raw outputs that
// decode into model coefficients. Every noise row is paired with one sampled
// time index: its coefficients are pushed through the equation of motion at
// that sample's measured state to produce a fake acceleration. Training-set
// fakes are compared with the measured accelerations by MSE; validation-set
// fakes are scored by a discriminator D that is trained to separate them from
// measured validation accelerations.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "siva/error.hpp"
#include "siva/nn.hpp"
#include "siva/physics.hpp"
#include "siva/signal.hpp"

namespace siva::train {

using nn::Matrix;
using nn::Mlp;
using physics::ModelSpec;
using physics::ParameterSet;
using signal::TimeSeries;

inline const double kLn4 = std::log(4.0);

enum class DataRole { Training, Validation };

inline std::string to_string(DataRole r) { return r == DataRole::Training ? "training" : "validation"; }

/// Displacement, velocity and acceleration of one experiment (plus an
/// optional applied force), all on the same time grid.
struct StateTriplet {
    std::string name;
    DataRole role = DataRole::Training;
    TimeSeries displacement;
    TimeSeries velocity;
    TimeSeries acceleration;
    std::optional<TimeSeries> force;

    Eigen::Index length() const { return displacement.length(); }

    void validate(int dof) const
    {
        for (const auto* s : {&displacement, &velocity, &acceleration}) {
            s->validate(("dataset '" + name + "'").c_str());
            require(s->channel_count() == dof, "dataset '" + name + "': channel count " +
                                                   std::to_string(s->channel_count()) + " does not match model dof " +
                                                   std::to_string(dof));
            require(s->length() == displacement.length(), "dataset '" + name + "': state series differ in length");
            require(s->channels.allFinite(), "dataset '" + name + "': non-finite samples");
        }
        if (force) {
            require(force->channel_count() == dof, "dataset '" + name + "': force channel count mismatch");
            require(force->length() == displacement.length(), "dataset '" + name + "': force length mismatch");
        }
    }
};

struct SivaDatasets {
    StateTriplet training;
    std::vector<StateTriplet> validation;

    void validate(int dof) const
    {
        require(training.role == DataRole::Training, "training dataset must carry the training role");
        training.validate(dof);
        require(!validation.empty(), "at least one validation dataset is required");
        for (const auto& v : validation) {
            require(v.role == DataRole::Validation, "validation dataset '" + v.name + "' carries the wrong role");
            v.validate(dof);
        }
    }
};

struct TrainConfig {
    int max_epochs = 1000;
    int batch_size = 300;
    int latent_dim = 16;
    double learning_rate = 1e-4;
    double gamma = 1.0;
    std::uint64_t seed = 42;
    /// Divide the MSE term by the mean square of the measured training accelerations.
    bool mse_normalization = false;
    /// Feed D accelerations divided by the per-DOF RMS of measured validation accelerations.
    bool discriminator_input_scaling = true;
    int convergence_window = 100;
    double convergence_param_tol = 0.01;
    double convergence_dloss_tol = 0.15;
    std::vector<int> generator_widths{64, 32, 16};
    std::vector<int> discriminator_widths{64, 32};
    double leaky_slope = 0.2;
    /// Multiplier on the generator's He-initialised output weights.
    double output_weight_scale = 0.1;
    /// Starting bias of each sci-notation mantissa output.
    double initial_mantissa = 0.0;

    void validate() const
    {
        require(max_epochs >= 1, "train: max_epochs must be at least 1");
        require(batch_size >= 1, "train: batch_size must be at least 1");
        require(latent_dim >= 1, "train: latent_dim must be at least 1");
        require(learning_rate > 0.0, "train: learning rate must be positive");
        require(gamma >= 0.0, "train: gamma must be non-negative");
        require(convergence_window >= 2, "train: convergence window must be at least 2");
        require(output_weight_scale > 0.0, "train: output_weight_scale must be positive");
    }
};

struct EpochRecord {
    int epoch = 0;  // 1-based
    double d_loss = 0.0;
    double adv_loss = 0.0;
    double mse_loss = 0.0;
    ParameterSet param_mean;
};

// ---------------------------------------------------------------------------
// randomness

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double normal() { return normal_(engine_); }

    std::size_t uniform_index(std::size_t n)
    {
        return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

/// count x latent_dim matrix of i.i.d. N(0, 1) draws, filled row by row.
inline Matrix sample_noise(int count, int latent_dim, Rng& rng)
{
    require(count >= 1 && latent_dim >= 1, "sample_noise: count and latent_dim must be at least 1");
    Matrix z(count, latent_dim);
    for (int r = 0; r < count; ++r)
        for (int c = 0; c < latent_dim; ++c) z(r, c) = rng.normal();
    return z;
}

// ---------------------------------------------------------------------------
// prepared problem

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct PreparedSet {
    std::string name;
    DataRole role = DataRole::Training;
    RowMatrix q, qd, qdd, force;  // force empty when absent

    std::span<const double> row(const RowMatrix& m, Eigen::Index i) const
    {
        return {m.data() + i * m.cols(), static_cast<std::size_t>(m.cols())};
    }
    std::span<const double> force_row(Eigen::Index i) const
    {
        if (force.size() == 0) return {};
        return row(force, i);
    }
};

struct ValidationPick {
    int set = 0;
    Eigen::Index index = 0;
};

/// Datasets converted to contiguous rows plus the fixed loss scalings.
struct TrainingProblem {
    ModelSpec model;
    PreparedSet training;
    std::vector<PreparedSet> validation;
    Eigen::VectorXd discriminator_scale;  // per-DOF multiplier on D inputs
    double mse_scale = 1.0;               // multiplier on the MSE term

    int dof() const { return model.dof(); }

    static PreparedSet prepare_set(const StateTriplet& t)
    {
        PreparedSet s;
        s.name = t.name;
        s.role = t.role;
        s.q = t.displacement.channels;
        s.qd = t.velocity.channels;
        s.qdd = t.acceleration.channels;
        if (t.force) s.force = t.force->channels;
        return s;
    }

    static TrainingProblem prepare(const ModelSpec& model, const SivaDatasets& data, const TrainConfig& config)
    {
        model.validate();
        data.validate(model.dof());
        TrainingProblem p;
        p.model = model;
        p.training = prepare_set(data.training);
        for (const auto& v : data.validation) p.validation.push_back(prepare_set(v));

        p.discriminator_scale = Eigen::VectorXd::Ones(model.dof());
        if (config.discriminator_input_scaling) {
            Eigen::VectorXd sum_sq = Eigen::VectorXd::Zero(model.dof());
            double count = 0.0;
            for (const auto& v : p.validation) {
                sum_sq += v.qdd.colwise().squaredNorm().transpose();
                count += static_cast<double>(v.qdd.rows());
            }
            for (int d = 0; d < model.dof(); ++d) {
                const double rms = std::sqrt(sum_sq(d) / count);
                p.discriminator_scale(d) = rms > 0.0 ? 1.0 / rms : 1.0;
            }
        }
        if (config.mse_normalization) {
            const double ms = p.training.qdd.squaredNorm() / static_cast<double>(p.training.qdd.size());
            p.mse_scale = ms > 0.0 ? 1.0 / ms : 1.0;
        }
        return p;
    }
};

inline std::vector<ValidationPick> sample_validation(const TrainingProblem& problem, int count, Rng& rng)
{
    std::vector<ValidationPick> picks(static_cast<std::size_t>(count));
    for (auto& p : picks) {
        p.set = static_cast<int>(rng.uniform_index(problem.validation.size()));
        p.index = static_cast<Eigen::Index>(
            rng.uniform_index(static_cast<std::size_t>(problem.validation[static_cast<std::size_t>(p.set)].q.rows())));
    }
    return picks;
}

/// Decoded coefficients, one row per raw-output row.
inline Matrix decode_batch(const ModelSpec& model, const Matrix& raw)
{
    const int n = model.coefficient_count();
    Matrix values(raw.rows(), n);
    std::vector<double> r(static_cast<std::size_t>(raw.cols())), v(static_cast<std::size_t>(n));
    for (Eigen::Index b = 0; b < raw.rows(); ++b) {
        for (Eigen::Index c = 0; c < raw.cols(); ++c) r[static_cast<std::size_t>(c)] = raw(b, c);
        physics::decode_into(model.coefficients, r, v);
        for (int c = 0; c < n; ++c) values(b, c) = v[static_cast<std::size_t>(c)];
    }
    return values;
}

/// Model accelerations of the validation samples `picks` for each coefficient row.
inline Matrix fake_validation_accels(const TrainingProblem& problem, const Matrix& coefficients,
                                     const std::vector<ValidationPick>& picks)
{
    const int dof = problem.dof();
    Matrix out(coefficients.rows(), dof);
    std::vector<double> coef(static_cast<std::size_t>(coefficients.cols())), acc(static_cast<std::size_t>(dof));
    for (Eigen::Index b = 0; b < coefficients.rows(); ++b) {
        const auto& pick = picks[static_cast<std::size_t>(b)];
        const auto& set = problem.validation[static_cast<std::size_t>(pick.set)];
        for (Eigen::Index c = 0; c < coefficients.cols(); ++c) coef[static_cast<std::size_t>(c)] = coefficients(b, c);
        physics::eval_accel_into(problem.model, coef, set.row(set.q, pick.index), set.row(set.qd, pick.index),
                                 set.force_row(pick.index), acc);
        for (int d = 0; d < dof; ++d) out(b, d) = acc[static_cast<std::size_t>(d)];
    }
    return out;
}

inline Matrix real_validation_accels(const TrainingProblem& problem, const std::vector<ValidationPick>& picks)
{
    Matrix out(static_cast<Eigen::Index>(picks.size()), problem.dof());
    for (std::size_t b = 0; b < picks.size(); ++b) {
        const auto& set = problem.validation[static_cast<std::size_t>(picks[b].set)];
        out.row(static_cast<Eigen::Index>(b)) = set.qdd.row(picks[b].index);
    }
    return out;
}

inline Matrix scale_for_discriminator(const TrainingProblem& problem, const Matrix& accels)
{
    return accels * problem.discriminator_scale.asDiagonal();
}

// ---------------------------------------------------------------------------
// discriminator

struct DiscriminatorEvaluation {
    double loss = 0.0;
    nn::Gradients grads;
};

/// Binary cross-entropy of D on real (label 1) and fake (label 0) inputs,
/// summed over the two classes; both inputs already scaled.
inline DiscriminatorEvaluation evaluate_discriminator(const Mlp& D, const Matrix& real_inputs,
                                                      const Matrix& fake_inputs)
{
    require(real_inputs.cols() == D.input_dim() && fake_inputs.cols() == D.input_dim(),
            "discriminator: input dimension mismatch");
    DiscriminatorEvaluation e;
    nn::ForwardCache cache;

    const Matrix p_real = nn::mlp_forward(D, real_inputs, &cache);
    const auto l_real = nn::bce_loss(p_real, Matrix::Ones(p_real.rows(), 1));
    e.grads = nn::mlp_backward(D, cache, l_real.gradient).params;

    const Matrix p_fake = nn::mlp_forward(D, fake_inputs, &cache);
    const auto l_fake = nn::bce_loss(p_fake, Matrix::Zero(p_fake.rows(), 1));
    const auto g_fake = nn::mlp_backward(D, cache, l_fake.gradient).params;
    for (std::size_t k = 0; k < e.grads.weight.size(); ++k) {
        e.grads.weight[k] += g_fake.weight[k];
        e.grads.bias[k] += g_fake.bias[k];
    }
    e.loss = l_real.value + l_fake.value;
    return e;
}

/// One Adam update of D. Accelerations are unscaled physical values.
inline double discriminator_step(Mlp& D, nn::AdamState& state, const TrainingProblem& problem,
                                 const Matrix& real_val_accels, const Matrix& fake_val_accels)
{
    require(real_val_accels.cols() == fake_val_accels.cols(), "discriminator_step: batch dimensions differ");
    auto e = evaluate_discriminator(D, scale_for_discriminator(problem, real_val_accels),
                                    scale_for_discriminator(problem, fake_val_accels));
    if (!std::isfinite(e.loss)) throw Error("discriminator_step: non-finite loss");
    nn::adam_step(D, e.grads, state);
    return e.loss;
}

// ---------------------------------------------------------------------------
// generator

struct GeneratorEvaluation {
    double adv_loss = 0.0;
    double mse_loss = 0.0;  // after optional normalisation, before gamma
    double total = 0.0;     // adv + gamma * mse
    nn::Gradients grads;    // d(total) / d(P parameters)
    Matrix coefficients;    // decoded, batch x coefficient_count
    DataRole mse_role = DataRole::Training;
    DataRole adversarial_role = DataRole::Validation;
};

/// Loss of P and its exact gradient for a fixed noise batch, training
/// indices and validation picks. D is only read.
inline GeneratorEvaluation evaluate_generator(const Mlp& P, const Mlp& D, const TrainingProblem& problem,
                                              const Matrix& noise, const std::vector<Eigen::Index>& train_indices,
                                              const std::vector<ValidationPick>& picks, double gamma)
{
    const auto rows = noise.rows();
    require(static_cast<Eigen::Index>(train_indices.size()) == rows &&
                static_cast<Eigen::Index>(picks.size()) == rows,
            "generator: noise rows, training indices and validation picks must agree");
    require(problem.training.role == DataRole::Training, "generator: MSE term requires training data");
    for (const auto& v : problem.validation)
        require(v.role == DataRole::Validation, "generator: adversarial term requires validation data");

    const auto& model = problem.model;
    const int dof = model.dof();
    const int n = model.coefficient_count();
    const auto un = static_cast<std::size_t>(n);
    const auto udof = static_cast<std::size_t>(dof);

    GeneratorEvaluation e;
    nn::ForwardCache p_cache;
    const Matrix raw = nn::mlp_forward(P, noise, &p_cache);
    e.coefficients = decode_batch(model, raw);

    // MSE on training samples
    const auto& tr = problem.training;
    Matrix fake_tr(rows, dof), real_tr(rows, dof);
    std::vector<double> coef(un), acc(udof);
    for (Eigen::Index b = 0; b < rows; ++b) {
        for (int c = 0; c < n; ++c) coef[static_cast<std::size_t>(c)] = e.coefficients(b, c);
        const auto i = train_indices[static_cast<std::size_t>(b)];
        physics::eval_accel_into(model, coef, tr.row(tr.q, i), tr.row(tr.qd, i), tr.force_row(i), acc);
        for (int d = 0; d < dof; ++d) fake_tr(b, d) = acc[static_cast<std::size_t>(d)];
        real_tr.row(b) = tr.qdd.row(i);
    }
    const auto mse = nn::mse_loss(fake_tr, real_tr);
    e.mse_loss = problem.mse_scale * mse.value;
    const Matrix d_fake_tr = (gamma * problem.mse_scale) * mse.gradient;

    // adversarial term on validation samples, target label 1
    const Matrix fake_val = fake_validation_accels(problem, e.coefficients, picks);
    nn::ForwardCache d_cache;
    const Matrix p = nn::mlp_forward(D, scale_for_discriminator(problem, fake_val), &d_cache);
    const auto adv = nn::bce_loss(p, Matrix::Ones(p.rows(), 1));
    e.adv_loss = adv.value;
    const Matrix d_fake_val =
        nn::mlp_backward(D, d_cache, adv.gradient).input_gradient * problem.discriminator_scale.asDiagonal();

    e.total = e.adv_loss + gamma * e.mse_loss;
    if (!std::isfinite(e.total)) {
        std::ostringstream msg;
        msg << "generator: non-finite loss; mean decoded coefficients:";
        const Eigen::RowVectorXd mean = e.coefficients.colwise().mean();
        for (int c = 0; c < n; ++c) msg << ' ' << model.coefficients[static_cast<std::size_t>(c)].name << '=' << mean(c);
        throw Error(msg.str());
    }

    // back through the equation of motion and the decoding
    Matrix d_raw(rows, raw.cols());
    std::vector<double> jac(udof * un), dvalue(un), draw(static_cast<std::size_t>(raw.cols())),
        raw_row(static_cast<std::size_t>(raw.cols()));
    for (Eigen::Index b = 0; b < rows; ++b) {
        for (int c = 0; c < n; ++c) coef[static_cast<std::size_t>(c)] = e.coefficients(b, c);
        std::fill(dvalue.begin(), dvalue.end(), 0.0);

        const auto i = train_indices[static_cast<std::size_t>(b)];
        physics::accel_param_jacobian_into(model, coef, tr.row(tr.q, i), tr.row(tr.qd, i), jac);
        for (int d = 0; d < dof; ++d)
            for (int c = 0; c < n; ++c)
                dvalue[static_cast<std::size_t>(c)] += jac[static_cast<std::size_t>(d) * un + static_cast<std::size_t>(c)] * d_fake_tr(b, d);

        const auto& pick = picks[static_cast<std::size_t>(b)];
        const auto& vs = problem.validation[static_cast<std::size_t>(pick.set)];
        physics::accel_param_jacobian_into(model, coef, vs.row(vs.q, pick.index), vs.row(vs.qd, pick.index), jac);
        for (int d = 0; d < dof; ++d)
            for (int c = 0; c < n; ++c)
                dvalue[static_cast<std::size_t>(c)] += jac[static_cast<std::size_t>(d) * un + static_cast<std::size_t>(c)] * d_fake_val(b, d);

        for (Eigen::Index c = 0; c < raw.cols(); ++c) raw_row[static_cast<std::size_t>(c)] = raw(b, c);
        physics::decode_backprop(model.coefficients, raw_row, dvalue, draw);
        for (Eigen::Index c = 0; c < raw.cols(); ++c) d_raw(b, c) = draw[static_cast<std::size_t>(c)];
    }
    e.grads = nn::mlp_backward(P, p_cache, d_raw).params;
    return e;
}

/// Draws noise and validation picks, evaluates P against the frozen D and
/// applies one Adam update to P.
inline GeneratorEvaluation generator_step(Mlp& P, nn::AdamState& state, const Mlp& D, const TrainingProblem& problem,
                                          const std::vector<Eigen::Index>& train_indices, Rng& rng,
                                          const TrainConfig& config)
{
    const int rows = static_cast<int>(train_indices.size());
    const Matrix noise = sample_noise(rows, config.latent_dim, rng);
    const auto picks = sample_validation(problem, rows, rng);
    auto e = evaluate_generator(P, D, problem, noise, train_indices, picks, config.gamma);
    nn::adam_step(P, e.grads, state);
    return e;
}

// ---------------------------------------------------------------------------
// networks and loop

inline Mlp make_generator(const ModelSpec& model, const TrainConfig& config, std::uint64_t seed)
{
    auto widths = config.generator_widths;
    widths.push_back(model.raw_width());
    auto net = nn::mlp_init(nn::chain_specs(config.latent_dim, widths, nn::Activation::Linear, config.leaky_slope), seed);
    auto& head = net.layers.back();
    head.weight *= config.output_weight_scale;
    // exponent outputs start at the decade of the declared scale
    Eigen::Index slot = 0;
    for (const auto& c : model.coefficients) {
        if (c.encoding == physics::EncodingMode::SciNotation) {
            if (c.scale != 0.0) {
                head.bias(slot) = c.scale > 0.0 ? config.initial_mantissa : -config.initial_mantissa;
                head.bias(slot + 1) = std::floor(std::log10(std::abs(c.scale)));
            }
            slot += 2;
        } else {
            slot += 1;
        }
    }
    return net;
}

inline Mlp make_discriminator(const ModelSpec& model, const TrainConfig& config, std::uint64_t seed)
{
    auto widths = config.discriminator_widths;
    widths.push_back(1);
    return nn::mlp_init(nn::chain_specs(model.dof(), widths, nn::Activation::Sigmoid, config.leaky_slope), seed);
}

struct TrainingResult {
    Mlp generator;
    Mlp discriminator;
    std::vector<EpochRecord> records;
    std::optional<std::string> error;  // set when training stopped early
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Per epoch: shuffle the training indices, then for each batch one
/// discriminator update followed by one generator update.
inline TrainingResult run_training(Mlp P, Mlp D, const ModelSpec& model, const SivaDatasets& data,
                                   const TrainConfig& config, const EpochCallback& on_epoch = {})
{
    config.validate();
    const auto problem = TrainingProblem::prepare(model, data, config);
    require(P.input_dim() == config.latent_dim && P.output_dim() == model.raw_width(),
            "run_training: generator dimensions do not match latent size and encoding layout");
    require(D.input_dim() == model.dof() && D.output_dim() == 1,
            "run_training: discriminator dimensions do not match model dof");
    const auto n_train = problem.training.q.rows();
    require(config.batch_size <= n_train, "run_training: batch size exceeds training set length");
    for (const auto& v : problem.validation)
        require(config.batch_size <= v.q.rows(), "run_training: batch size exceeds validation set length");

    TrainingResult result;
    Rng rng(config.seed);
    auto p_opt = nn::AdamState::for_network(P, config.learning_rate);
    auto d_opt = nn::AdamState::for_network(D, config.learning_rate);

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n_train));
    for (Eigen::Index i = 0; i < n_train; ++i) order[static_cast<std::size_t>(i)] = i;
    const auto batch = static_cast<Eigen::Index>(config.batch_size);
    const Eigen::Index batches = (n_train + batch - 1) / batch;

    try {
        for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
            std::shuffle(order.begin(), order.end(), rng.engine());
            double d_sum = 0.0, adv_sum = 0.0, mse_sum = 0.0;
            Eigen::RowVectorXd last_mean;
            for (Eigen::Index k = 0; k < batches; ++k) {
                const auto begin = k * batch;
                const auto end = std::min(n_train, begin + batch);
                const std::vector<Eigen::Index> idx(order.begin() + begin, order.begin() + end);
                const int rows = static_cast<int>(idx.size());

                const Matrix d_noise = sample_noise(rows, config.latent_dim, rng);
                const auto fake_picks = sample_validation(problem, rows, rng);
                const auto real_picks = sample_validation(problem, rows, rng);
                const Matrix fake = fake_validation_accels(
                    problem, decode_batch(problem.model, nn::mlp_forward(P, d_noise)), fake_picks);
                d_sum += discriminator_step(D, d_opt, problem, real_validation_accels(problem, real_picks), fake);

                const auto g = generator_step(P, p_opt, D, problem, idx, rng, config);
                adv_sum += g.adv_loss;
                mse_sum += g.mse_loss;
                if (k + 1 == batches) last_mean = g.coefficients.colwise().mean();
            }
            EpochRecord rec;
            rec.epoch = epoch;
            rec.d_loss = d_sum / static_cast<double>(batches);
            rec.adv_loss = adv_sum / static_cast<double>(batches);
            rec.mse_loss = mse_sum / static_cast<double>(batches);
            rec.param_mean = physics::make_parameters(problem.model, {last_mean.data(), last_mean.data() + last_mean.size()});
            result.records.push_back(rec);
            if (on_epoch) on_epoch(rec);
        }
    } catch (const Error& err) {
        result.error = "epoch " + std::to_string(result.records.size() + 1) + ": " + err.what();
    }
    result.generator = std::move(P);
    result.discriminator = std::move(D);
    return result;
}

/// Earliest epoch e whose trailing window of W records is settled: for every
/// coefficient the means of the window's two halves differ by less than the
/// relative tolerance, and the window mean of |d_loss - ln 4| is below its
/// tolerance.
inline std::optional<int> detect_convergence(const std::vector<EpochRecord>& records, const TrainConfig& config)
{
    const auto w = static_cast<std::size_t>(config.convergence_window);
    if (records.size() < w || w < 2) return std::nullopt;
    const std::size_t n_coef = records.front().param_mean.size();
    const std::size_t half = w / 2;

    for (std::size_t end = w; end <= records.size(); ++end) {
        const std::size_t begin = end - w;
        double dev = 0.0;
        for (std::size_t i = begin; i < end; ++i) dev += std::abs(records[i].d_loss - kLn4);
        if (dev / static_cast<double>(w) >= config.convergence_dloss_tol) continue;

        bool settled = true;
        for (std::size_t c = 0; c < n_coef && settled; ++c) {
            double first = 0.0, second = 0.0;
            for (std::size_t i = begin; i < begin + half; ++i) first += records[i].param_mean.values[c];
            for (std::size_t i = begin + half; i < end; ++i) second += records[i].param_mean.values[c];
            first /= static_cast<double>(half);
            second /= static_cast<double>(end - begin - half);
            const double ref = std::max(std::abs(second), std::abs(first));
            settled = ref == 0.0 || std::abs(second - first) < config.convergence_param_tol * ref;
        }
        if (settled) return records[end - 1].epoch;
    }
    return std::nullopt;
}

}  // namespace siva::train
