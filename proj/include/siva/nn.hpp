#pragma once

// Dense feed-forward networks with reverse-mode gradients and Adam.
//
// Batches are row-major in the sense that every row is one sample:
// an input batch has shape (batch x input_dim). Layer weights have shape
// (output_dim x input_dim), so a layer maps X to X * W^T + 1 * b^T.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "siva/error.hpp"

namespace siva::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { LeakyRelu, Sigmoid, Linear };

inline std::string to_string(Activation a)
{
    switch (a) {
    case Activation::LeakyRelu: return "leaky_relu";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Linear: return "linear";
    }
    return "unknown";
}

inline Activation activation_from_string(const std::string& s)
{
    if (s == "leaky_relu") return Activation::LeakyRelu;
    if (s == "sigmoid") return Activation::Sigmoid;
    if (s == "linear") return Activation::Linear;
    throw Error("unknown activation '" + s + "'");
}

struct LayerSpec {
    int input_dim = 1;
    int output_dim = 1;
    Activation activation = Activation::Linear;
    double slope = 0.2;  ///< negative-side slope, LeakyRelu only
};

struct DenseLayer {
    Matrix weight;  // output_dim x input_dim
    Vector bias;    // output_dim
    Activation activation = Activation::Linear;
    double slope = 0.2;

    int input_dim() const { return static_cast<int>(weight.cols()); }
    int output_dim() const { return static_cast<int>(weight.rows()); }
};

struct Mlp {
    std::vector<DenseLayer> layers;

    int input_dim() const { return layers.front().input_dim(); }
    int output_dim() const { return layers.back().output_dim(); }

    std::size_t parameter_count() const
    {
        std::size_t n = 0;
        for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
        return n;
    }

    bool operator==(const Mlp& other) const
    {
        if (layers.size() != other.layers.size()) return false;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const auto& a = layers[i];
            const auto& b = other.layers[i];
            if (a.activation != b.activation || a.slope != b.slope) return false;
            if (a.weight.rows() != b.weight.rows() || a.weight.cols() != b.weight.cols()) return false;
            if (a.weight != b.weight || a.bias != b.bias) return false;
        }
        return true;
    }
};

/// Per-layer values recorded by mlp_forward and consumed by mlp_backward.
struct ForwardCache {
    std::vector<Matrix> inputs;           // input to layer i
    std::vector<Matrix> pre_activations;  // affine output of layer i
};

/// Same layout as the network parameters; also used for Adam moments.
struct Gradients {
    std::vector<Matrix> weight;
    std::vector<Vector> bias;

    static Gradients zeros_like(const Mlp& net)
    {
        Gradients g;
        for (const auto& l : net.layers) {
            g.weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
            g.bias.push_back(Vector::Zero(l.bias.size()));
        }
        return g;
    }

    bool all_finite() const
    {
        for (const auto& w : weight)
            if (!w.allFinite()) return false;
        for (const auto& b : bias)
            if (!b.allFinite()) return false;
        return true;
    }
};

struct AdamState {
    Gradients first_moment;
    Gradients second_moment;
    std::int64_t step_count = 0;
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    static AdamState for_network(const Mlp& net, double learning_rate = 1e-4)
    {
        AdamState s;
        s.first_moment = Gradients::zeros_like(net);
        s.second_moment = Gradients::zeros_like(net);
        s.learning_rate = learning_rate;
        return s;
    }
};

// ---------------------------------------------------------------------------
// activations

inline double activate(Activation a, double slope, double x)
{
    switch (a) {
    case Activation::LeakyRelu: return x >= 0.0 ? x : slope * x;
    case Activation::Sigmoid: return 1.0 / (1.0 + std::exp(-x));
    case Activation::Linear: return x;
    }
    return x;
}

/// Derivative of the activation with respect to its pre-activation input.
inline double activation_derivative(Activation a, double slope, double x)
{
    switch (a) {
    case Activation::LeakyRelu: return x >= 0.0 ? 1.0 : slope;
    case Activation::Sigmoid: {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 - s);
    }
    case Activation::Linear: return 1.0;
    }
    return 1.0;
}

inline Matrix apply_activation(const DenseLayer& layer, const Matrix& pre)
{
    if (layer.activation == Activation::Linear) return pre;
    return pre.unaryExpr([&](double x) { return activate(layer.activation, layer.slope, x); });
}

// ---------------------------------------------------------------------------

/// He-style initialisation: weights ~ N(0, 2 / fan_in), biases zero.
inline Mlp mlp_init(const std::vector<LayerSpec>& specs, std::uint64_t seed)
{
    require(!specs.empty(), "mlp_init: empty layer list");
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const auto& s = specs[i];
        require(s.input_dim >= 1 && s.output_dim >= 1, "mlp_init: layer dimensions must be positive");
        if (s.activation == Activation::LeakyRelu)
            require(s.slope > 0.0 && s.slope < 1.0, "mlp_init: LeakyReLU slope must lie in (0, 1)");
        if (i > 0)
            require(specs[i - 1].output_dim == s.input_dim,
                    "mlp_init: layer " + std::to_string(i) + " input_dim " + std::to_string(s.input_dim) +
                        " does not match previous output_dim " + std::to_string(specs[i - 1].output_dim));
    }

    std::mt19937_64 engine(seed);
    Mlp net;
    for (const auto& s : specs) {
        std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / s.input_dim));
        DenseLayer layer;
        layer.weight.resize(s.output_dim, s.input_dim);
        for (int r = 0; r < s.output_dim; ++r)
            for (int c = 0; c < s.input_dim; ++c) layer.weight(r, c) = normal(engine);
        layer.bias = Vector::Zero(s.output_dim);
        layer.activation = s.activation;
        layer.slope = s.slope;
        net.layers.push_back(std::move(layer));
    }
    return net;
}

/// Hidden layers use LeakyReLU(slope); the last layer uses `output`.
inline std::vector<LayerSpec> chain_specs(int input_dim, const std::vector<int>& widths, Activation output,
                                          double slope = 0.2)
{
    std::vector<LayerSpec> specs;
    int in = input_dim;
    for (std::size_t i = 0; i < widths.size(); ++i) {
        const bool last = i + 1 == widths.size();
        specs.push_back({in, widths[i], last ? output : Activation::LeakyRelu, slope});
        in = widths[i];
    }
    return specs;
}

inline Matrix mlp_forward(const Mlp& net, const Matrix& batch, ForwardCache* cache = nullptr)
{
    require(!net.layers.empty(), "mlp_forward: empty network");
    require(batch.cols() == net.input_dim(),
            "mlp_forward: batch has " + std::to_string(batch.cols()) + " columns, network expects " +
                std::to_string(net.input_dim()));
    require(batch.allFinite(), "mlp_forward: non-finite input");

    if (cache) {
        cache->inputs.clear();
        cache->pre_activations.clear();
    }
    Matrix x = batch;
    for (const auto& layer : net.layers) {
        Matrix pre = x * layer.weight.transpose();
        pre.rowwise() += layer.bias.transpose();
        Matrix post = apply_activation(layer, pre);
        if (cache) {
            cache->inputs.push_back(std::move(x));
            cache->pre_activations.push_back(std::move(pre));
        }
        x = std::move(post);
    }
    return x;
}

struct BackwardResult {
    Gradients params;
    Matrix input_gradient;
};

/// Reverse-mode pass. `output_gradient` is dLoss/dOutput with the batch shape.
inline BackwardResult mlp_backward(const Mlp& net, const ForwardCache& cache, const Matrix& output_gradient)
{
    require(cache.inputs.size() == net.layers.size(), "mlp_backward: cache does not match network depth");
    require(output_gradient.rows() == cache.inputs.front().rows() && output_gradient.cols() == net.output_dim(),
            "mlp_backward: output gradient shape does not match cached forward pass");

    BackwardResult out;
    out.params.weight.resize(net.layers.size());
    out.params.bias.resize(net.layers.size());

    Matrix delta = output_gradient;
    for (std::size_t k = net.layers.size(); k-- > 0;) {
        const auto& layer = net.layers[k];
        const Matrix& pre = cache.pre_activations[k];
        if (layer.activation != Activation::Linear) {
            delta.array() *=
                pre.unaryExpr([&](double x) { return activation_derivative(layer.activation, layer.slope, x); })
                    .array();
        }
        out.params.weight[k] = delta.transpose() * cache.inputs[k];
        out.params.bias[k] = delta.colwise().sum().transpose();
        delta = delta * layer.weight;
    }
    out.input_gradient = std::move(delta);
    return out;
}

inline void adam_step(Mlp& net, const Gradients& grads, AdamState& state)
{
    require(grads.weight.size() == net.layers.size() && grads.bias.size() == net.layers.size(),
            "adam_step: gradient layer count does not match network");
    require(grads.all_finite(), "adam_step: non-finite gradient rejected");
    if (state.first_moment.weight.size() != net.layers.size()) {
        state.first_moment = Gradients::zeros_like(net);
        state.second_moment = Gradients::zeros_like(net);
    }

    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double correction1 = 1.0 - std::pow(state.beta1, t);
    const double correction2 = 1.0 - std::pow(state.beta2, t);
    const double b1 = state.beta1, b2 = state.beta2, lr = state.learning_rate, eps = state.epsilon;

    auto update = [&](auto& param, const auto& g, auto& m, auto& v) {
        require(param.rows() == g.rows() && param.cols() == g.cols(), "adam_step: gradient shape mismatch");
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
        param.array() -= lr * (m.array() / correction1) / ((v.array() / correction2).sqrt() + eps);
    };
    for (std::size_t k = 0; k < net.layers.size(); ++k) {
        update(net.layers[k].weight, grads.weight[k], state.first_moment.weight[k], state.second_moment.weight[k]);
        update(net.layers[k].bias, grads.bias[k], state.first_moment.bias[k], state.second_moment.bias[k]);
    }
}

// ---------------------------------------------------------------------------
// losses

inline constexpr double kBceClamp = 1e-7;

struct LossResult {
    double value = 0.0;
    Matrix gradient;  // dLoss/dPrediction, same shape as the predictions
};

/// Mean binary cross-entropy. Predictions are clamped into [eps, 1 - eps];
/// entries on the clamp boundary get zero gradient.
inline LossResult bce_loss(const Matrix& predictions, const Matrix& labels)
{
    require(predictions.size() > 0, "bce_loss: empty predictions");
    require(predictions.rows() == labels.rows() && predictions.cols() == labels.cols(),
            "bce_loss: predictions and labels differ in shape");
    const double n = static_cast<double>(predictions.size());
    LossResult r;
    r.gradient.resize(predictions.rows(), predictions.cols());
    double sum = 0.0;
    for (Eigen::Index j = 0; j < predictions.cols(); ++j) {
        for (Eigen::Index i = 0; i < predictions.rows(); ++i) {
            const double raw = predictions(i, j);
            const double y = labels(i, j);
            const bool clamped = raw <= kBceClamp || raw >= 1.0 - kBceClamp;
            const double p = std::clamp(raw, kBceClamp, 1.0 - kBceClamp);
            sum += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
            r.gradient(i, j) = clamped ? 0.0 : (-(y / p) + (1.0 - y) / (1.0 - p)) / n;
        }
    }
    r.value = sum / n;
    return r;
}

inline LossResult mse_loss(const Matrix& predicted, const Matrix& target)
{
    require(predicted.rows() == target.rows() && predicted.cols() == target.cols(),
            "mse_loss: shape mismatch");
    require(predicted.size() > 0, "mse_loss: empty input");
    const double n = static_cast<double>(predicted.size());
    const Matrix diff = predicted - target;
    return {diff.squaredNorm() / n, (2.0 / n) * diff};
}

}  // namespace siva::nn
