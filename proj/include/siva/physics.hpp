#pragma once

// Equations of motion solved for the accelerations,
//
//     qdd = M^-1 [ -B(q, qd) - K(q) + F(t) ],
//
// their analytic derivatives with respect to the identified coefficients, and
// the decoding of raw generator outputs into physical coefficient values.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "siva/error.hpp"

namespace siva::physics {

enum class ModelKind { DuffingSdof, CoupledLoNo, GenericTerms };

/// Direct: one raw output is the value. SciNotation: two raw outputs (a, e)
/// decode to a * 10^e.
enum class EncodingMode { Direct, SciNotation };

struct CoefficientSpec {
    std::string name;
    std::string unit;
    EncodingMode encoding = EncodingMode::Direct;
    /// Rough expected magnitude; 0 when unknown. Sets the starting decade of
    /// scientific-notation exponents.
    double scale = 0.0;
};

/// Coefficients above this magnitude default to the scientific-notation encoding.
inline constexpr double kSciNotationThreshold = 1e3;
/// Largest admissible decoded exponent; beyond it decoding is reported as non-finite.
inline constexpr double kMaxDecodedExponent = 300.0;
/// Floor applied to |s| inside ln|s| for power-law exponent derivatives.
inline constexpr double kLogFloor = 1e-12;

inline EncodingMode default_encoding(double expected_magnitude)
{
    return std::abs(expected_magnitude) > kSciNotationThreshold ? EncodingMode::SciNotation : EncodingMode::Direct;
}

inline CoefficientSpec coefficient(std::string name, std::string unit, double scale)
{
    return {std::move(name), std::move(unit), default_encoding(scale), scale};
}

// ---------------------------------------------------------------------------
// generic term descriptors

enum class FactorKind { Displacement, Velocity, RelativeDisplacement, RelativeVelocity };

/// One state factor raised to a non-negative integer power. Relative kinds
/// evaluate (state_i - state_j).
struct Factor {
    FactorKind kind = FactorKind::Displacement;
    int i = 0;
    int j = -1;
    int power = 1;

    double base(std::span<const double> q, std::span<const double> qd) const
    {
        switch (kind) {
        case FactorKind::Displacement: return q[i];
        case FactorKind::Velocity: return qd[i];
        case FactorKind::RelativeDisplacement: return q[i] - q[j];
        case FactorKind::RelativeVelocity: return qd[i] - qd[j];
        }
        return 0.0;
    }

    double eval(std::span<const double> q, std::span<const double> qd) const
    {
        const double x = base(q, qd);
        double r = 1.0;
        for (int p = 0; p < power; ++p) r *= x;
        return r;
    }
};

/// Product of factors; the empty product is 1.
struct Monomial {
    std::vector<Factor> factors;

    double eval(std::span<const double> q, std::span<const double> qd) const
    {
        double r = 1.0;
        for (const auto& f : factors) r *= f.eval(q, qd);
        return r;
    }
};

/// Text form used by configs and reports: q0, v1, (q0-q1)^3, q0^2*v0.
inline std::string factor_base_label(FactorKind kind, int i, int j)
{
    const char* sym = (kind == FactorKind::Displacement || kind == FactorKind::RelativeDisplacement) ? "q" : "v";
    std::string s = sym + std::to_string(i);
    if (j >= 0) s = "(" + s + "-" + sym + std::to_string(j) + ")";
    return s;
}

inline std::string monomial_label(const Monomial& m)
{
    if (m.factors.empty()) return "1";
    std::string s;
    for (const auto& f : m.factors) {
        if (!s.empty()) s += "*";
        const bool relative = f.kind == FactorKind::RelativeDisplacement || f.kind == FactorKind::RelativeVelocity;
        s += factor_base_label(f.kind, f.i, relative ? f.j : -1);
        if (f.power != 1) s += "^" + std::to_string(f.power);
    }
    return s;
}

/// |q_i - q_j|^exponent where the exponent is itself an identified coefficient.
/// j = -1 means |q_i|.
struct AbsPowerFactor {
    int i = 0;
    int j = -1;
    int exponent_coefficient = 0;
};

/// Contribution sign * coefficient * monomial * [|s|^exponent] to the force
/// acting on `equation`.
struct Term {
    int equation = 0;
    int coefficient = 0;
    double sign = 1.0;
    Monomial monomial;
    std::optional<AbsPowerFactor> abs_power;
};

struct ModelSpec {
    ModelKind kind = ModelKind::GenericTerms;
    std::vector<double> masses;
    /// Coefficients are identified per unit mass (masses treated as 1).
    bool mass_scaled = false;
    std::vector<CoefficientSpec> coefficients;
    std::vector<Term> terms;  // GenericTerms only

    int dof() const { return static_cast<int>(masses.size()); }
    int coefficient_count() const { return static_cast<int>(coefficients.size()); }
    double effective_mass(int d) const { return mass_scaled ? 1.0 : masses[static_cast<std::size_t>(d)]; }

    int index_of(const std::string& name) const
    {
        for (std::size_t c = 0; c < coefficients.size(); ++c)
            if (coefficients[c].name == name) return static_cast<int>(c);
        throw Error("model has no coefficient named '" + name + "'");
    }

    std::vector<std::string> coefficient_names() const
    {
        std::vector<std::string> names;
        for (const auto& c : coefficients) names.push_back(c.name);
        return names;
    }

    /// Number of raw network outputs the encoding layout consumes.
    int raw_width() const
    {
        int n = 0;
        for (const auto& c : coefficients) n += c.encoding == EncodingMode::SciNotation ? 2 : 1;
        return n;
    }

    void validate() const;
};

inline std::string to_string(ModelKind k)
{
    switch (k) {
    case ModelKind::DuffingSdof: return "duffing";
    case ModelKind::CoupledLoNo: return "coupled_lo_no";
    case ModelKind::GenericTerms: return "generic";
    }
    return "unknown";
}

inline ModelKind model_kind_from_string(const std::string& s)
{
    if (s == "duffing") return ModelKind::DuffingSdof;
    if (s == "coupled_lo_no") return ModelKind::CoupledLoNo;
    if (s == "generic") return ModelKind::GenericTerms;
    throw Error("unknown model kind '" + s + "'");
}

inline const std::vector<std::string>& builtin_coefficient_names(ModelKind kind)
{
    static const std::vector<std::string> duffing{"b", "b_nl", "k", "k_nl"};
    static const std::vector<std::string> lono{"b1", "b2", "k1", "k2", "alpha", "beta"};
    static const std::vector<std::string> none{};
    switch (kind) {
    case ModelKind::DuffingSdof: return duffing;
    case ModelKind::CoupledLoNo: return lono;
    default: return none;
    }
}

inline void ModelSpec::validate() const
{
    require(!masses.empty(), "model: at least one mass is required");
    for (double m : masses) require(std::isfinite(m) && m > 0.0, "model: masses must be finite and positive");
    require(!coefficients.empty(), "model: no coefficients declared");

    if (kind != ModelKind::GenericTerms) {
        const auto& expected = builtin_coefficient_names(kind);
        const int expected_dof = kind == ModelKind::DuffingSdof ? 1 : 2;
        require(dof() == expected_dof, "model: " + to_string(kind) + " needs " + std::to_string(expected_dof) +
                                           " mass value(s), got " + std::to_string(dof()));
        require(coefficients.size() == expected.size(), "model: " + to_string(kind) + " has " +
                                                           std::to_string(expected.size()) + " coefficients");
        for (std::size_t c = 0; c < expected.size(); ++c)
            require(coefficients[c].name == expected[c],
                    "model: coefficient " + std::to_string(c) + " of " + to_string(kind) + " must be '" +
                        expected[c] + "', got '" + coefficients[c].name + "'");
        return;
    }

    require(!terms.empty(), "model: generic model without terms");
    const int n = coefficient_count();
    auto valid_state = [&](int i) { return i >= 0 && i < dof(); };
    for (const auto& t : terms) {
        require(t.equation >= 0 && t.equation < dof(), "model: term references invalid equation index");
        require(t.coefficient >= 0 && t.coefficient < n, "model: term references invalid coefficient slot");
        for (const auto& f : t.monomial.factors) {
            require(valid_state(f.i), "model: factor references invalid state index");
            const bool relative =
                f.kind == FactorKind::RelativeDisplacement || f.kind == FactorKind::RelativeVelocity;
            if (relative) require(valid_state(f.j), "model: relative factor references invalid state index");
            require(f.power >= 0, "model: factor powers must be non-negative");
        }
        if (t.abs_power) {
            require(valid_state(t.abs_power->i), "model: |s|^p factor references invalid state index");
            require(t.abs_power->j == -1 || valid_state(t.abs_power->j),
                    "model: |s|^p factor references invalid state index");
            require(t.abs_power->exponent_coefficient >= 0 && t.abs_power->exponent_coefficient < n,
                    "model: |s|^p factor references invalid coefficient slot");
        }
    }
}

// ---------------------------------------------------------------------------
// built-in models

/// m x'' + b x' + b_nl x^2 x' + k x + k_nl x^3 = F
inline ModelSpec duffing_model(double mass)
{
    ModelSpec m;
    m.kind = ModelKind::DuffingSdof;
    m.masses = {mass};
    m.coefficients = {coefficient("b", "N*s/m", 0.5), coefficient("b_nl", "N*s/m^3", 4e3),
                      coefficient("k", "N/m", 3e2), coefficient("k_nl", "N/m^3", 3e8)};
    return m;
}

/// Linear oscillator x grounded through (b1, k1), coupled to the nonlinear
/// oscillator y through b2, k2 and alpha (x - y)|x - y|^beta.
inline ModelSpec coupled_lo_no_model(double mass_lo, double mass_no)
{
    ModelSpec m;
    m.kind = ModelKind::CoupledLoNo;
    m.masses = {mass_lo, mass_no};
    m.coefficients = {coefficient("b1", "N*s/m", 4.0),   coefficient("b2", "N*s/m", 0.8),
                      coefficient("k1", "N/m", 2e4),     coefficient("k2", "N/m", 2e3),
                      coefficient("alpha", "N/m^(beta+1)", 3e7), coefficient("beta", "-", 2.0)};
    return m;
}

/// Rewrites a built-in model as the equivalent GenericTerms model.
inline ModelSpec as_generic(const ModelSpec& model)
{
    using FK = FactorKind;
    if (model.kind == ModelKind::GenericTerms) return model;
    ModelSpec g = model;
    g.kind = ModelKind::GenericTerms;
    g.terms.clear();
    auto term = [](int eq, int coef, double sign, std::vector<Factor> factors) {
        return Term{eq, coef, sign, Monomial{std::move(factors)}, std::nullopt};
    };
    if (model.kind == ModelKind::DuffingSdof) {
        g.terms = {term(0, 0, -1.0, {{FK::Velocity, 0}}),
                   term(0, 1, -1.0, {{FK::Displacement, 0, -1, 2}, {FK::Velocity, 0}}),
                   term(0, 2, -1.0, {{FK::Displacement, 0}}),
                   term(0, 3, -1.0, {{FK::Displacement, 0, -1, 3}})};
    } else {
        const Factor rel_v{FK::RelativeVelocity, 0, 1, 1};
        const Factor rel_q{FK::RelativeDisplacement, 0, 1, 1};
        Term power_law0 = term(0, 4, -1.0, {rel_q});
        power_law0.abs_power = AbsPowerFactor{0, 1, 5};
        Term power_law1 = term(1, 4, 1.0, {rel_q});
        power_law1.abs_power = AbsPowerFactor{0, 1, 5};
        g.terms = {term(0, 0, -1.0, {{FK::Velocity, 0}}),
                   term(0, 1, -1.0, {rel_v}),
                   term(0, 2, -1.0, {{FK::Displacement, 0}}),
                   term(0, 3, -1.0, {rel_q}),
                   power_law0,
                   term(1, 1, 1.0, {rel_v}),
                   term(1, 3, 1.0, {rel_q}),
                   power_law1};
    }
    return g;
}

// ---------------------------------------------------------------------------
// parameter sets and decoding

struct ParameterSet {
    std::vector<std::string> names;
    std::vector<double> values;

    double at(const std::string& name) const
    {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return values[i];
        throw Error("parameter set has no coefficient named '" + name + "'");
    }

    std::size_t size() const { return values.size(); }
};

inline ParameterSet make_parameters(const ModelSpec& model, std::vector<double> values)
{
    require(static_cast<int>(values.size()) == model.coefficient_count(),
            "parameter count does not match model coefficient count");
    return {model.coefficient_names(), std::move(values)};
}

/// Decodes raw outputs into `values` (length = coefficient count).
inline void decode_into(const std::vector<CoefficientSpec>& coefficients, std::span<const double> raw,
                        std::span<double> values)
{
    std::size_t r = 0;
    for (std::size_t c = 0; c < coefficients.size(); ++c) {
        if (coefficients[c].encoding == EncodingMode::Direct) {
            values[c] = raw[r++];
        } else {
            const double a = raw[r];
            const double e = raw[r + 1];
            r += 2;
            if (!(std::abs(e) <= kMaxDecodedExponent))
                throw Error("decode: exponent " + std::to_string(e) + " of coefficient '" + coefficients[c].name +
                            "' is outside the admissible range");
            values[c] = a * std::pow(10.0, e);
        }
        if (!std::isfinite(values[c]))
            throw Error("decode: non-finite value for coefficient '" + coefficients[c].name + "'");
    }
}

inline ParameterSet decode_params(std::span<const double> raw, const ModelSpec& model)
{
    require(static_cast<int>(raw.size()) == model.raw_width(),
            "decode_params: expected " + std::to_string(model.raw_width()) + " raw outputs, got " +
                std::to_string(raw.size()));
    ParameterSet p{model.coefficient_names(), std::vector<double>(model.coefficients.size())};
    decode_into(model.coefficients, raw, p.values);
    return p;
}

/// Chain rule through the decoding: dL/draw given dL/dvalue.
inline void decode_backprop(const std::vector<CoefficientSpec>& coefficients, std::span<const double> raw,
                            std::span<const double> dvalue, std::span<double> draw)
{
    static const double ln10 = std::log(10.0);
    std::size_t r = 0;
    for (std::size_t c = 0; c < coefficients.size(); ++c) {
        if (coefficients[c].encoding == EncodingMode::Direct) {
            draw[r++] = dvalue[c];
        } else {
            const double scale = std::pow(10.0, raw[r + 1]);
            draw[r] = dvalue[c] * scale;
            draw[r + 1] = dvalue[c] * ln10 * raw[r] * scale;
            r += 2;
        }
    }
}

/// Inverse of the decoding for a given physical value. SciNotation splits the
/// value into a mantissa in [1, 10) and an integer exponent.
inline std::vector<double> encode_values(const ModelSpec& model, std::span<const double> values)
{
    std::vector<double> raw;
    for (std::size_t c = 0; c < model.coefficients.size(); ++c) {
        if (model.coefficients[c].encoding == EncodingMode::Direct) {
            raw.push_back(values[c]);
        } else if (values[c] == 0.0) {
            raw.push_back(0.0);
            raw.push_back(0.0);
        } else {
            const double e = std::floor(std::log10(std::abs(values[c])));
            raw.push_back(values[c] / std::pow(10.0, e));
            raw.push_back(e);
        }
    }
    return raw;
}

// ---------------------------------------------------------------------------
// accelerations

namespace detail {

/// s |s|^p, with the value at s = 0 taken as 0.
inline double signed_power(double s, double p)
{
    if (s == 0.0) return 0.0;
    return s * std::pow(std::abs(s), p);
}

inline double abs_power(double s, double p)
{
    const double a = std::abs(s);
    if (a == 0.0) return p == 0.0 ? 1.0 : 0.0;
    return std::pow(a, p);
}

inline double clamped_log_abs(double s) { return std::log(std::max(std::abs(s), kLogFloor)); }

inline void check_finite(std::span<const double> v, const char* what)
{
    for (double x : v)
        if (!std::isfinite(x)) throw Error(std::string("eval_accel: non-finite ") + what);
}

}  // namespace detail

/// Writes qdd into `accel`. `force` may be empty (treated as zero).
inline void eval_accel_into(const ModelSpec& model, std::span<const double> coef, std::span<const double> q,
                            std::span<const double> qd, std::span<const double> force, std::span<double> accel)
{
    const int n = model.dof();
    auto f = [&](int d) { return force.empty() ? 0.0 : force[static_cast<std::size_t>(d)]; };
    switch (model.kind) {
    case ModelKind::DuffingSdof: {
        const double x = q[0], v = qd[0];
        accel[0] = (f(0) - coef[0] * v - coef[1] * x * x * v - coef[2] * x - coef[3] * x * x * x) /
                   model.effective_mass(0);
        return;
    }
    case ModelKind::CoupledLoNo: {
        const double s = q[0] - q[1];
        const double sd = qd[0] - qd[1];
        const double coupling = coef[1] * sd + coef[3] * s + coef[4] * detail::signed_power(s, coef[5]);
        accel[0] = (f(0) - coef[0] * qd[0] - coef[2] * q[0] - coupling) / model.effective_mass(0);
        accel[1] = (f(1) + coupling) / model.effective_mass(1);
        return;
    }
    case ModelKind::GenericTerms: {
        for (int d = 0; d < n; ++d) accel[static_cast<std::size_t>(d)] = f(d);
        for (const auto& t : model.terms) {
            double v = t.sign * coef[static_cast<std::size_t>(t.coefficient)] * t.monomial.eval(q, qd);
            if (t.abs_power) {
                const double s = q[t.abs_power->i] - (t.abs_power->j >= 0 ? q[t.abs_power->j] : 0.0);
                v *= detail::abs_power(s, coef[static_cast<std::size_t>(t.abs_power->exponent_coefficient)]);
            }
            accel[static_cast<std::size_t>(t.equation)] += v;
        }
        for (int d = 0; d < n; ++d) accel[static_cast<std::size_t>(d)] /= model.effective_mass(d);
        return;
    }
    }
}

inline Eigen::VectorXd eval_accel(const ModelSpec& model, const ParameterSet& params, std::span<const double> q,
                                  std::span<const double> qd, std::span<const double> force = {})
{
    const auto n = static_cast<std::size_t>(model.dof());
    require(q.size() == n && qd.size() == n, "eval_accel: state dimension does not match model");
    require(force.empty() || force.size() == n, "eval_accel: force dimension does not match model");
    require(params.size() == model.coefficients.size(), "eval_accel: parameter count does not match model");
    for (double m : model.masses) require(m > 0.0, "eval_accel: masses must be positive");
    detail::check_finite(q, "displacement");
    detail::check_finite(qd, "velocity");
    detail::check_finite(params.values, "coefficient");
    Eigen::VectorXd a(static_cast<Eigen::Index>(n));
    eval_accel_into(model, params.values, q, qd, force, {a.data(), n});
    return a;
}

/// Writes d(qdd)/d(coefficients) row-major (dof x coefficient_count) into `jac`.
inline void accel_param_jacobian_into(const ModelSpec& model, std::span<const double> coef,
                                      std::span<const double> q, std::span<const double> qd, std::span<double> jac)
{
    const std::size_t nc = model.coefficients.size();
    std::fill(jac.begin(), jac.end(), 0.0);
    switch (model.kind) {
    case ModelKind::DuffingSdof: {
        const double x = q[0], v = qd[0], m = model.effective_mass(0);
        jac[0] = -v / m;
        jac[1] = -x * x * v / m;
        jac[2] = -x / m;
        jac[3] = -x * x * x / m;
        return;
    }
    case ModelKind::CoupledLoNo: {
        const double s = q[0] - q[1];
        const double sd = qd[0] - qd[1];
        const double power_term = detail::signed_power(s, coef[5]);
        const double dbeta = coef[4] * power_term * detail::clamped_log_abs(s);
        const double m0 = model.effective_mass(0), m1 = model.effective_mass(1);
        const double row0[6] = {-qd[0], -sd, -q[0], -s, -power_term, -dbeta};
        const double row1[6] = {0.0, sd, 0.0, s, power_term, dbeta};
        for (std::size_t c = 0; c < 6; ++c) {
            jac[c] = row0[c] / m0;
            jac[nc + c] = row1[c] / m1;
        }
        return;
    }
    case ModelKind::GenericTerms: {
        for (const auto& t : model.terms) {
            const auto row = static_cast<std::size_t>(t.equation) * nc;
            const double m = model.effective_mass(t.equation);
            const double mono = t.monomial.eval(q, qd);
            double factor = 1.0;
            if (t.abs_power) {
                const double s = q[t.abs_power->i] - (t.abs_power->j >= 0 ? q[t.abs_power->j] : 0.0);
                const auto e = static_cast<std::size_t>(t.abs_power->exponent_coefficient);
                factor = detail::abs_power(s, coef[e]);
                jac[row + e] += t.sign * coef[static_cast<std::size_t>(t.coefficient)] * mono * factor *
                                detail::clamped_log_abs(s) / m;
            }
            jac[row + static_cast<std::size_t>(t.coefficient)] += t.sign * mono * factor / m;
        }
        return;
    }
    }
}

inline Eigen::MatrixXd accel_param_jacobian(const ModelSpec& model, const ParameterSet& params,
                                            std::span<const double> q, std::span<const double> qd)
{
    const auto n = static_cast<std::size_t>(model.dof());
    require(q.size() == n && qd.size() == n, "accel_param_jacobian: state dimension does not match model");
    require(params.size() == model.coefficients.size(),
            "accel_param_jacobian: parameter count does not match model");
    detail::check_finite(q, "displacement");
    detail::check_finite(qd, "velocity");
    std::vector<double> buf(n * params.size());
    accel_param_jacobian_into(model, params.values, q, qd, buf);
    Eigen::MatrixXd jac(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(params.size()));
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < params.size(); ++c)
            jac(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = buf[r * params.size() + c];
    return jac;
}

}  // namespace siva::physics
