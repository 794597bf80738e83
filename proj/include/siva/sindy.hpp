#pragma once

// Sparse regression baseline: sequentially thresholded least squares over a
// declared library of state monomials. Targets are mass times acceleration,
// so the recovered coefficients are force coefficients that read directly as
// m q'' = sum_j c_j theta_j(q, q') + F.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "siva/error.hpp"
#include "siva/physics.hpp"
#include "siva/signal.hpp"

namespace siva::sindy {

using physics::Factor;
using physics::FactorKind;
using physics::Monomial;
using physics::monomial_label;

struct FunctionLibrary {
    std::vector<Monomial> terms;
    std::vector<std::string> labels;

    void add(Monomial m)
    {
        labels.push_back(monomial_label(m));
        terms.push_back(std::move(m));
    }

    std::size_t size() const { return terms.size(); }

    void validate(int dof) const
    {
        require(!terms.empty(), "library: at least one candidate term is required");
        require(labels.size() == terms.size(), "library: label count mismatch");
        for (const auto& m : terms)
            for (const auto& f : m.factors) {
                const bool relative =
                    f.kind == FactorKind::RelativeDisplacement || f.kind == FactorKind::RelativeVelocity;
                require(f.i >= 0 && f.i < dof && (!relative || (f.j >= 0 && f.j < dof)),
                        "library: term '" + monomial_label(m) + "' references a state outside the " +
                            std::to_string(dof) + "-dof model");
                require(f.power >= 0, "library: negative powers are not supported");
            }
    }
};

/// Column j is term j evaluated at every sample.
inline Eigen::MatrixXd build_library(const signal::TimeSeries& displacement, const signal::TimeSeries& velocity,
                                     const FunctionLibrary& library)
{
    require(displacement.length() == velocity.length() && displacement.channel_count() == velocity.channel_count(),
            "build_library: displacement and velocity are not aligned");
    require(displacement.channels.allFinite() && velocity.channels.allFinite(), "build_library: non-finite states");
    const int dof = static_cast<int>(displacement.channel_count());
    library.validate(dof);
    const auto n = displacement.length();
    Eigen::MatrixXd theta(n, static_cast<Eigen::Index>(library.size()));
    std::vector<double> q(static_cast<std::size_t>(dof)), qd(static_cast<std::size_t>(dof));
    for (Eigen::Index r = 0; r < n; ++r) {
        for (int d = 0; d < dof; ++d) {
            q[static_cast<std::size_t>(d)] = displacement.channels(r, d);
            qd[static_cast<std::size_t>(d)] = velocity.channels(r, d);
        }
        for (std::size_t j = 0; j < library.size(); ++j)
            theta(r, static_cast<Eigen::Index>(j)) = library.terms[j].eval(q, qd);
    }
    return theta;
}

struct SparseModel {
    Eigen::MatrixXd coefficients;  // terms x targets
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> active;
    double threshold = 0.0;
    int iterations = 0;
    bool rank_deficient = false;
    double condition_estimate = 0.0;  // ratio of extreme |R| diagonal entries, worst target
};

/// Least squares restricted to the active columns; inactive entries are 0.
inline Eigen::VectorXd active_least_squares(const Eigen::MatrixXd& theta, const Eigen::VectorXd& target,
                                            const Eigen::Array<bool, Eigen::Dynamic, 1>& active, bool& rank_deficient,
                                            double& condition)
{
    std::vector<Eigen::Index> cols;
    for (Eigen::Index j = 0; j < active.size(); ++j)
        if (active(j)) cols.push_back(j);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(theta.cols());
    if (cols.empty()) return x;
    Eigen::MatrixXd sub(theta.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k) sub.col(static_cast<Eigen::Index>(k)) = theta.col(cols[k]);

    // column equilibration keeps x and x^3 style columns comparable
    Eigen::VectorXd norms = sub.colwise().norm().transpose();
    for (Eigen::Index k = 0; k < norms.size(); ++k)
        if (norms(k) == 0.0) norms(k) = 1.0;
    const Eigen::MatrixXd scaled = sub * norms.cwiseInverse().asDiagonal();

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(scaled);
    if (qr.rank() < scaled.cols()) rank_deficient = true;
    const auto diag = qr.matrixQR().diagonal().cwiseAbs();
    if (diag.size() > 0 && diag.minCoeff() > 0.0) condition = std::max(condition, diag.maxCoeff() / diag.minCoeff());
    else condition = std::numeric_limits<double>::infinity();
    const Eigen::VectorXd sol = qr.solve(target).cwiseQuotient(norms);
    for (std::size_t k = 0; k < cols.size(); ++k) x(cols[k]) = sol(static_cast<Eigen::Index>(k));
    return x;
}

/// Alternates least squares on the active set with zeroing |c| < threshold,
/// per target column, until the active set stops changing or max_iters.
inline SparseModel stls(const Eigen::MatrixXd& theta, const Eigen::MatrixXd& targets, double threshold,
                        int max_iters = 10)
{
    require(theta.rows() >= theta.cols(), "stls: fewer samples than library terms");
    require(targets.rows() == theta.rows(), "stls: target rows do not match the library matrix");
    require(threshold >= 0.0, "stls: threshold must be non-negative");
    require(max_iters >= 1, "stls: max_iters must be at least 1");
    require(theta.allFinite() && targets.allFinite(), "stls: non-finite input");

    SparseModel m;
    m.threshold = threshold;
    m.coefficients = Eigen::MatrixXd::Zero(theta.cols(), targets.cols());
    m.active.setConstant(theta.cols(), targets.cols(), true);

    for (Eigen::Index t = 0; t < targets.cols(); ++t) {
        Eigen::Array<bool, Eigen::Dynamic, 1> active = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(theta.cols(), true);
        Eigen::VectorXd c = active_least_squares(theta, targets.col(t), active, m.rank_deficient, m.condition_estimate);
        int iter = 1;
        for (; iter <= max_iters; ++iter) {
            Eigen::Array<bool, Eigen::Dynamic, 1> next = active;
            for (Eigen::Index j = 0; j < c.size(); ++j)
                if (std::abs(c(j)) < threshold) next(j) = false;
            if ((next == active).all()) break;
            active = next;
            c = active_least_squares(theta, targets.col(t), active, m.rank_deficient, m.condition_estimate);
        }
        for (Eigen::Index j = 0; j < c.size(); ++j) {
            if (std::abs(c(j)) < threshold) active(j) = false;  // only bites when max_iters ran out
            if (!active(j)) c(j) = 0.0;
        }
        m.coefficients.col(t) = c;
        m.active.col(t) = active;
        m.iterations = std::max(m.iterations, std::min(iter, max_iters));
    }
    return m;
}

/// Least-squares targets: mass times acceleration, minus the applied force.
inline Eigen::MatrixXd force_targets(const signal::TimeSeries& acceleration, const std::vector<double>& masses,
                                     const signal::TimeSeries* force = nullptr)
{
    require(static_cast<Eigen::Index>(masses.size()) == acceleration.channel_count(),
            "sindy: one mass per acceleration channel is required");
    Eigen::MatrixXd y = acceleration.channels;
    for (Eigen::Index d = 0; d < y.cols(); ++d) y.col(d) *= masses[static_cast<std::size_t>(d)];
    if (force) {
        require(force->length() == acceleration.length() && force->channel_count() == acceleration.channel_count(),
                "sindy: force series is not aligned with the accelerations");
        y -= force->channels;
    }
    return y;
}

struct IdentifiedModel {
    physics::ModelSpec model;
    physics::ParameterSet parameters;
};

/// Generic-terms model with one coefficient per active (term, equation) pair.
inline IdentifiedModel to_model(const SparseModel& sparse, const FunctionLibrary& library,
                                const std::vector<double>& masses)
{
    IdentifiedModel out;
    out.model.kind = physics::ModelKind::GenericTerms;
    out.model.masses = masses;
    for (Eigen::Index eq = 0; eq < sparse.coefficients.cols(); ++eq)
        for (Eigen::Index j = 0; j < sparse.coefficients.rows(); ++j) {
            if (!sparse.active(j, eq)) continue;
            const int slot = out.model.coefficient_count();
            out.model.coefficients.push_back(physics::CoefficientSpec{
                "c" + std::to_string(eq) + "[" + library.labels[static_cast<std::size_t>(j)] + "]", "",
                physics::EncodingMode::Direct, 0.0});
            out.model.terms.push_back(physics::Term{static_cast<int>(eq), slot, 1.0,
                                                    library.terms[static_cast<std::size_t>(j)], std::nullopt});
            out.parameters.names.push_back(out.model.coefficients.back().name);
            out.parameters.values.push_back(sparse.coefficients(j, eq));
        }
    require(!out.model.terms.empty(), "sindy: every coefficient was pruned; nothing to simulate");
    return out;
}

inline std::string format_number(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

/// "m0 a0 = 1.2*q0 - 3*v0^3 + F0" style, one line per equation.
inline std::vector<std::string> equation_strings(const SparseModel& sparse, const FunctionLibrary& library)
{
    std::vector<std::string> out;
    for (Eigen::Index eq = 0; eq < sparse.coefficients.cols(); ++eq) {
        const std::string e = std::to_string(eq);
        std::string s = "m" + e + "*a" + e + " =";
        bool first = true;
        for (Eigen::Index j = 0; j < sparse.coefficients.rows(); ++j) {
            if (!sparse.active(j, eq)) continue;
            const double c = sparse.coefficients(j, eq);
            s += first ? (c < 0 ? " -" : " ") : (c < 0 ? " - " : " + ");
            s += format_number(std::abs(c)) + "*" + library.labels[static_cast<std::size_t>(j)];
            first = false;
        }
        s += first ? " F" + e : " + F" + e;
        out.push_back(s);
    }
    return out;
}

}  // namespace siva::sindy
