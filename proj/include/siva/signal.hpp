#pragma once

// Measurement preprocessing: Butterworth design through the bilinear
// transform, zero-phase filtering, trapezoidal integration with high-pass
// drift removal, decimation and a single-sided DFT magnitude report.

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "siva/error.hpp"

namespace siva::signal {

/// Uniformly sampled multichannel signal; one row per sample.
struct TimeSeries {
    double sample_rate = 1.0;  // Hz
    double start_time = 0.0;   // s
    Eigen::MatrixXd channels;  // samples x channels

    Eigen::Index length() const { return channels.rows(); }
    Eigen::Index channel_count() const { return channels.cols(); }
    double dt() const { return 1.0 / sample_rate; }
    double time(Eigen::Index i) const { return start_time + static_cast<double>(i) / sample_rate; }
    double end_time() const { return time(length() - 1); }

    void validate(const char* what = "time series") const
    {
        require(std::isfinite(sample_rate) && sample_rate > 0.0, std::string(what) + ": sample rate must be positive");
        require(length() >= 2, std::string(what) + ": at least two samples are required");
        require(channel_count() >= 1, std::string(what) + ": at least one channel is required");
    }
};

struct IirFilter {
    std::vector<double> numerator;
    std::vector<double> denominator;  // denominator[0] == 1
    /// Same transfer function as cascaded second-order sections. When present,
    /// filtering runs through the sections; the expanded polynomials of a
    /// narrow band-pass lose too many digits to be filtered directly.
    std::vector<IirFilter> sections;

    int order() const { return static_cast<int>(denominator.size()) - 1; }

    std::vector<std::complex<double>> poles() const
    {
        if (!sections.empty()) {
            std::vector<std::complex<double>> all;
            for (const auto& s : sections)
                for (const auto& p : s.poles()) all.push_back(p);
            return all;
        }
        const int n = order();
        if (n < 1) return {};
        Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(n, n);
        for (int c = 0; c < n; ++c) companion(0, c) = -denominator[static_cast<std::size_t>(c) + 1];
        for (int r = 1; r < n; ++r) companion(r, r - 1) = 1.0;
        Eigen::EigenSolver<Eigen::MatrixXd> solver(companion, false);
        std::vector<std::complex<double>> p;
        for (int i = 0; i < n; ++i) p.push_back(solver.eigenvalues()(i));
        return p;
    }

    bool is_stable() const
    {
        for (const auto& p : poles())
            if (std::abs(p) >= 1.0) return false;
        return true;
    }

    /// H(e^{j 2 pi f / fs})
    std::complex<double> response(double frequency_hz, double sample_rate) const
    {
        if (!sections.empty()) {
            std::complex<double> h = 1.0;
            for (const auto& s : sections) h *= s.response(frequency_hz, sample_rate);
            return h;
        }
        const std::complex<double> z1 = std::polar(1.0, -2.0 * std::numbers::pi * frequency_hz / sample_rate);
        std::complex<double> num = 0.0, den = 0.0, zk = 1.0;
        for (std::size_t k = 0; k < std::max(numerator.size(), denominator.size()); ++k) {
            if (k < numerator.size()) num += numerator[k] * zk;
            if (k < denominator.size()) den += denominator[k] * zk;
            zk *= z1;
        }
        return num / den;
    }
};

enum class FilterKind { LowPass, HighPass, BandPass };

namespace detail {

using cplx = std::complex<double>;

inline std::vector<double> poly_real(const std::vector<cplx>& roots)
{
    std::vector<cplx> c{1.0};
    for (const auto& r : roots) {
        std::vector<cplx> next(c.size() + 1, 0.0);
        for (std::size_t i = 0; i < c.size(); ++i) {
            next[i] += c[i];
            next[i + 1] -= r * c[i];
        }
        c = std::move(next);
    }
    std::vector<double> out;
    for (const auto& v : c) out.push_back(v.real());
    return out;
}

/// Groups conjugate pole pairs (and leftover real poles) into second-order
/// sections. Zeros are taken alternately from both ends of the list so a
/// band-pass pairs each zero at z = 1 with one at z = -1.
inline std::vector<IirFilter> to_sections(std::vector<cplx> zeros, const std::vector<cplx>& poles, double gain)
{
    std::vector<std::vector<cplx>> pole_groups;
    std::vector<cplx> real_poles;
    for (const auto& p : poles) {
        if (std::abs(p.imag()) <= 1e-12 * std::max(1.0, std::abs(p))) real_poles.push_back(p.real());
        else if (p.imag() > 0.0) pole_groups.push_back({p, std::conj(p)});
    }
    for (std::size_t i = 0; i < real_poles.size(); i += 2) {
        std::vector<cplx> g{real_poles[i]};
        if (i + 1 < real_poles.size()) g.push_back(real_poles[i + 1]);
        pole_groups.push_back(g);
    }

    std::vector<IirFilter> out;
    std::size_t front = 0, back = zeros.size();
    for (std::size_t k = 0; k < pole_groups.size(); ++k) {
        std::vector<cplx> zg;
        while (zg.size() < pole_groups[k].size() && front < back) {
            if (zg.size() % 2 == 0) zg.push_back(zeros[front++]);
            else zg.push_back(zeros[--back]);
        }
        IirFilter s;
        s.numerator = poly_real(zg);
        s.denominator = poly_real(pole_groups[k]);
        s.numerator.resize(s.denominator.size(), 0.0);
        if (k == 0)
            for (auto& b : s.numerator) b *= gain;
        out.push_back(std::move(s));
    }
    return out;
}

inline cplx product(const std::vector<cplx>& v, double shift, double sign)
{
    cplx p = 1.0;
    for (const auto& x : v) p *= shift + sign * x;
    return p;
}

}  // namespace detail

/// Digital Butterworth filter: analog prototype, frequency transform with
/// prewarped edges, bilinear map to the z-plane. Band-pass doubles the order.
inline IirFilter design_butterworth(int order, FilterKind kind, const std::vector<double>& cutoffs_hz,
                                    double sample_rate)
{
    using detail::cplx;
    require(order >= 1, "design_butterworth: order must be at least 1");
    require(sample_rate > 0.0, "design_butterworth: sample rate must be positive");
    const double nyquist = sample_rate / 2.0;
    const std::size_t needed = kind == FilterKind::BandPass ? 2 : 1;
    require(cutoffs_hz.size() == needed, "design_butterworth: wrong number of cutoff frequencies");
    for (double f : cutoffs_hz)
        require(f > 0.0 && f < nyquist, "design_butterworth: cutoff " + std::to_string(f) +
                                            " Hz must lie strictly between 0 and the Nyquist frequency");
    if (kind == FilterKind::BandPass)
        require(cutoffs_hz[0] < cutoffs_hz[1], "design_butterworth: band-pass cutoffs must be increasing");

    const double pi = std::numbers::pi;
    const double fs2 = 2.0 * sample_rate;
    auto warp = [&](double f) { return fs2 * std::tan(pi * f / sample_rate); };

    std::vector<cplx> zeros;
    std::vector<cplx> poles;
    for (int m = -order + 1; m < order; m += 2) poles.push_back(-std::exp(cplx(0.0, pi * m / (2.0 * order))));
    double gain = 1.0;
    const int degree = order;

    switch (kind) {
    case FilterKind::LowPass: {
        const double wo = warp(cutoffs_hz[0]);
        for (auto& p : poles) p *= wo;
        gain *= std::pow(wo, degree);
        break;
    }
    case FilterKind::HighPass: {
        const double wo = warp(cutoffs_hz[0]);
        gain *= (detail::product(zeros, 0.0, -1.0) / detail::product(poles, 0.0, -1.0)).real();
        for (auto& p : poles) p = wo / p;
        zeros.assign(static_cast<std::size_t>(degree), 0.0);
        break;
    }
    case FilterKind::BandPass: {
        const double w1 = warp(cutoffs_hz[0]);
        const double w2 = warp(cutoffs_hz[1]);
        const double bw = w2 - w1;
        const double wo = std::sqrt(w1 * w2);
        std::vector<cplx> bp;
        for (const auto& p : poles) {
            const cplx lp = p * bw / 2.0;
            const cplx root = std::sqrt(lp * lp - wo * wo);
            bp.push_back(lp + root);
            bp.push_back(lp - root);
        }
        poles = std::move(bp);
        zeros.assign(static_cast<std::size_t>(degree), 0.0);
        gain *= std::pow(bw, degree);
        break;
    }
    }

    // bilinear transform
    const double zgain =
        (detail::product(zeros, fs2, -1.0) / detail::product(poles, fs2, -1.0)).real();
    std::vector<cplx> zz, pz;
    for (const auto& z : zeros) zz.push_back((fs2 + z) / (fs2 - z));
    for (const auto& p : poles) pz.push_back((fs2 + p) / (fs2 - p));
    while (zz.size() < pz.size()) zz.push_back(-1.0);
    gain *= zgain;

    IirFilter f;
    f.numerator = detail::poly_real(zz);
    for (auto& b : f.numerator) b *= gain;
    f.denominator = detail::poly_real(pz);
    f.sections = detail::to_sections(zz, pz, gain);
    return f;
}

/// Direct-form II transposed filtering with optional initial state.
inline std::vector<double> lfilter(const IirFilter& f, const std::vector<double>& x,
                                   const std::vector<double>& initial_state = {})
{
    const std::size_t n = std::max(f.numerator.size(), f.denominator.size());
    std::vector<double> b(n, 0.0), a(n, 0.0);
    std::copy(f.numerator.begin(), f.numerator.end(), b.begin());
    std::copy(f.denominator.begin(), f.denominator.end(), a.begin());
    const double a0 = a[0];
    for (std::size_t i = 0; i < n; ++i) {
        b[i] /= a0;
        a[i] /= a0;
    }
    std::vector<double> z(n - 1, 0.0);
    if (!initial_state.empty()) z = initial_state;
    std::vector<double> y(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double out = b[0] * x[k] + (n > 1 ? z[0] : 0.0);
        for (std::size_t i = 1; i + 1 < n; ++i) z[i - 1] = b[i] * x[k] + z[i] - a[i] * out;
        if (n > 1) z[n - 2] = b[n - 1] * x[k] - a[n - 1] * out;
        y[k] = out;
    }
    return y;
}

/// Steady-state initial conditions of `lfilter` for a unit step input.
inline std::vector<double> lfilter_steady_state(const IirFilter& f)
{
    const std::size_t n = std::max(f.numerator.size(), f.denominator.size());
    if (n < 2) return {};
    std::vector<double> b(n, 0.0), a(n, 0.0);
    std::copy(f.numerator.begin(), f.numerator.end(), b.begin());
    std::copy(f.denominator.begin(), f.denominator.end(), a.begin());
    const double a0 = a[0];
    for (std::size_t i = 0; i < n; ++i) {
        b[i] /= a0;
        a[i] /= a0;
    }
    const auto m = static_cast<Eigen::Index>(n - 1);
    // I - companion(a)^T
    Eigen::MatrixXd lhs = Eigen::MatrixXd::Identity(m, m);
    for (Eigen::Index r = 0; r < m; ++r) lhs(r, 0) += a[static_cast<std::size_t>(r) + 1];
    for (Eigen::Index r = 0; r + 1 < m; ++r) lhs(r, r + 1) -= 1.0;
    Eigen::VectorXd rhs(m);
    for (Eigen::Index r = 0; r < m; ++r)
        rhs(r) = b[static_cast<std::size_t>(r) + 1] - a[static_cast<std::size_t>(r) + 1] * b[0];
    const Eigen::VectorXd zi = lhs.partialPivLu().solve(rhs);
    return {zi.data(), zi.data() + m};
}

inline int zero_phase_pad_length(const IirFilter& f)
{
    return 3 * static_cast<int>(std::max(f.numerator.size(), f.denominator.size()));
}

/// Forward-backward filtering of one channel with odd-reflection padding.
inline std::vector<double> filtfilt(const IirFilter& f, const std::vector<double>& x)
{
    const int pad = zero_phase_pad_length(f);
    require(static_cast<int>(x.size()) > pad, "zero_phase_filter: series of " + std::to_string(x.size()) +
                                                  " samples is too short for padding of " + std::to_string(pad));
    const std::size_t n = x.size();
    const auto p = static_cast<std::size_t>(pad);
    std::vector<double> ext;
    ext.reserve(n + 2 * p);
    for (std::size_t i = p; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
    ext.insert(ext.end(), x.begin(), x.end());
    for (std::size_t i = 1; i <= p; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

    // each stage starts in the steady state of a constant input equal to the first sample
    const std::vector<IirFilter> stages = f.sections.empty() ? std::vector<IirFilter>{f} : f.sections;
    std::vector<std::vector<double>> zi;
    std::vector<double> dc_in;  // DC gain of the stages before this one
    double dc = 1.0;
    for (const auto& s : stages) {
        zi.push_back(lfilter_steady_state(s));
        dc_in.push_back(dc);
        dc *= std::accumulate(s.numerator.begin(), s.numerator.end(), 0.0) /
              std::accumulate(s.denominator.begin(), s.denominator.end(), 0.0);
    }
    auto run = [&](std::vector<double> v) {
        const double x0 = v.front();
        for (std::size_t k = 0; k < stages.size(); ++k) {
            std::vector<double> z = zi[k];
            for (auto& e : z) e *= x0 * dc_in[k];
            v = lfilter(stages[k], v, z);
        }
        return v;
    };
    auto y = run(std::move(ext));
    std::reverse(y.begin(), y.end());
    y = run(std::move(y));
    std::reverse(y.begin(), y.end());
    return {y.begin() + static_cast<std::ptrdiff_t>(p), y.begin() + static_cast<std::ptrdiff_t>(p + n)};
}

inline TimeSeries zero_phase_filter(const IirFilter& f, const TimeSeries& series)
{
    series.validate("zero_phase_filter");
    TimeSeries out = series;
    for (Eigen::Index c = 0; c < series.channel_count(); ++c) {
        std::vector<double> x(static_cast<std::size_t>(series.length()));
        for (Eigen::Index i = 0; i < series.length(); ++i) x[static_cast<std::size_t>(i)] = series.channels(i, c);
        const auto y = filtfilt(f, x);
        for (Eigen::Index i = 0; i < series.length(); ++i) out.channels(i, c) = y[static_cast<std::size_t>(i)];
    }
    return out;
}

/// Cumulative trapezoid integral starting from zero.
inline TimeSeries cumulative_integral(const TimeSeries& series)
{
    series.validate("cumulative_integral");
    TimeSeries out = series;
    const double half_dt = 0.5 * series.dt();
    out.channels.row(0).setZero();
    for (Eigen::Index i = 1; i < series.length(); ++i)
        out.channels.row(i) =
            out.channels.row(i - 1) + half_dt * (series.channels.row(i) + series.channels.row(i - 1));
    return out;
}

struct DerivedStates {
    TimeSeries displacement;
    TimeSeries velocity;
    TimeSeries acceleration;
};

struct StateDerivationSettings {
    int order = 3;
    double band_low_hz = 4.0;
    double band_high_hz = 50.0;
    double highpass_hz = 3.0;
};

/// Band-passes the measured acceleration, then integrates twice with a
/// zero-phase high-pass after each integration.
inline DerivedStates derive_states(const TimeSeries& accel, const StateDerivationSettings& settings = {})
{
    accel.validate("derive_states");
    require(accel.sample_rate > 2.0 * settings.band_high_hz,
            "derive_states: sample rate must exceed twice the upper band edge");
    const auto bandpass = design_butterworth(settings.order, FilterKind::BandPass,
                                             {settings.band_low_hz, settings.band_high_hz}, accel.sample_rate);
    const auto highpass =
        design_butterworth(settings.order, FilterKind::HighPass, {settings.highpass_hz}, accel.sample_rate);

    DerivedStates s;
    s.acceleration = zero_phase_filter(bandpass, accel);
    s.velocity = zero_phase_filter(highpass, cumulative_integral(s.acceleration));
    s.displacement = zero_phase_filter(highpass, cumulative_integral(s.velocity));
    return s;
}

/// Keeps every k-th sample (k = sample_rate / target_rate), drops samples
/// earlier than `start_at` and rebases the time axis to zero.
inline TimeSeries resample_and_trim(const TimeSeries& series, double target_rate, double start_at)
{
    series.validate("resample_and_trim");
    require(target_rate > 0.0, "resample_and_trim: target rate must be positive");
    const double ratio = series.sample_rate / target_rate;
    const double k_rounded = std::round(ratio);
    require(k_rounded >= 1.0 && std::abs(ratio - k_rounded) <= 1e-9 * ratio,
            "resample_and_trim: decimation ratio " + std::to_string(ratio) + " is not an integer");
    const double tol = 1e-9 * series.dt();
    require(start_at >= series.start_time - tol && start_at <= series.end_time() + tol,
            "resample_and_trim: start time lies outside the series");
    const auto k = static_cast<Eigen::Index>(k_rounded);

    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < series.length(); i += k)
        if (series.time(i) >= start_at - tol) keep.push_back(i);
    require(!keep.empty(), "resample_and_trim: no samples remain after trimming");

    TimeSeries out;
    out.sample_rate = target_rate;
    out.start_time = 0.0;
    out.channels.resize(static_cast<Eigen::Index>(keep.size()), series.channel_count());
    for (std::size_t r = 0; r < keep.size(); ++r)
        out.channels.row(static_cast<Eigen::Index>(r)) = series.channels.row(keep[r]);
    return out;
}

/// Single-sided amplitude spectrum: bin k holds 2|X_k|/N, except DC (and the
/// Nyquist bin for even N) which hold |X_k|/N. A unit-amplitude sinusoid on an
/// exact bin therefore reads 1, and the sum of squared amplitudes over bins
/// (halved for the non-edge bins) equals the mean square of the signal.
struct Spectrum {
    Eigen::VectorXd frequencies;  // Hz
    Eigen::MatrixXd magnitudes;   // bins x channels
};

inline Spectrum dft_magnitude(const TimeSeries& series)
{
    series.validate("dft_magnitude");
    const auto n = static_cast<std::size_t>(series.length());
    const std::size_t bins = n / 2 + 1;
    Spectrum s;
    s.frequencies.resize(static_cast<Eigen::Index>(bins));
    for (std::size_t k = 0; k < bins; ++k)
        s.frequencies(static_cast<Eigen::Index>(k)) = static_cast<double>(k) * series.sample_rate / static_cast<double>(n);
    s.magnitudes.resize(static_cast<Eigen::Index>(bins), series.channel_count());

    Eigen::FFT<double> fft;
    std::vector<double> x(n);
    std::vector<std::complex<double>> X;
    for (Eigen::Index c = 0; c < series.channel_count(); ++c) {
        for (std::size_t i = 0; i < n; ++i) x[i] = series.channels(static_cast<Eigen::Index>(i), c);
        fft.fwd(X, x);
        for (std::size_t k = 0; k < bins; ++k) {
            const bool edge = k == 0 || (n % 2 == 0 && k == n / 2);
            s.magnitudes(static_cast<Eigen::Index>(k), c) =
                (edge ? 1.0 : 2.0) * std::abs(X[k]) / static_cast<double>(n);
        }
    }
    return s;
}

}  // namespace siva::signal
