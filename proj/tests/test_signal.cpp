#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "siva/signal.hpp"

using namespace siva;
using namespace siva::signal;

namespace {

constexpr double kPi = std::numbers::pi;

// scipy.signal.butter(3, [4, 50], 'bandpass', fs=2048)
const std::vector<double> kBandB{0.00030658913154358, 0.0, -0.00091976739463074, 0.0,
                                 0.00091976739463074, 0.0, -0.00030658913154358};
const std::vector<double> kBandA{1.0, -5.712587911046627, 13.607710874856705, -17.30143494481649,
                                 12.383995576233001, -4.731589372216344, 0.7539057828082169};
// scipy.signal.butter(3, 3, 'highpass', fs=2048)
const std::vector<double> kHighB{0.9908383091828729, -2.9725149275486187, 2.9725149275486187, -0.9908383091828729};
const std::vector<double> kHighA{1.0, -2.981592295513102, 2.9633536230055144, -0.9817605549443645};
// scipy.signal.butter(2, 100, fs=1000), lfilter_zi and filtfilt of a test signal
const std::vector<double> kLowB{0.0674552738890719, 0.1349105477781438, 0.0674552738890719};
const std::vector<double> kLowA{1.0, -1.1429805025399011, 0.41280159809618877};
const std::vector<double> kLowZi{0.9325447261109279, -0.34534632420711675};

TimeSeries series_of(const std::vector<double>& x, double fs)
{
    TimeSeries s;
    s.sample_rate = fs;
    s.channels.resize(static_cast<Eigen::Index>(x.size()), 1);
    for (std::size_t i = 0; i < x.size(); ++i) s.channels(static_cast<Eigen::Index>(i), 0) = x[i];
    return s;
}

TimeSeries sine(double freq, double amp, double fs, int n, double phase = 0.0)
{
    std::vector<double> x(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) x[static_cast<std::size_t>(i)] = amp * std::sin(2 * kPi * freq * i / fs + phase);
    return series_of(x, fs);
}

void expect_coeffs(const std::vector<double>& got, const std::vector<double>& want, double tol)
{
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got[i], want[i], tol) << i;
}

// amplitude over the central half, where padding transients are gone
double central_amplitude(const TimeSeries& s, Eigen::Index col = 0)
{
    const auto n = s.length();
    return s.channels.col(col).segment(n / 4, n / 2).cwiseAbs().maxCoeff();
}

}  // namespace

TEST(SignalDesign, BandPassMatchesReference)
{
    const auto f = design_butterworth(3, FilterKind::BandPass, {4.0, 50.0}, 2048.0);
    expect_coeffs(f.numerator, kBandB, 1e-15);
    expect_coeffs(f.denominator, kBandA, 1e-11);
    EXPECT_EQ(f.order(), 6);
}

TEST(SignalDesign, HighAndLowPassMatchReference)
{
    const auto h = design_butterworth(3, FilterKind::HighPass, {3.0}, 2048.0);
    expect_coeffs(h.numerator, kHighB, 1e-12);
    expect_coeffs(h.denominator, kHighA, 1e-12);
    const auto l = design_butterworth(2, FilterKind::LowPass, {100.0}, 1000.0);
    expect_coeffs(l.numerator, kLowB, 1e-14);
    expect_coeffs(l.denominator, kLowA, 1e-14);
}

TEST(SignalDesign, BandPassResponse)
{
    const auto f = design_butterworth(3, FilterKind::BandPass, {4.0, 50.0}, 2048.0);
    EXPECT_NEAR(std::abs(f.response(20.0, 2048.0)), 1.0, 0.01);
    // scipy.signal.freqz of the reference coefficients: one pass at 1 Hz is 0.01236
    EXPECT_NEAR(std::abs(f.response(1.0, 2048.0)), 0.01235588, 1e-7);
    EXPECT_NEAR(std::abs(f.response(4.0, 2048.0)), std::sqrt(0.5), 1e-9);
    EXPECT_NEAR(std::abs(f.response(50.0, 2048.0)), std::sqrt(0.5), 1e-9);
}

TEST(SignalDesign, HighPassBlocksDc)
{
    const auto f = design_butterworth(3, FilterKind::HighPass, {3.0}, 2048.0);
    EXPECT_LT(std::abs(f.response(0.0, 2048.0)), 1e-12);
    EXPECT_NEAR(std::abs(f.response(500.0, 2048.0)), 1.0, 1e-6);
}

TEST(SignalDesign, RejectsCutoffsOutsideNyquist)
{
    EXPECT_THROW(design_butterworth(3, FilterKind::HighPass, {2000.0}, 2048.0), Error);
    EXPECT_THROW(design_butterworth(3, FilterKind::BandPass, {50.0, 4.0}, 2048.0), Error);
    EXPECT_THROW(design_butterworth(0, FilterKind::LowPass, {10.0}, 2048.0), Error);
    EXPECT_THROW(design_butterworth(2, FilterKind::BandPass, {10.0}, 2048.0), Error);
}

TEST(SignalDesign, DesignedFiltersAreStable)
{
    for (int order = 1; order <= 5; ++order) {
        EXPECT_TRUE(design_butterworth(order, FilterKind::BandPass, {4.0, 50.0}, 2048.0).is_stable());
        EXPECT_TRUE(design_butterworth(order, FilterKind::HighPass, {3.0}, 2048.0).is_stable());
        EXPECT_TRUE(design_butterworth(order, FilterKind::LowPass, {30.0}, 256.0).is_stable());
    }
}

TEST(SignalFilter, SteadyStateMatchesReference)
{
    const auto l = design_butterworth(2, FilterKind::LowPass, {100.0}, 1000.0);
    expect_coeffs(lfilter_steady_state(l), kLowZi, 1e-13);
}

TEST(SignalFilter, ZeroPhaseMatchesReference)
{
    const auto l = design_butterworth(2, FilterKind::LowPass, {100.0}, 1000.0);
    std::vector<double> x(40);
    for (int i = 0; i < 40; ++i) x[static_cast<std::size_t>(i)] = std::sin(0.3 * i) + 0.5 * std::cos(1.7 * i) + 0.01 * i;
    const auto y = filtfilt(l, x);
    EXPECT_NEAR(y[0], 0.49785477184540505, 1e-12);
    EXPECT_NEAR(y[7], 0.8755426419060541, 1e-12);
    EXPECT_NEAR(y[20], -0.06966537003376838, 1e-12);
    EXPECT_NEAR(y[39], -0.8525605255693399, 1e-12);
}

TEST(SignalFilter, StopBandSinusoidIsRemoved)
{
    const auto f = design_butterworth(3, FilterKind::BandPass, {4.0, 50.0}, 2048.0);
    const auto y = zero_phase_filter(f, sine(1.0, 1.0, 2048.0, 8 * 2048));
    // forward and backward passes square the single-pass gain
    EXPECT_LT(central_amplitude(y), 0.01);
    EXPECT_NEAR(central_amplitude(y), 0.01235588 * 0.01235588, 2e-5);
}

TEST(SignalFilter, SectionResponseMatchesReference)
{
    const auto f = design_butterworth(3, FilterKind::BandPass, {4.0, 50.0}, 2048.0);
    ASSERT_EQ(f.sections.size(), 3u);
    // scipy.signal.sosfreqz of butter(..., output='sos')
    const std::vector<std::pair<double, double>> ref{{0.5, 0.0015272992305175813},
                                                     {4.0, 0.7071067811854893},
                                                     {20.0, 0.999948223822611},
                                                     {50.0, 0.7071067811865474},
                                                     {300.0, 0.0029199879129866283}};
    for (const auto& [hz, mag] : ref) EXPECT_NEAR(std::abs(f.response(hz, 2048.0)), mag, 1e-11) << hz;
}

TEST(SignalFilter, ZeroInZeroOut)
{
    const auto f = design_butterworth(3, FilterKind::BandPass, {4.0, 50.0}, 2048.0);
    const auto y = zero_phase_filter(f, series_of(std::vector<double>(500, 0.0), 2048.0));
    EXPECT_TRUE(y.channels.isZero(0.0));
}

TEST(SignalFilter, ImpulseResponseIsSymmetric)
{
    const auto f = design_butterworth(3, FilterKind::BandPass, {4.0, 50.0}, 2048.0);
    std::vector<double> x(8193, 0.0);
    x[4096] = 1.0;
    const auto y = filtfilt(f, x);
    double worst = 0.0;
    for (std::size_t k = 1; k <= 4000; ++k) worst = std::max(worst, std::abs(y[4096 + k] - y[4096 - k]));
    EXPECT_LT(worst, 1e-10);
}

TEST(SignalFilter, PassBandSinusoidKeepsPhaseAndAmplitude)
{
    const auto f = design_butterworth(3, FilterKind::BandPass, {4.0, 50.0}, 2048.0);
    const auto x = sine(20.0, 1.0, 2048.0, 4 * 2048);
    const auto y = zero_phase_filter(f, x);
    const auto n = x.length();
    const double err = (y.channels - x.channels).col(0).segment(n / 4, n / 2).cwiseAbs().maxCoeff();
    EXPECT_LT(err, 0.02);
}

TEST(SignalFilter, RejectsTooShortSeries)
{
    const auto f = design_butterworth(3, FilterKind::BandPass, {4.0, 50.0}, 2048.0);
    EXPECT_THROW(filtfilt(f, std::vector<double>(21, 1.0)), Error);
    EXPECT_NO_THROW(filtfilt(f, std::vector<double>(22, 1.0)));
}

TEST(SignalIntegral, RampAndSine)
{
    const auto ones = series_of(std::vector<double>(101, 1.0), 100.0);
    const auto r = cumulative_integral(ones);
    for (Eigen::Index i = 0; i < r.length(); ++i) EXPECT_NEAR(r.channels(i, 0), i / 100.0, 1e-13);

    const double fs = 1000.0, w = 2 * kPi * 5.0;
    std::vector<double> c(2001);
    for (int i = 0; i <= 2000; ++i) c[static_cast<std::size_t>(i)] = std::cos(w * i / fs);
    const auto s = cumulative_integral(series_of(c, fs));
    double worst = 0.0;
    for (int i = 0; i <= 2000; ++i) worst = std::max(worst, std::abs(s.channels(i, 0) - std::sin(w * i / fs) / w));
    EXPECT_LT(worst, 1e-5);
}

TEST(SignalIntegral, RejectsSingleSample)
{
    EXPECT_THROW(cumulative_integral(series_of({1.0}, 100.0)), Error);
}

TEST(SignalDerive, ZeroInZeroOut)
{
    const auto s = derive_states(series_of(std::vector<double>(4096, 0.0), 2048.0));
    EXPECT_TRUE(s.displacement.channels.isZero(0.0));
    EXPECT_TRUE(s.velocity.channels.isZero(0.0));
    EXPECT_TRUE(s.acceleration.channels.isZero(0.0));
}

TEST(SignalDerive, VelocityAndDisplacementAmplitudes)
{
    const double f0 = 20.0, w = 2 * kPi * f0;
    const auto a = sine(f0, 1.0, 2048.0, 8 * 2048);
    const auto s = derive_states(a);
    EXPECT_NEAR(central_amplitude(s.velocity) / (1.0 / w), 1.0, 0.03);
    EXPECT_NEAR(central_amplitude(s.displacement) / (1.0 / (w * w)), 1.0, 0.03);
}

TEST(SignalDerive, DcOffsetDoesNotGrowDisplacement)
{
    const double f0 = 20.0, w = 2 * kPi * f0;
    auto a = sine(f0, 1.0, 2048.0, 8 * 2048);
    a.channels.array() += 0.5;
    const auto s = derive_states(a);
    const auto clean = derive_states(sine(f0, 1.0, 2048.0, 8 * 2048));
    // double integration of the raw offset would reach 0.5 * 0.5 * 8^2 = 16 m
    EXPECT_LT(s.displacement.channels.cwiseAbs().maxCoeff(), 5.0 / (w * w));
    const auto n = a.length();
    const double central_diff =
        (s.displacement.channels - clean.displacement.channels).col(0).segment(n / 4, n / 2).cwiseAbs().maxCoeff();
    EXPECT_LT(central_diff, 1e-3 / (w * w));
}

TEST(SignalDerive, IsLinear)
{
    const auto x = sine(13.0, 1.0, 2048.0, 4096);
    const auto y = sine(31.0, 0.7, 2048.0, 4096, 0.4);
    auto combo = x;
    combo.channels = 2.0 * x.channels - 3.0 * y.channels;
    const auto sx = derive_states(x), sy = derive_states(y), sc = derive_states(combo);
    const Eigen::MatrixXd expect = 2.0 * sx.displacement.channels - 3.0 * sy.displacement.channels;
    const double scale = expect.cwiseAbs().maxCoeff();
    EXPECT_LT((sc.displacement.channels - expect).cwiseAbs().maxCoeff(), 1e-9 * scale);
}

TEST(SignalDerive, RejectsLowSampleRate)
{
    EXPECT_THROW(derive_states(series_of(std::vector<double>(512, 0.0), 64.0)), Error);
}

TEST(SignalResample, DecimatesExactly)
{
    std::vector<double> x(2048 * 2);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(0.01 * static_cast<double>(i)) + static_cast<double>(i);
    const auto s = series_of(x, 2048.0);
    const auto r = resample_and_trim(s, 256.0, 0.0);
    ASSERT_EQ(r.length(), 512);
    EXPECT_EQ(r.sample_rate, 256.0);
    for (Eigen::Index i = 0; i < r.length(); ++i) EXPECT_EQ(r.channels(i, 0), x[static_cast<std::size_t>(8 * i)]);
}

TEST(SignalResample, IdentityAndTrim)
{
    const auto s = sine(3.0, 1.0, 256.0, 300);
    const auto same = resample_and_trim(s, 256.0, 0.0);
    EXPECT_EQ(same.channels, s.channels);

    const auto trimmed = resample_and_trim(s, 256.0, 0.0062);
    EXPECT_EQ(trimmed.start_time, 0.0);
    EXPECT_EQ(trimmed.length(), 298);  // samples at t >= 0.0062 start at index 2
    EXPECT_EQ(trimmed.channels(0, 0), s.channels(2, 0));
}

TEST(SignalResample, RejectsNonIntegerRatio)
{
    EXPECT_THROW(resample_and_trim(sine(3.0, 1.0, 1000.0, 300), 256.0, 0.0), Error);
    EXPECT_THROW(resample_and_trim(sine(3.0, 1.0, 256.0, 300), 256.0, 10.0), Error);
}

TEST(SignalSpectrum, ExactBinPeak)
{
    const int n = 1024;
    const double fs = 1024.0;
    const auto s = sine(64.0, 1.0, fs, n);
    const auto sp = dft_magnitude(s);
    ASSERT_EQ(sp.frequencies.size(), n / 2 + 1);
    Eigen::Index k;
    sp.magnitudes.col(0).maxCoeff(&k);
    EXPECT_EQ(sp.frequencies(k), 64.0);
    EXPECT_NEAR(sp.magnitudes(k, 0), 1.0, 1e-12);
}

TEST(SignalSpectrum, ZeroSignal)
{
    const auto sp = dft_magnitude(series_of(std::vector<double>(64, 0.0), 64.0));
    EXPECT_TRUE(sp.magnitudes.isZero(0.0));
}

TEST(SignalSpectrum, TwoTonesFortyDecibelsApart)
{
    const int n = 2048;
    const double fs = 2048.0;
    auto s = sine(100.0, 1.0, fs, n);
    s.channels += sine(300.0, 0.01, fs, n).channels;
    const auto sp = dft_magnitude(s);
    EXPECT_NEAR(sp.magnitudes(100, 0), 1.0, 1e-12);
    EXPECT_NEAR(sp.magnitudes(300, 0), 0.01, 1e-12);
    EXPECT_NEAR(20 * std::log10(sp.magnitudes(100, 0) / sp.magnitudes(300, 0)), 40.0, 1e-9);
    for (Eigen::Index k = 0; k < sp.magnitudes.rows(); ++k)
        if (k != 100 && k != 300) EXPECT_LT(sp.magnitudes(k, 0), 1e-12);
}

TEST(SignalSpectrum, ParsevalOnRandomSignal)
{
    std::vector<double> x(500);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(1.3 * static_cast<double>(i * i % 97));
    const auto sp = dft_magnitude(series_of(x, 100.0));
    double ms = 0.0;
    for (double v : x) ms += v * v;
    ms /= static_cast<double>(x.size());
    double sum = sp.magnitudes(0, 0) * sp.magnitudes(0, 0) + std::pow(sp.magnitudes(250, 0), 2);
    for (Eigen::Index k = 1; k < 250; ++k) sum += 0.5 * sp.magnitudes(k, 0) * sp.magnitudes(k, 0);
    EXPECT_NEAR(sum, ms, 1e-12);
}
