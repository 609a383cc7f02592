#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <vector>

#include "dualtl/hrdsp.hpp"
#include "dualtl/rng.hpp"

using namespace dualtl;

namespace {

constexpr double kPi = 3.14159265358979323846;

std::vector<double> tone(double freq_hz, double fs, double seconds, double phase = 0.0) {
    const auto n = static_cast<std::size_t>(seconds * fs);
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i)
        x[i] = std::sin(2.0 * kPi * freq_hz * static_cast<double>(i) / fs + phase);
    return x;
}

double rms(const std::vector<double>& x, std::size_t skip = 0) {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = skip; i + skip < x.size(); ++i) {
        s += x[i] * x[i];
        ++n;
    }
    return std::sqrt(s / static_cast<double>(n));
}

}  // namespace

TEST_CASE("fft basics", "[hrdsp]") {
    CHECK(next_pow2(1) == 1);
    CHECK(next_pow2(2) == 2);
    CHECK(next_pow2(3) == 4);
    CHECK(next_pow2(8) == 8);
    CHECK(next_pow2(9) == 16);

    // impulse -> flat spectrum
    std::vector<std::complex<double>> imp(8, 0.0);
    imp[0] = 1.0;
    fft_inplace(imp);
    for (const auto& v : imp) CHECK(std::abs(v - std::complex<double>(1.0, 0.0)) < 1e-12);

    // a pure on-grid tone concentrates in two bins
    const std::size_t n = 64;
    std::vector<std::complex<double>> buf(n);
    for (std::size_t i = 0; i < n; ++i)
        buf[i] = std::sin(2.0 * kPi * 5.0 * static_cast<double>(i) / static_cast<double>(n));
    fft_inplace(buf);
    for (std::size_t k = 0; k < n; ++k) {
        const double mag = std::abs(buf[k]);
        if (k == 5 || k == n - 5)
            CHECK(std::abs(mag - static_cast<double>(n) / 2.0) < 1e-9);
        else
            CHECK(mag < 1e-9);
    }

    // forward-inverse round trip
    std::mt19937_64 rng(derive_seed(151, 0));
    std::vector<std::complex<double>> sig(32);
    for (auto& v : sig) v = {uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0)};
    auto copy = sig;
    fft_inplace(copy);
    fft_inplace(copy, true);
    for (std::size_t i = 0; i < sig.size(); ++i) CHECK(std::abs(copy[i] - sig[i]) < 1e-12);

    std::vector<std::complex<double>> bad(12);
    CHECK_THROWS_AS(fft_inplace(bad), std::invalid_argument);
}

TEST_CASE("bandpass coefficients pin the response", "[hrdsp]") {
    const Biquad q = butter_bandpass_coeffs(30.0, kHrBandLowHz, kHrBandHighHz);
    // zeros at DC and Nyquist by construction
    CHECK(std::abs(q.b0 + q.b1 + q.b2) < 1e-15);
    CHECK(std::abs(q.b0 - q.b1 + q.b2) < 1e-15);
    CHECK(biquad_gain_at(q, 30.0, 0.0) < 1e-12);

    // out-of-band attenuation and near-unity passband center
    const double g01 = biquad_gain_at(q, 30.0, 0.1);
    CHECK(std::abs(g01 - 0.094) < 0.002);
    CHECK(biquad_gain_at(q, 30.0, 1.37) > 0.99);
    CHECK(biquad_gain_at(q, 30.0, 10.0) < 0.2);
    CHECK(biquad_gain_at(q, 30.0, 0.3) > g01);

    CHECK_THROWS_AS(butter_bandpass_coeffs(4.0, 0.75, 2.5), std::invalid_argument);
    CHECK_THROWS_AS(butter_bandpass_coeffs(30.0, 2.5, 0.75), std::invalid_argument);
}

TEST_CASE("filtfilt passes the band and kills drift", "[hrdsp]") {
    const Biquad q = butter_bandpass_coeffs(30.0, kHrBandLowHz, kHrBandHighHz);

    const std::vector<double> in_band = tone(1.5, 30.0, 10.0);
    const std::vector<double> kept = filtfilt(q, in_band);
    const double ratio = rms(kept, 30) / rms(in_band, 30);
    CHECK(ratio > 0.9);
    CHECK(ratio < 1.1);

    const std::vector<double> drift = tone(0.1, 30.0, 20.0);
    const std::vector<double> gone = filtfilt(q, drift);
    CHECK(rms(gone, 60) / rms(drift, 60) < 0.05);

    std::vector<double> zeros(100, 0.0);
    for (double v : filtfilt(q, zeros)) CHECK(v == 0.0);

    CHECK_THROWS_AS(filtfilt(q, std::vector<double>(8, 1.0)), std::invalid_argument);
}

TEST_CASE("filtfilt is linear and zero phase", "[hrdsp]") {
    const Biquad q = butter_bandpass_coeffs(30.0, kHrBandLowHz, kHrBandHighHz);
    std::mt19937_64 rng(derive_seed(157, 0));
    std::vector<double> a(300), b(300);
    for (std::size_t i = 0; i < 300; ++i) {
        a[i] = uniform(rng, -1.0, 1.0);
        b[i] = uniform(rng, -1.0, 1.0);
    }
    std::vector<double> sum(300);
    for (std::size_t i = 0; i < 300; ++i) sum[i] = a[i] + b[i];
    const auto fa = filtfilt(q, a);
    const auto fb = filtfilt(q, b);
    const auto fsum = filtfilt(q, sum);
    for (std::size_t i = 0; i < 300; ++i) CHECK(std::abs(fsum[i] - (fa[i] + fb[i])) < 1e-9);

    // an in-band tone must come out with zero lag: the zero-lag correlation
    // dominates every shifted one
    const std::vector<double> x = tone(1.2, 30.0, 10.0);
    const std::vector<double> y = filtfilt(q, x);
    auto corr_at = [&](int lag) {
        double s = 0.0;
        for (std::size_t i = 30; i + 30 < x.size(); ++i)
            s += x[i] * y[static_cast<std::size_t>(static_cast<int>(i) + lag)];
        return s;
    };
    const double at0 = corr_at(0);
    for (int lag = 1; lag <= 5; ++lag) {
        CHECK(at0 > corr_at(lag));
        CHECK(at0 > corr_at(-lag));
    }
}

TEST_CASE("fft HR estimator nails clean tones", "[hrdsp]") {
    for (double fs : {25.0, 30.0})
        for (double bpm : {48.0, 60.0, 72.0, 90.0, 120.0, 144.0}) {
            const std::vector<double> x = tone(bpm / 60.0, fs, 10.0, 0.7);
            const double est = estimate_hr_fft(x, fs);
            CHECK(std::abs(est - bpm) < 0.5);
        }

    // the stronger fundamental wins over a weaker harmonic
    std::vector<double> mix = tone(1.2, 30.0, 10.0);
    const std::vector<double> harmonic = tone(2.4, 30.0, 10.0, 0.4);
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] += 0.3 * harmonic[i];
    CHECK(std::abs(estimate_hr_fft(mix, 30.0) - 72.0) < 1.0);

    CHECK_THROWS_AS(estimate_hr_fft(std::vector<double>(300, 1.0), 30.0), std::domain_error);
    CHECK_THROWS_AS(estimate_hr_fft(std::vector<double>(30, 0.0), 30.0), std::invalid_argument);
}

TEST_CASE("peak detector and inter-beat HR", "[hrdsp]") {
    const std::vector<double> x = tone(1.0, 30.0, 10.0);
    const auto peaks = detect_peaks(x, 30.0);
    REQUIRE(peaks.size() == 10);
    CHECK(std::abs(peak_hr(peaks, 30.0) - 60.0) < 0.5);

    std::vector<double> ramp(100);
    for (std::size_t i = 0; i < 100; ++i) ramp[i] = static_cast<double>(i);
    CHECK(detect_peaks(ramp, 30.0).empty());
    CHECK_THROWS_AS(peak_hr(detect_peaks(ramp, 30.0), 30.0), std::domain_error);

    // plateau: only the first sample of an equal pair is a candidate
    std::vector<double> plateau = {0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
    const auto p = detect_peaks(plateau, 30.0);
    REQUIRE(p.size() == 1);
    CHECK(p[0] == 1);

    // equal-height peaks closer than the refractory window: earlier one wins
    std::vector<double> twin(32, 0.0);
    twin[10] = 2.0;
    twin[15] = 2.0;
    const auto t = detect_peaks(twin, 30.0);
    REQUIRE(t.size() == 1);
    CHECK(t[0] == 10);
}

TEST_CASE("estimate_hr end to end on a pulse-like wave", "[hrdsp]") {
    std::vector<double> x(300);
    for (std::size_t i = 0; i < 300; ++i) {
        const double ph = 2.0 * kPi * 1.2 * static_cast<double>(i) / 30.0;
        x[i] = std::sin(ph) + 0.5 * std::sin(2.0 * ph + 0.8) + 120.0;  // DC offset on purpose
    }
    const HrEstimate est = estimate_hr(x, 30.0);
    CHECK(std::abs(est.hr_bpm - 72.0) < 0.5);
    CHECK(est.hr_bpm == est.hr_fft_bpm);
    REQUIRE(std::isfinite(est.hr_peak_bpm));
    CHECK(std::abs(est.hr_peak_bpm - est.hr_fft_bpm) < 2.0);
    CHECK(est.band_low_hz == 0.75);
    CHECK(est.band_high_hz == 2.5);

    CHECK_THROWS_AS(estimate_hr(std::vector<double>(300, 5.0), 30.0), std::domain_error);
}

TEST_CASE("metrics hand-computed cases", "[hrdsp]") {
    const Metrics m = metrics({70, 80}, {60, 90});
    CHECK(std::abs(m.mae - 10.0) < 1e-9);
    CHECK(std::abs(m.rmse - 10.0) < 1e-9);
    CHECK(std::abs(m.mer - (10.0 / 60.0 + 10.0 / 90.0) / 2.0 * 100.0) < 1e-9);
    CHECK(std::abs(m.std - std::sqrt(200.0)) < 1e-9);
    REQUIRE(m.r.has_value());
    CHECK(std::abs(*m.r - 1.0) < 1e-12);  // both sequences increase together

    const Metrics id = metrics({70, 80, 95}, {70, 80, 95});
    CHECK(id.mae == 0.0);
    CHECK(id.rmse == 0.0);
    CHECK(id.mer == 0.0);
    CHECK(id.std == 0.0);
    REQUIRE(id.r.has_value());
    CHECK(std::abs(*id.r - 1.0) < 1e-12);

    const Metrics single = metrics({72}, {75});
    CHECK(std::abs(single.mae - 3.0) < 1e-12);
    CHECK(single.std == 0.0);
    CHECK_FALSE(single.r.has_value());

    const Metrics flat = metrics({70, 70}, {60, 90});
    CHECK_FALSE(flat.r.has_value());  // zero-variance prediction is flagged, not faked

    CHECK_THROWS_AS(metrics({}, {}), std::invalid_argument);
    CHECK_THROWS_AS(metrics({1.0}, {1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("metrics invariants on random data", "[hrdsp]") {
    std::mt19937_64 rng(derive_seed(163, 0));
    for (int rep = 0; rep < 1000; ++rep) {
        const std::size_t m = 2 + uniform_below(rng, 6);
        std::vector<double> pre(m), gt(m);
        for (std::size_t i = 0; i < m; ++i) {
            pre[i] = uniform(rng, 50.0, 140.0);
            gt[i] = uniform(rng, 50.0, 140.0);
        }
        const Metrics stats = metrics(pre, gt);
        REQUIRE(stats.mae <= stats.rmse + 1e-12);
        REQUIRE(stats.mae >= 0.0);
        if (stats.r) {
            REQUIRE(*stats.r >= -1.0 - 1e-12);
            REQUIRE(*stats.r <= 1.0 + 1e-12);
        }
    }

    // a positive affine map correlates perfectly
    std::vector<double> y(6), y2(6);
    for (std::size_t i = 0; i < 6; ++i) {
        y[i] = uniform(rng, 50.0, 140.0);
        y2[i] = 2.0 * y[i] + 5.0;
    }
    const Metrics aff = metrics(y2, y);
    REQUIRE(aff.r.has_value());
    CHECK(std::abs(*aff.r - 1.0) < 1e-12);
}
