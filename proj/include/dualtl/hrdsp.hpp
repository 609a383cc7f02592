#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "dualtl/fft.hpp"

namespace dualtl {

constexpr double kHrBandLowHz = 0.75;  // 45 bpm
constexpr double kHrBandHighHz = 2.5;  // 150 bpm

/// Biquad coefficients, a0 normalized to 1.
struct Biquad {
    double b0, b1, b2;
    double a1, a2;
};

/// 1st-order analog Butterworth bandpass discretized by the bilinear
/// transform with pre-warped edge frequencies.
inline Biquad butter_bandpass_coeffs(double fs, double low_hz, double high_hz) {
    if (!(fs > 2.0 * high_hz))
        throw std::invalid_argument("butter_bandpass: fs must exceed twice the upper cutoff");
    if (!(low_hz > 0.0) || !(high_hz > low_hz))
        throw std::invalid_argument("butter_bandpass: bad band edges");
    const double pi = 3.14159265358979323846;
    const double w1 = 2.0 * fs * std::tan(pi * low_hz / fs);
    const double w2 = 2.0 * fs * std::tan(pi * high_hz / fs);
    const double bw = w2 - w1;      // analog bandwidth
    const double w0sq = w1 * w2;    // center frequency squared
    const double k = 2.0 * fs;
    const double a0 = k * k + bw * k + w0sq;
    Biquad q;
    q.b0 = bw * k / a0;
    q.b1 = 0.0;
    q.b2 = -bw * k / a0;
    q.a1 = 2.0 * (w0sq - k * k) / a0;
    q.a2 = (k * k - bw * k + w0sq) / a0;
    return q;
}

/// |H(e^{jw})| of the digital filter at a physical frequency, for single-pass
/// response checks; forward-backward filtering squares this.
inline double biquad_gain_at(const Biquad& q, double fs, double freq_hz) {
    const double pi = 3.14159265358979323846;
    const std::complex<double> z = std::polar(1.0, -2.0 * pi * freq_hz / fs);
    const std::complex<double> num = q.b0 + q.b1 * z + q.b2 * z * z;
    const std::complex<double> den = 1.0 + q.a1 * z + q.a2 * z * z;
    return std::abs(num / den);
}

namespace detail {

/// Direct-form II transposed with initial state; state passed in/out.
inline std::vector<double> lfilter(const Biquad& q, const std::vector<double>& x, double z0,
                                   double z1) {
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double yi = q.b0 * x[i] + z0;
        z0 = q.b1 * x[i] + z1 - q.a1 * yi;
        z1 = q.b2 * x[i] - q.a2 * yi;
        y[i] = yi;
    }
    return y;
}

/// Steady-state step-response state (lfilter_zi): the state the filter would
/// hold after an infinitely long unit input. Scaled by the first sample when
/// used, which suppresses start-up transients in filtfilt.
inline void lfilter_zi(const Biquad& q, double& z0, double& z1) {
    // Solve (I - companion(a)^T) z = b[1:] - a[1:]*b[0] for the biquad case.
    const double rhs0 = q.b1 - q.a1 * q.b0;
    const double rhs1 = q.b2 - q.a2 * q.b0;
    z0 = (rhs0 + rhs1) / (1.0 + q.a1 + q.a2);
    z1 = rhs1 - q.a2 * z0;
}

}  // namespace detail

/// Zero-phase forward-backward filtering with odd-symmetric edge extension.
inline std::vector<double> filtfilt(const Biquad& q, const std::vector<double>& x) {
    const std::size_t n = x.size();
    if (n < 9) throw std::invalid_argument("filtfilt: signal shorter than 9 samples");
    const std::size_t pad = std::min<std::size_t>(9, n - 1);
    std::vector<double> ext;
    ext.reserve(n + 2 * pad);
    for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
    ext.insert(ext.end(), x.begin(), x.end());
    for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

    double zi0, zi1;
    detail::lfilter_zi(q, zi0, zi1);
    std::vector<double> y = detail::lfilter(q, ext, zi0 * ext.front(), zi1 * ext.front());
    std::reverse(y.begin(), y.end());
    y = detail::lfilter(q, y, zi0 * y.front(), zi1 * y.front());
    std::reverse(y.begin(), y.end());
    return std::vector<double>(y.begin() + static_cast<std::ptrdiff_t>(pad),
                               y.begin() + static_cast<std::ptrdiff_t>(pad + n));
}

inline std::vector<double> butter_bandpass(const std::vector<double>& signal, double fs,
                                           double low_hz = kHrBandLowHz,
                                           double high_hz = kHrBandHighHz) {
    return filtfilt(butter_bandpass_coeffs(fs, low_hz, high_hz), signal);
}

/// Hann-windowed periodogram HR: argmax over [0.75, 2.5] Hz with the spectrum
/// zero-padded to <= 0.005 Hz resolution and a 3-bin parabolic refinement.
inline double estimate_hr_fft(const std::vector<double>& signal, double fs) {
    const std::size_t n = signal.size();
    if (static_cast<double>(n) < 2.0 * fs)
        throw std::invalid_argument("estimate_hr_fft: need at least 2 s of samples");
    double mean = 0.0;
    for (double v : signal) mean += v;
    mean /= static_cast<double>(n);

    const std::size_t nfft = next_pow2(std::max(n, static_cast<std::size_t>(std::ceil(fs / 0.005))));
    std::vector<std::complex<double>> buf(nfft, 0.0);
    const double pi = 3.14159265358979323846;
    for (std::size_t i = 0; i < n; ++i) {
        const double w = 0.5 * (1.0 - std::cos(2.0 * pi * static_cast<double>(i) / static_cast<double>(n)));
        buf[i] = (signal[i] - mean) * w;
    }
    fft_inplace(buf);

    const auto k_lo = static_cast<std::size_t>(std::ceil(kHrBandLowHz * static_cast<double>(nfft) / fs));
    const auto k_hi = static_cast<std::size_t>(std::floor(kHrBandHighHz * static_cast<double>(nfft) / fs));
    if (k_lo >= k_hi || k_hi >= nfft / 2)
        throw std::invalid_argument("estimate_hr_fft: band empty at this fs/nfft");
    std::size_t best = k_lo;
    double best_p = -1.0;
    for (std::size_t k = k_lo; k <= k_hi; ++k) {
        const double p = std::norm(buf[k]);
        if (p > best_p) {
            best_p = p;
            best = k;
        }
    }
    if (!(best_p > 0.0)) throw std::domain_error("estimate_hr_fft: no in-band energy");

    double delta = 0.0;
    if (best > 0 && best + 1 < nfft / 2) {
        const double pm = std::norm(buf[best - 1]);
        const double p0 = best_p;
        const double pp = std::norm(buf[best + 1]);
        const double den = pm - 2.0 * p0 + pp;
        if (den < 0.0) delta = std::clamp(0.5 * (pm - pp) / den, -0.5, 0.5);
    }
    const double freq = (static_cast<double>(best) + delta) * fs / static_cast<double>(nfft);
    return std::clamp(60.0 * freq, 60.0 * kHrBandLowHz, 60.0 * kHrBandHighHz);
}

namespace detail {

/// Linear-interpolated percentile over a copy of the data.
inline double percentile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q / 100.0 * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    const double frac = pos - std::floor(pos);
    return v[lo] + frac * (v[hi] - v[lo]);
}

}  // namespace detail

/// Local maxima above the 60th amplitude percentile, thinned to a minimum
/// spacing of fs*60/150 samples. Ties resolve to the larger amplitude, then
/// the earlier index.
inline std::vector<std::size_t> detect_peaks(const std::vector<double>& signal, double fs) {
    const std::size_t n = signal.size();
    if (n < 3) return {};
    const double thr = detail::percentile(signal, 60.0);
    std::vector<std::size_t> cand;
    for (std::size_t i = 1; i + 1 < n; ++i)
        if (signal[i] > signal[i - 1] && signal[i] >= signal[i + 1] && signal[i] > thr)
            cand.push_back(i);
    const auto min_dist = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(fs * 60.0 / 150.0)));
    std::sort(cand.begin(), cand.end(), [&](std::size_t a, std::size_t b) {
        if (signal[a] != signal[b]) return signal[a] > signal[b];
        return a < b;
    });
    std::vector<std::size_t> kept;
    for (std::size_t idx : cand) {
        bool ok = true;
        for (std::size_t k : kept)
            if ((idx > k ? idx - k : k - idx) < min_dist) {
                ok = false;
                break;
            }
        if (ok) kept.push_back(idx);
    }
    std::sort(kept.begin(), kept.end());
    return kept;
}

/// HR from the mean inter-beat interval across detected peaks.
inline double peak_hr(const std::vector<std::size_t>& peaks, double fs) {
    if (peaks.size() < 2) throw std::domain_error("peak_hr: fewer than 2 peaks");
    const double mean_ibi_s = static_cast<double>(peaks.back() - peaks.front()) /
                              (static_cast<double>(peaks.size() - 1) * fs);
    return 60.0 / mean_ibi_s;
}

struct HrEstimate {
    double hr_fft_bpm = 0.0;
    // NaN when fewer than 2 peaks were found; kept as a diagnostic only.
    double hr_peak_bpm = std::numeric_limits<double>::quiet_NaN();
    double hr_bpm = 0.0;
    double band_low_hz = kHrBandLowHz;
    double band_high_hz = kHrBandHighHz;
};

/// Filter then run both estimators; the FFT estimate is the reported HR.
inline HrEstimate estimate_hr(const std::vector<double>& signal, double fs) {
    const std::vector<double> filtered = butter_bandpass(signal, fs);
    HrEstimate est;
    est.hr_fft_bpm = estimate_hr_fft(filtered, fs);
    est.hr_bpm = est.hr_fft_bpm;
    const auto peaks = detect_peaks(filtered, fs);
    if (peaks.size() >= 2) est.hr_peak_bpm = peak_hr(peaks, fs);
    return est;
}

// ---- evaluation metrics -----------------------------------------------------

struct Metrics {
    double mae = 0.0;
    double rmse = 0.0;
    double mer = 0.0; // mean |error|/gt, in percent
    double std = 0.0; // standard deviation of the error, 1/(M-1)
    std::optional<double> r; // empty when either sequence has zero variance
};

inline Metrics metrics(const std::vector<double>& y_pre, const std::vector<double>& y_gt) {
    if (y_pre.size() != y_gt.size() || y_pre.empty())
        throw std::invalid_argument("metrics: need equal nonempty HR sequences");
    const std::size_t m = y_pre.size();
    Metrics out;
    double mean_err = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double e = y_pre[i] - y_gt[i];
        out.mae += std::abs(e);
        out.rmse += e * e;
        out.mer += std::abs(e) / y_gt[i];
        mean_err += e;
    }
    out.mae /= static_cast<double>(m);
    out.rmse = std::sqrt(out.rmse / static_cast<double>(m));
    out.mer = out.mer / static_cast<double>(m) * 100.0;
    mean_err /= static_cast<double>(m);
    if (m >= 2) {
        double ss = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            const double d = (y_pre[i] - y_gt[i]) - mean_err;
            ss += d * d;
        }
        out.std = std::sqrt(ss / static_cast<double>(m - 1));

        double mp = 0.0, mg = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            mp += y_pre[i];
            mg += y_gt[i];
        }
        mp /= static_cast<double>(m);
        mg /= static_cast<double>(m);
        double spg = 0.0, spp = 0.0, sgg = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            spg += (y_pre[i] - mp) * (y_gt[i] - mg);
            spp += (y_pre[i] - mp) * (y_pre[i] - mp);
            sgg += (y_gt[i] - mg) * (y_gt[i] - mg);
        }
        if (spp > 0.0 && sgg > 0.0) out.r = spg / (std::sqrt(spp) * std::sqrt(sgg));
    }
    return out;
}

struct HrReport {
    std::vector<double> y_pre; // one HR per video
    std::vector<double> y_gt;
    Metrics stats;
    std::size_t excluded_segments = 0;
};

}  // namespace dualtl
