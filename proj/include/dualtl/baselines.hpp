#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualtl/hrdsp.hpp"
#include "dualtl/model.hpp"
#include "dualtl/roi_trace.hpp"

namespace dualtl {

enum class BaselineMethod { GREEN, CHROM, POS };

inline std::string to_string(BaselineMethod m) {
    switch (m) {
        case BaselineMethod::GREEN: return "green";
        case BaselineMethod::CHROM: return "chrom";
        case BaselineMethod::POS: return "pos";
    }
    throw std::logic_error("bad baseline method");
}

inline BaselineMethod parse_baseline_method(const std::string& s) {
    if (s == "green") return BaselineMethod::GREEN;
    if (s == "chrom") return BaselineMethod::CHROM;
    if (s == "pos") return BaselineMethod::POS;
    throw std::invalid_argument("baseline method must be green|chrom|pos, got '" + s + "'");
}

namespace detail {

/// Pixel-count-weighted mean over the union of all base ROIs, per frame and
/// channel; fully occluded frames hold the previous value.
inline std::vector<std::array<double, 3>> whole_face_means(const RoiTrace& trace) {
    trace.validate();
    const std::size_t frames = trace.frame_count();
    std::vector<std::array<double, 3>> rgb(frames);
    std::array<double, 3> prev = {0.0, 0.0, 0.0};
    for (std::size_t f = 0; f < frames; ++f) {
        double wsum[3] = {0.0, 0.0, 0.0};
        double total = 0.0;
        for (std::size_t r = 0; r < trace.n_rois; ++r) {
            const double cnt = static_cast<double>(trace.count(f, r));
            total += cnt;
            for (std::size_t c = 0; c < 3; ++c) wsum[c] += trace.mean(f, r, c) * cnt;
        }
        if (total > 0.0)
            for (std::size_t c = 0; c < 3; ++c) rgb[f][c] = wsum[c] / total;
        else
            rgb[f] = prev;
        prev = rgb[f];
    }
    return rgb;
}

inline double window_mean(const std::vector<double>& x) {
    double s = 0.0;
    for (double v : x) s += v;
    return s / static_cast<double>(x.size());
}

inline double window_std(const std::vector<double>& x) {
    const double mu = window_mean(x);
    double s = 0.0;
    for (double v : x) s += (v - mu) * (v - mu);
    return std::sqrt(s / static_cast<double>(x.size()));
}

/// Overlap-add driver shared by CHROM and POS: 1.6 s Hann windows at 50%
/// overlap. `project` maps the window's RGB samples to its pulse estimate and
/// receives `context` extra real samples on each side where the trace has
/// them, so in-window filtering can settle on actual signal instead of edge
/// padding; `lead` tells it where the window proper begins and the returned
/// pulse covers only the `win` central samples. Accumulated weights
/// renormalize the seams; samples never covered with nonzero weight (the Hann
/// endpoints of a lone window) stay zero.
template <class ProjectFn>
std::vector<double> overlap_add(const std::vector<std::array<double, 3>>& rgb, double fps,
                                std::size_t context, ProjectFn&& project) {
    const std::size_t n = rgb.size();
    const std::size_t win = std::min<std::size_t>(
        n, std::max<std::size_t>(2, static_cast<std::size_t>(std::llround(1.6 * fps))));
    const std::size_t hop = std::max<std::size_t>(1, win / 2);
    std::vector<std::size_t> starts;
    for (std::size_t s = 0; s + win <= n; s += hop) starts.push_back(s);
    if (starts.empty() || starts.back() + win < n) starts.push_back(n - win);

    const double pi = 3.14159265358979323846;
    std::vector<double> out(n, 0.0), weight(n, 0.0);
    for (std::size_t s : starts) {
        const std::size_t lead = std::min(context, s);
        const std::size_t ext = lead + win + std::min(context, n - s - win);
        std::vector<double> r(ext), g(ext), b(ext);
        for (std::size_t i = 0; i < ext; ++i) {
            r[i] = rgb[s - lead + i][0];
            g[i] = rgb[s - lead + i][1];
            b[i] = rgb[s - lead + i][2];
        }
        const std::vector<double> pulse = project(r, g, b, lead, win);
        for (std::size_t i = 0; i < win; ++i) {
            const double w =
                0.5 * (1.0 - std::cos(2.0 * pi * static_cast<double>(i) / static_cast<double>(win)));
            out[s + i] += w * pulse[i];
            weight[s + i] += w;
        }
    }
    for (std::size_t i = 0; i < n; ++i)
        if (weight[i] > 0.0) out[i] /= weight[i];
    return out;
}

/// Divide by the mean of the window proper ([lead, lead+win)); context
/// samples are scaled by the same constant. A zero-mean channel cannot be
/// normalized.
inline std::vector<double> normalize_by_mean(const std::vector<double>& x, std::size_t lead,
                                             std::size_t win, const char* what) {
    double mu = 0.0;
    for (std::size_t i = 0; i < win; ++i) mu += x[lead + i];
    mu /= static_cast<double>(win);
    if (!(std::abs(mu) > 1e-12))
        throw std::domain_error(std::string(what) + ": zero-mean channel window");
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / mu;
    return out;
}

}  // namespace detail

/// Whole-face G channel, mean-subtracted.
inline RppgSignal green(const RoiTrace& trace) {
    const auto rgb = detail::whole_face_means(trace);
    RppgSignal sig;
    sig.fs = trace.fps;
    sig.samples.resize(rgb.size());
    double mean = 0.0;
    for (const auto& v : rgb) mean += v[1];
    mean /= static_cast<double>(rgb.empty() ? 1 : rgb.size());
    for (std::size_t i = 0; i < rgb.size(); ++i) sig.samples[i] = rgb[i][1] - mean;
    return sig;
}

/// Broad pulse band for the chrominance projection's X/Y filtering. Kept
/// wider than the HR search band on purpose: the HR estimator band-filters
/// its input again, and compounding two passes of the shallow first-order
/// response over the same narrow band can depress a fundamental near the low
/// band edge below its own second harmonic, doubling the reported rate for
/// slow pulses.
inline constexpr double kChromBandLowHz = 0.5;
inline constexpr double kChromBandHighHz = 4.0;

/// Chrominance projection: X = 3Rn - 2Gn, Y = 1.5Rn + Gn - 1.5Bn on
/// mean-normalized windows, both band-filtered, combined as Xf - alpha*Yf
/// with alpha = sigma(Xf)/sigma(Yf). Identical X/Y windows (common-mode
/// input) cancel exactly. Filtering runs over the context-extended window
/// (half a window of real samples each side) so the short-window filter
/// transients fall outside the samples that are kept.
inline RppgSignal chrom(const RoiTrace& trace) {
    const auto rgb = detail::whole_face_means(trace);
    const std::size_t context = static_cast<std::size_t>(std::llround(0.8 * trace.fps));
    RppgSignal sig;
    sig.fs = trace.fps;
    sig.samples = detail::overlap_add(rgb, trace.fps, context, [&](const std::vector<double>& r,
                                                                   const std::vector<double>& g,
                                                                   const std::vector<double>& b,
                                                                   std::size_t lead,
                                                                   std::size_t win) {
        const auto rn = detail::normalize_by_mean(r, lead, win, "chrom");
        const auto gn = detail::normalize_by_mean(g, lead, win, "chrom");
        const auto bn = detail::normalize_by_mean(b, lead, win, "chrom");
        const std::size_t ext = r.size();
        std::vector<double> xs(ext), ys(ext);
        for (std::size_t i = 0; i < ext; ++i) {
            xs[i] = 3.0 * rn[i] - 2.0 * gn[i];
            ys[i] = 1.5 * rn[i] + gn[i] - 1.5 * bn[i];
        }
        const std::vector<double> xfe = butter_bandpass(xs, trace.fps, kChromBandLowHz, kChromBandHighHz);
        const std::vector<double> yfe = butter_bandpass(ys, trace.fps, kChromBandLowHz, kChromBandHighHz);
        const std::vector<double> xf(xfe.begin() + static_cast<std::ptrdiff_t>(lead),
                                     xfe.begin() + static_cast<std::ptrdiff_t>(lead + win));
        const std::vector<double> yf(yfe.begin() + static_cast<std::ptrdiff_t>(lead),
                                     yfe.begin() + static_cast<std::ptrdiff_t>(lead + win));
        const double sx = detail::window_std(xf);
        const double sy = detail::window_std(yf);
        std::vector<double> pulse(win, 0.0);
        if (sy < 1e-12) {
            if (sx >= 1e-12)
                throw std::domain_error("chrom: degenerate window (sigma(Yf) = 0, sigma(Xf) > 0)");
            return pulse; // both branches dead: no pulse information here
        }
        const double alpha = sx / sy;
        for (std::size_t i = 0; i < win; ++i) pulse[i] = xf[i] - alpha * yf[i];
        return pulse;
    });
    return sig;
}

/// Plane-orthogonal-to-skin projection: s1 = Gn - Bn, s2 = Gn + Bn - 2Rn on
/// mean-normalized windows, h = s1 + (sigma(s1)/sigma(s2))*s2, mean-removed.
inline RppgSignal pos(const RoiTrace& trace) {
    const auto rgb = detail::whole_face_means(trace);
    RppgSignal sig;
    sig.fs = trace.fps;
    sig.samples = detail::overlap_add(rgb, trace.fps, 0, [&](const std::vector<double>& r,
                                                             const std::vector<double>& g,
                                                             const std::vector<double>& b,
                                                             std::size_t /*lead*/,
                                                             std::size_t win) {
        const auto rn = detail::normalize_by_mean(r, 0, win, "pos");
        const auto gn = detail::normalize_by_mean(g, 0, win, "pos");
        const auto bn = detail::normalize_by_mean(b, 0, win, "pos");
        std::vector<double> s1(win), s2(win);
        for (std::size_t i = 0; i < win; ++i) {
            s1[i] = gn[i] - bn[i];
            s2[i] = gn[i] + bn[i] - 2.0 * rn[i];
        }
        const double sd1 = detail::window_std(s1);
        const double sd2 = detail::window_std(s2);
        std::vector<double> pulse(win, 0.0);
        if (sd2 < 1e-12) {
            if (sd1 >= 1e-12)
                throw std::domain_error("pos: degenerate window (sigma(s2) = 0, sigma(s1) > 0)");
            return pulse;
        }
        const double tune = sd1 / sd2;
        double mu = 0.0;
        for (std::size_t i = 0; i < win; ++i) {
            pulse[i] = s1[i] + tune * s2[i];
            mu += pulse[i];
        }
        mu /= static_cast<double>(win);
        for (double& v : pulse) v -= mu;
        return pulse;
    });
    return sig;
}

inline RppgSignal run_baseline(BaselineMethod method, const RoiTrace& trace) {
    switch (method) {
        case BaselineMethod::GREEN: return green(trace);
        case BaselineMethod::CHROM: return chrom(trace);
        case BaselineMethod::POS: return pos(trace);
    }
    throw std::logic_error("bad baseline method");
}

}  // namespace dualtl
