#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "dualtl/rng.hpp"
#include "dualtl/roi_trace.hpp"

namespace dualtl {

/// Knobs for the synthetic physiology generator. The noise taxonomy covers
/// the usual rPPG disturbances: sensor noise, slow illumination drift, motion
/// steps, and per-ROI occlusion dropouts.
struct SynthConfig {
    std::uint64_t seed = 1;
    double fps = 30.0;
    double duration_s = 10.0;
    double hr_bpm = 72.0;
    std::optional<double> hr_end_bpm; // linear drift target when set
    std::size_t n_rois = 6;
    std::array<double, 3> pulse_amplitude = {0.4, 1.0, 0.3}; // G dominates
    std::array<double, 3> baseline_rgb = {152.0, 110.0, 92.0};
    double gaussian_sigma = 0.3;
    double illum_amplitude = 2.0;
    double illum_period_s = 7.0;
    double motion_spike_prob = 0.02;      // per frame
    double motion_spike_magnitude = 3.0;
    double occlusion_prob = 0.002;        // per (roi, frame) chance to start a dropout

    void validate() const {
        auto check_hr = [](double hr) {
            if (!(hr >= 45.0 && hr <= 150.0))
                throw std::invalid_argument("synth: hr outside [45,150] bpm");
        };
        check_hr(hr_bpm);
        if (hr_end_bpm) check_hr(*hr_end_bpm);
        if (!(fps >= 20.0 && fps <= 60.0)) throw std::invalid_argument("synth: fps outside [20,60]");
        if (!(duration_s > 0.0)) throw std::invalid_argument("synth: duration must be positive");
        if (n_rois < 1 || n_rois > 16) throw std::invalid_argument("synth: n_rois outside [1,16]");
        for (double a : pulse_amplitude)
            if (!(a >= 0.0 && a <= 0.05 * 255.0))
                throw std::invalid_argument("synth: pulse amplitude above 5% of full scale");
    }
};

/// Noise-free variant of a config, for oracle-grade corpora.
inline SynthConfig clean_config(SynthConfig cfg = {}) {
    cfg.gaussian_sigma = 0.0;
    cfg.illum_amplitude = 0.0;
    cfg.motion_spike_prob = 0.0;
    cfg.occlusion_prob = 0.0;
    return cfg;
}

/// Two-harmonic pulse wave, unit-normalized. The second harmonic keeps peak
/// detection honest compared to a bare sinusoid. With a drift target the
/// instantaneous frequency ramps linearly, i.e. the phase is its integral.
inline std::vector<double> generate_ppg(double hr_bpm, double fps, std::size_t n_samples,
                                        std::optional<double> hr_end_bpm = std::nullopt) {
    if (n_samples == 0) return {};
    const double pi = 3.14159265358979323846;
    const double f0 = hr_bpm / 60.0;
    const double f1 = (hr_end_bpm ? *hr_end_bpm : hr_bpm) / 60.0;
    const double dur = static_cast<double>(n_samples) / fps;
    std::vector<double> w(n_samples);
    double peak = 0.0;
    for (std::size_t i = 0; i < n_samples; ++i) {
        const double t = static_cast<double>(i) / fps;
        const double phase = 2.0 * pi * (f0 * t + (f1 - f0) * t * t / (2.0 * dur));
        w[i] = std::sin(phase) + 0.5 * std::sin(2.0 * phase + 0.8);
        peak = std::max(peak, std::abs(w[i]));
    }
    if (peak > 0.0)
        for (double& v : w) v /= peak;
    return w;
}

namespace detail {

// Fixed per-ROI texture so regions differ without extra RNG draws.
inline double roi_baseline_offset(std::size_t roi, std::size_t channel) {
    return static_cast<double>((roi * 7 + channel * 3) % 11) - 5.0;
}

inline double roi_pulse_gain(std::size_t roi) {
    return 0.8 + 0.1 * static_cast<double>((roi * 13) % 5);
}

}  // namespace detail

inline RoiTrace generate_trace(const SynthConfig& cfg) {
    cfg.validate();
    const auto frames = static_cast<std::size_t>(std::llround(cfg.duration_s * cfg.fps));
    if (frames == 0) throw std::invalid_argument("synth: zero frames");
    const std::vector<double> ppg = generate_ppg(cfg.hr_bpm, cfg.fps, frames, cfg.hr_end_bpm);

    std::mt19937_64 rng(derive_seed(cfg.seed, 0));
    const double pi = 3.14159265358979323846;
    const double illum_phase = uniform(rng, 0.0, 2.0 * pi);

    RoiTrace trace;
    trace.fps = cfg.fps;
    trace.n_rois = cfg.n_rois;
    trace.channel_means.resize(frames * cfg.n_rois * 3);
    trace.pixel_counts.assign(frames * cfg.n_rois, 0);
    trace.gt_ppg = ppg;
    trace.gt_hr_bpm = cfg.hr_end_bpm ? 0.5 * (cfg.hr_bpm + *cfg.hr_end_bpm) : cfg.hr_bpm;

    // Motion steps decay with a ~0.2 s time constant, shared across ROIs.
    const double decay = std::exp(-1.0 / (0.2 * cfg.fps));
    double spike = 0.0;
    std::vector<std::size_t> occluded_until(cfg.n_rois, 0);

    for (std::size_t f = 0; f < frames; ++f) {
        const double t = static_cast<double>(f) / cfg.fps;
        const double illum = cfg.illum_amplitude > 0.0
                                 ? cfg.illum_amplitude *
                                       std::sin(2.0 * pi * t / cfg.illum_period_s + illum_phase)
                                 : 0.0;
        spike *= decay;
        if (cfg.motion_spike_prob > 0.0 && uniform01(rng) < cfg.motion_spike_prob)
            spike += cfg.motion_spike_magnitude * uniform(rng, -1.0, 1.0);

        for (std::size_t r = 0; r < cfg.n_rois; ++r) {
            for (std::size_t c = 0; c < 3; ++c) {
                double v = cfg.baseline_rgb[c] + detail::roi_baseline_offset(r, c) +
                           cfg.pulse_amplitude[c] * detail::roi_pulse_gain(r) * ppg[f] + illum +
                           spike;
                if (cfg.gaussian_sigma > 0.0) v += normal(rng, 0.0, cfg.gaussian_sigma);
                trace.mean(f, r, c) = std::clamp(v, 0.0, 255.0);
            }
            if (cfg.occlusion_prob > 0.0 && uniform01(rng) < cfg.occlusion_prob) {
                const auto len = static_cast<std::size_t>(
                    std::llround(uniform(rng, 0.2, 1.0) * cfg.fps));
                occluded_until[r] = std::max(occluded_until[r], f + std::max<std::size_t>(len, 1));
            }
            trace.count(f, r) = f < occluded_until[r] ? 0 : static_cast<std::int64_t>(900 + 60 * r);
        }
    }
    trace.validate();
    return trace;
}

/// Per-video HR drawn uniformly in [50, 140] bpm from seeds derived off the
/// master seed, so corpora are reproducible and videos independent.
inline std::vector<SynthConfig> corpus_configs(std::size_t n_videos, const SynthConfig& base,
                                               std::uint64_t seed) {
    std::vector<SynthConfig> configs;
    configs.reserve(n_videos);
    for (std::size_t i = 0; i < n_videos; ++i) {
        SynthConfig cfg = base;
        std::mt19937_64 rng(derive_seed(seed, 2 * i));
        cfg.hr_bpm = uniform(rng, 50.0, 140.0);
        cfg.hr_end_bpm.reset();
        cfg.seed = derive_seed(seed, 2 * i + 1);
        configs.push_back(cfg);
    }
    return configs;
}

inline std::vector<RoiTrace> generate_corpus(std::size_t n_videos, const SynthConfig& base,
                                             std::uint64_t seed) {
    std::vector<RoiTrace> corpus;
    corpus.reserve(n_videos);
    for (const SynthConfig& cfg : corpus_configs(n_videos, base, seed))
        corpus.push_back(generate_trace(cfg));
    return corpus;
}

}  // namespace dualtl
