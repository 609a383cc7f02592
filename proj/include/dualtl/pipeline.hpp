#pragma once

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dualtl/baselines.hpp"
#include "dualtl/hrdsp.hpp"
#include "dualtl/model.hpp"
#include "dualtl/mstmap.hpp"
#include "dualtl/roi_trace.hpp"
#include "dualtl/synth.hpp"
#include "dualtl/tape.hpp"
#include "dualtl/trainer.hpp"

// Orchestration shared by the CLI and the test harness. Everything here works
// on explicit paths/configs and throws on failure; exit-code mapping lives in
// the CLI main. Artifacts embed only basenames so identical seeded runs in
// different directories stay byte-identical.

namespace dualtl {

namespace fs = std::filesystem;

inline std::string path_stem(const std::string& path) { return fs::path(path).stem().string(); }

// ---- synth ------------------------------------------------------------------

struct SynthOutputs {
    std::vector<std::string> trace_files;
    std::string manifest_file;
};

inline SynthOutputs cmd_synth(const std::string& out_dir, std::size_t n_videos,
                              std::uint64_t seed, const SynthConfig& base = {}) {
    if (n_videos == 0) throw std::invalid_argument("synth: need at least one video");
    fs::create_directories(out_dir);
    SynthOutputs out;
    nlohmann::json manifest;
    manifest["seed"] = seed;
    manifest["videos"] = nlohmann::json::array();
    const auto configs = corpus_configs(n_videos, base, seed);
    for (std::size_t i = 0; i < configs.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "video_%03zu.csv", i);
        const std::string path = (fs::path(out_dir) / name).string();
        const RoiTrace trace = generate_trace(configs[i]);
        save_trace(trace, path);
        out.trace_files.push_back(path);
        nlohmann::json entry;
        entry["file"] = name;
        entry["seed"] = configs[i].seed;
        entry["hr_bpm"] = configs[i].hr_bpm;
        manifest["videos"].push_back(entry);
    }
    out.manifest_file = (fs::path(out_dir) / "manifest.json").string();
    write_file_atomic(out.manifest_file, manifest.dump(2) + "\n");
    return out;
}

// ---- mstmap -----------------------------------------------------------------

/// One .mstm per segment window, named `<trace-stem>_<start-frame>.mstm`.
inline std::vector<std::string> cmd_mstmap(const std::vector<std::string>& trace_csvs,
                                           const std::string& out_dir, ColorSpace color_space,
                                           std::size_t segment_frames = 300, double stride_s = 0.5) {
    if (trace_csvs.empty()) throw std::invalid_argument("mstmap: no input traces");
    fs::create_directories(out_dir);
    std::vector<std::string> written;
    for (const std::string& csv : trace_csvs) {
        const RoiTrace trace = load_trace(csv);
        const RoiCombinationSet combos = enumerate_roi_combinations(trace.n_rois);
        const MstMap full = build_mstmap(trace, combos, color_space);
        const auto starts = segment_starts(trace.frame_count(), trace.fps, segment_frames, stride_s);
        if (starts.empty())
            std::cerr << "mstmap: warning: " << csv << " shorter than one segment, skipped\n";
        for (std::size_t start : starts) {
            const MstMap seg = minmax_normalize(crop_frames(full, start, segment_frames));
            const std::string name = path_stem(csv) + "_" + std::to_string(start) + ".mstm";
            const std::string path = (fs::path(out_dir) / name).string();
            save_mstmap(seg, path);
            written.push_back(path);
        }
    }
    return written;
}

// ---- dataset assembly -------------------------------------------------------

/// Splits `<trace-stem>_<start>.mstm` back into its parts.
inline std::pair<std::string, std::size_t> parse_mstm_name(const std::string& path) {
    const std::string stem = path_stem(path);
    const std::size_t us = stem.find_last_of('_');
    if (us == std::string::npos || us + 1 >= stem.size())
        throw std::runtime_error(path + ": expected <trace>_<start_frame>.mstm");
    const std::string digits = stem.substr(us + 1);
    for (char c : digits)
        if (c < '0' || c > '9')
            throw std::runtime_error(path + ": expected <trace>_<start_frame>.mstm");
    return {stem.substr(0, us), static_cast<std::size_t>(std::stoull(digits))};
}

inline std::vector<std::string> list_files(const std::string& dir, const std::string& ext) {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ext)
            files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    return files;
}

/// Loads every .mstm under data_dir and pairs it with the ground-truth slice
/// of its source trace (same directory). Video ids follow sorted trace-stem
/// order.
inline Dataset load_dataset(const std::string& data_dir) {
    const auto mstm_files = list_files(data_dir, ".mstm");
    if (mstm_files.empty()) throw std::runtime_error("no .mstm files under " + data_dir);
    std::map<std::string, RoiTrace> traces;
    Dataset dataset;
    for (const std::string& path : mstm_files) {
        const auto [trace_stem, start] = parse_mstm_name(path);
        auto it = traces.find(trace_stem);
        if (it == traces.end()) {
            const std::string csv = (fs::path(data_dir) / (trace_stem + ".csv")).string();
            it = traces.emplace(trace_stem, load_trace(csv)).first;
        }
        const RoiTrace& trace = it->second;
        SegmentSample sample;
        sample.map = load_mstmap(path);
        if (trace.gt_ppg.empty())
            throw std::runtime_error(path + ": source trace has no ground-truth PPG");
        if (start + sample.map.frames > trace.gt_ppg.size())
            throw std::runtime_error(path + ": segment window exceeds the source trace");
        sample.gt.samples.assign(trace.gt_ppg.begin() + static_cast<std::ptrdiff_t>(start),
                                 trace.gt_ppg.begin() + static_cast<std::ptrdiff_t>(start + sample.map.frames));
        sample.gt.fs = trace.fps;
        dataset.push_back(std::move(sample));
    }
    std::vector<std::string> stems;
    for (const auto& [stem, trace] : traces) stems.push_back(stem);
    std::sort(stems.begin(), stems.end());
    std::size_t i = 0;
    for (const std::string& path : mstm_files) {
        const auto [trace_stem, start] = parse_mstm_name(path);
        dataset[i++].video = static_cast<std::size_t>(
            std::find(stems.begin(), stems.end(), trace_stem) - stems.begin());
    }
    return dataset;
}

// ---- train ------------------------------------------------------------------

struct TrainOutputs {
    std::string checkpoint_file;
    std::string state_file;
    std::string log_file;
    double final_mean_loss = 0.0;
    std::uint64_t steps = 0;
    std::size_t skipped_segments = 0;
};

inline TrainOutputs cmd_train(const std::string& data_dir, const ModelConfig& model_cfg,
                              const TrainConfig& train_cfg, const std::string& out_checkpoint,
                              bool resume = false, std::ostream& log = std::cout) {
    log << "model config: " << to_json(model_cfg).dump() << "\n";
    log << "train config: " << to_json(train_cfg).dump() << "\n";
    const Dataset dataset = load_dataset(data_dir);

    TrainOutputs out;
    out.checkpoint_file = out_checkpoint;
    out.state_file = out_checkpoint + ".state";
    out.log_file = out_checkpoint + ".loss.csv";

    std::optional<ModelParams> resumed;
    std::optional<AdamState> resumed_state;
    if (resume) {
        resumed = load_checkpoint(out_checkpoint);
        if (to_json(resumed->config).dump() != to_json(model_cfg).dump())
            throw std::runtime_error("resume: checkpoint config differs from the requested config");
        resumed_state = load_train_state(*resumed, out.state_file);
        log << "resuming from step " << resumed_state->step << "\n";
    }

    const EpochCallback on_epoch = [&](const EpochLog& row, const ModelParams& params,
                                       const AdamState&, bool want_checkpoint) {
        log << "epoch " << row.epoch << " step " << row.step << " mean_loss " << row.mean_loss
            << "\n";
        if (want_checkpoint)
            save_checkpoint(params, out_checkpoint + ".ep" + std::to_string(row.epoch));
    };
    TrainResult result = train(dataset, model_cfg, train_cfg, on_epoch,
                               resumed ? &*resumed : nullptr,
                               resumed_state ? &*resumed_state : nullptr);
    save_checkpoint(result.params, out.checkpoint_file);
    save_train_state(result.adam, model_cfg, out.state_file);
    write_file_atomic(out.log_file, loss_log_csv(result.log));
    out.final_mean_loss = result.log.back().mean_loss;
    out.steps = result.adam.step;
    out.skipped_segments = result.skipped_segments;
    return out;
}

// ---- infer ------------------------------------------------------------------

/// Predicted waveform per .mstm, one sample per line, `<stem>_pred.csv`.
inline std::vector<std::string> cmd_infer(const std::string& checkpoint,
                                          const std::vector<std::string>& mstm_files,
                                          const std::string& out_dir) {
    if (mstm_files.empty()) throw std::invalid_argument("infer: no input maps");
    const ModelParams params = load_checkpoint(checkpoint);
    fs::create_directories(out_dir);
    std::vector<std::string> written;
    for (const std::string& path : mstm_files) {
        const MstMap map = load_mstmap(path);
        const RppgSignal pred = dual_forward(map, params);
        std::string csv;
        for (double v : pred.samples) {
            csv += format_double(v);
            csv += '\n';
        }
        const std::string out_path = (fs::path(out_dir) / (path_stem(path) + "_pred.csv")).string();
        write_file_atomic(out_path, csv);
        written.push_back(out_path);
    }
    return written;
}

// ---- eval -------------------------------------------------------------------

inline nlohmann::json report_to_json(const HrReport& report) {
    nlohmann::json j;
    j["mae"] = report.stats.mae;
    j["rmse"] = report.stats.rmse;
    j["mer"] = report.stats.mer;
    j["std"] = report.stats.std;
    if (report.stats.r)
        j["r"] = *report.stats.r;
    else
        j["r"] = nullptr;
    j["excluded_segments"] = report.excluded_segments;
    j["videos"] = report.y_pre.size();
    return j;
}

inline HrReport cmd_eval(const std::string& checkpoint, const std::string& data_dir,
                         const std::string& out_json) {
    const ModelParams params = load_checkpoint(checkpoint);
    const Dataset dataset = load_dataset(data_dir);
    const HrReport report = evaluate(dataset, params, 0.0);
    write_file_atomic(out_json, report_to_json(report).dump(2) + "\n");
    return report;
}

// ---- baseline ---------------------------------------------------------------

/// Video-level HR per trace from the chosen classical extractor; ground truth
/// comes from the stored PPG (or the sidecar HR when no waveform exists).
inline HrReport cmd_baseline(BaselineMethod method, const std::vector<std::string>& trace_csvs,
                             const std::string& out_dir) {
    if (trace_csvs.empty()) throw std::invalid_argument("baseline: no input traces");
    fs::create_directories(out_dir);
    HrReport report;
    for (const std::string& csv : trace_csvs) {
        const RoiTrace trace = load_trace(csv);
        const RppgSignal sig = run_baseline(method, trace);
        std::string lines;
        for (double v : sig.samples) {
            lines += format_double(v);
            lines += '\n';
        }
        const std::string out_path =
            (fs::path(out_dir) / (path_stem(csv) + "_" + to_string(method) + ".csv")).string();
        write_file_atomic(out_path, lines);

        double hr_pre, hr_gt;
        try {
            hr_pre = estimate_hr(sig.samples, trace.fps).hr_bpm;
            if (!trace.gt_ppg.empty())
                hr_gt = estimate_hr(trace.gt_ppg, trace.fps).hr_bpm;
            else if (trace.gt_hr_bpm)
                hr_gt = *trace.gt_hr_bpm;
            else
                throw std::runtime_error("no ground truth");
        } catch (const std::exception&) {
            ++report.excluded_segments;
            continue;
        }
        report.y_pre.push_back(hr_pre);
        report.y_gt.push_back(hr_gt);
    }
    if (report.y_pre.empty()) throw std::runtime_error("baseline: every trace failed HR estimation");
    report.stats = metrics(report.y_pre, report.y_gt);
    write_file_atomic((fs::path(out_dir) / (to_string(method) + "_report.json")).string(),
                      report_to_json(report).dump(2) + "\n");
    return report;
}

// ---- selfcheck --------------------------------------------------------------

/// Fast built-in verification: primitive gradient checks, a small full-model
/// gradient check, map-construction and filter-response oracles, and (when
/// given) checkpoint readability. Returns true when everything passes.
inline bool cmd_selfcheck(std::ostream& out = std::cout,
                          const std::optional<std::string>& checkpoint = std::nullopt) {
    bool ok = true;
    auto check = [&](const std::string& name, bool pass, const std::string& detail = "") {
        out << (pass ? "[ok]   " : "[FAIL] ") << name;
        if (!detail.empty()) out << " (" << detail << ")";
        out << "\n";
        ok = ok && pass;
    };

    try {
        {
            std::mt19937_64 rng(7);
            Tensor x({3, 4});
            for (double& v : x.data) v = normal(rng);
            const double err = grad_check(
                [](Tape& t, Var v) { return t.mean_all(t.gelu(t.softmax_rows(v))); }, x, 1e-5);
            check("primitive gradients (softmax+gelu)", err < 1e-5, "rel err " + std::to_string(err));
        }
        {
            ModelConfig cfg;
            cfg.n_combinations = 7;
            cfg.segment_frames = 12;
            cfg.channels = 3;
            cfg.embed_dim = 8;
            cfg.layers = 1;
            cfg.heads = 2;
            const ModelParams params = init_params(cfg, 11);
            MstMap map(cfg.n_combinations, cfg.channels, cfg.segment_frames, ColorSpace::RGB);
            map.normalized = true;
            std::mt19937_64 rng(13);
            for (double& v : map.values) v = uniform(rng, 0.0, 255.0);
            Tensor target({cfg.segment_frames});
            for (double& v : target.data) v = normal(rng);
            const double err = grad_check(
                [&](Tape& t, Var v) {
                    ParamVars vars = register_params(t, params, false, 0, v);
                    return t.pearson_loss(dual_forward_on(t, map, vars, cfg), target);
                },
                params.embed_spatial, 1e-4);
            check("full-model gradient (embedding)", err < 1e-3, "rel err " + std::to_string(err));
        }
        {
            // Weighted-mean construction against the direct formula.
            std::mt19937_64 rng(23);
            RoiTrace trace;
            trace.fps = 30.0;
            trace.n_rois = 3;
            const std::size_t frames = 5;
            trace.channel_means.resize(frames * 3 * 3);
            trace.pixel_counts.resize(frames * 3);
            for (std::size_t f = 0; f < frames; ++f)
                for (std::size_t r = 0; r < 3; ++r) {
                    trace.count(f, r) = 1 + static_cast<std::int64_t>(uniform_below(rng, 50));
                    for (std::size_t c = 0; c < 3; ++c) trace.mean(f, r, c) = uniform(rng, 0.0, 255.0);
                }
            const MstMap map = build_mstmap(trace, enumerate_roi_combinations(3), ColorSpace::RGB);
            double worst = 0.0;
            const auto combos = enumerate_roi_combinations(3);
            for (std::size_t k = 0; k < combos.masks.size(); ++k)
                for (std::size_t f = 0; f < frames; ++f)
                    for (std::size_t c = 0; c < 3; ++c) {
                        double num = 0.0, den = 0.0;
                        for (std::size_t r = 0; r < 3; ++r)
                            if (combos.masks[k] & (1u << r)) {
                                num += trace.mean(f, r, c) * static_cast<double>(trace.count(f, r));
                                den += static_cast<double>(trace.count(f, r));
                            }
                        worst = std::max(worst, std::abs(map.at(k, c, f) - num / den));
                    }
            check("map construction vs weighted mean", worst < 1e-9);
        }
        {
            const Biquad q = butter_bandpass_coeffs(30.0, kHrBandLowHz, kHrBandHighHz);
            const double stop = biquad_gain_at(q, 30.0, 0.1);
            const double pass = biquad_gain_at(q, 30.0, 1.37);
            check("filter response", stop < 0.12 && pass > 0.9,
                  "gain(0.1Hz) " + std::to_string(stop) + ", gain(1.37Hz) " + std::to_string(pass));
        }
        {
            const auto yuv = rgb_to_yuv(255.0, 0.0, 0.0);
            const bool pass = std::abs(yuv[0] - 76.245) < 1e-9 && std::abs(yuv[1] - 84.9723) < 1e-3 &&
                              std::abs(yuv[2] - 255.0) < 1e-9;
            check("color conversion", pass);
        }
        {
            Tape t;
            Var s = t.leaf(Tensor::vector_of({1.0, 2.0, 3.0}));
            const double same = t.value(t.pearson_loss(s, Tensor::vector_of({1.0, 2.0, 3.0})))[0];
            const double anti = t.value(t.pearson_loss(s, Tensor::vector_of({3.0, 2.0, 1.0})))[0];
            check("pearson loss endpoints", std::abs(same) < 1e-12 && std::abs(anti - 2.0) < 1e-12);
        }
        if (checkpoint) {
            try {
                const ModelParams params = load_checkpoint(*checkpoint);
                check("checkpoint readable", true, std::to_string(count_scalars(params)) + " scalars");
            } catch (const std::exception& e) {
                check("checkpoint readable", false, e.what());
            }
        }
    } catch (const std::exception& e) {
        check("selfcheck aborted", false, e.what());
    }
    out << (ok ? "selfcheck: all checks passed\n" : "selfcheck: FAILURES\n");
    return ok;
}

}  // namespace dualtl
