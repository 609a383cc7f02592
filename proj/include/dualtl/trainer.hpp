#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dualtl/hrdsp.hpp"
#include "dualtl/model.hpp"
#include "dualtl/rng.hpp"

namespace dualtl {

struct TrainConfig {
    double learning_rate = 1e-4;
    std::size_t batch_size = 16; // full-scale training runs 128; desk runs default lower
    std::size_t epochs = 10;
    std::uint64_t seed = 1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t checkpoint_every = 0; // epochs between scheduled checkpoints; 0 = final only

    void validate() const {
        if (!(learning_rate > 0.0) || batch_size == 0 || epochs == 0)
            throw std::invalid_argument("train config: hyperparameters must be positive");
        if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0 && adam_eps > 0.0))
            throw std::invalid_argument("train config: bad Adam constants");
    }
};

inline nlohmann::json to_json(const TrainConfig& cfg) {
    nlohmann::json j;
    j["learning_rate"] = cfg.learning_rate;
    j["batch_size"] = cfg.batch_size;
    j["epochs"] = cfg.epochs;
    j["seed"] = cfg.seed;
    j["beta1"] = cfg.beta1;
    j["beta2"] = cfg.beta2;
    j["adam_eps"] = cfg.adam_eps;
    j["checkpoint_every"] = cfg.checkpoint_every;
    return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("train config: expected a JSON object");
    static const char* known[] = {"learning_rate", "batch_size", "epochs",         "seed",
                                  "beta1",         "beta2",      "adam_eps",       "checkpoint_every"};
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || item.key() == k;
        if (!ok) throw std::invalid_argument("train config: unknown key '" + item.key() + "'");
    }
    TrainConfig cfg;
    if (j.contains("learning_rate")) cfg.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<std::size_t>();
    if (j.contains("epochs")) cfg.epochs = j.at("epochs").get<std::size_t>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("beta1")) cfg.beta1 = j.at("beta1").get<double>();
    if (j.contains("beta2")) cfg.beta2 = j.at("beta2").get<double>();
    if (j.contains("adam_eps")) cfg.adam_eps = j.at("adam_eps").get<double>();
    if (j.contains("checkpoint_every")) cfg.checkpoint_every = j.at("checkpoint_every").get<std::size_t>();
    cfg.validate();
    return cfg;
}

/// One training/eval unit: a normalized map plus its aligned ground truth.
struct SegmentSample {
    MstMap map;
    RppgSignal gt;
    std::size_t video = 0;
};

using Dataset = std::vector<SegmentSample>;

/// Linear resampling to n_out samples over the same time span; aligns ground
/// truth recorded at a different rate than the video.
inline std::vector<double> resample_linear(const std::vector<double>& x, std::size_t n_out) {
    if (x.empty() || n_out == 0) throw std::invalid_argument("resample_linear: empty request");
    std::vector<double> out(n_out);
    if (x.size() == 1 || n_out == 1) {
        for (double& v : out) v = x[0];
        return out;
    }
    const double step = static_cast<double>(x.size() - 1) / static_cast<double>(n_out - 1);
    for (std::size_t i = 0; i < n_out; ++i) {
        const double pos = static_cast<double>(i) * step;
        const auto lo = std::min(static_cast<std::size_t>(pos), x.size() - 2);
        out[i] = x[lo] + (pos - static_cast<double>(lo)) * (x[lo + 1] - x[lo]);
    }
    return out;
}

struct AdamState {
    ParamPack<Tensor> m, v;
    std::uint64_t step = 0;

    static AdamState zeros_like(const ModelParams& params) {
        AdamState s;
        const ModelConfig& cfg = params.config;
        size_pack(s.m, cfg);
        size_pack(s.v, cfg);
        visit_params(cfg.layers, cfg.heads,
                     [](const std::string&, ParamKind, const Tensor& p, Tensor& m, Tensor& v) {
                         m = Tensor(p.shape);
                         v = Tensor(p.shape);
                     },
                     params, s.m, s.v);
        return s;
    }
};

/// Standard Adam with bias correction. Gradients must be finite; a non-finite
/// entry aborts the step with the offending tensor named.
inline void adam_step(ModelParams& params, const ParamPack<Tensor>& grads, AdamState& state,
                      const TrainConfig& cfg) {
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    visit_params(params.config.layers, params.config.heads,
                 [&](const std::string& name, ParamKind, Tensor& p, const Tensor& g, Tensor& m,
                     Tensor& v) {
                     if (!p.same_shape(g))
                         throw std::invalid_argument("adam_step: gradient shape mismatch for " + name);
                     for (std::size_t i = 0; i < p.numel(); ++i) {
                         const double gi = g[i];
                         if (!std::isfinite(gi))
                             throw std::runtime_error("adam_step: non-finite gradient in " + name);
                         m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
                         v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
                         const double mhat = m[i] / bc1;
                         const double vhat = v[i] / bc2;
                         p[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
                     }
                 },
                 params, grads, state.m, state.v);
}

struct EpochLog {
    std::size_t epoch = 0; // 1-based
    std::uint64_t step = 0; // global optimizer steps completed
    double mean_loss = 0.0;
};

struct TrainResult {
    ModelParams params;
    AdamState adam;
    std::vector<EpochLog> log;
    std::size_t skipped_segments = 0; // constant-ground-truth segments dropped up front
};

/// Called after every epoch; non-empty checkpoint_every in the config decides
/// when the trainer also asks for a checkpoint write.
using EpochCallback =
    std::function<void(const EpochLog&, const ModelParams&, const AdamState&, bool want_checkpoint)>;

namespace detail {

inline bool constant_signal(const std::vector<double>& x) {
    for (double v : x)
        if (v != x.front()) return false;
    return true;
}

}  // namespace detail

/// Seeded mini-batch training. Per-epoch shuffles, batches of cfg.batch_size
/// (last partial batch kept), per-batch loss = mean negative Pearson over the
/// batch. Deterministic for a fixed seed, platform, and build.
inline TrainResult train(const Dataset& dataset, const ModelConfig& model_cfg,
                         const TrainConfig& train_cfg, const EpochCallback& on_epoch = {},
                         ModelParams* resume_params = nullptr, AdamState* resume_state = nullptr) {
    model_cfg.validate();
    train_cfg.validate();
    if (dataset.empty()) throw std::invalid_argument("train: empty dataset");

    std::vector<std::size_t> usable;
    std::size_t skipped = 0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const SegmentSample& s = dataset[i];
        if (s.map.combos != model_cfg.n_combinations || s.map.channels != model_cfg.channels ||
            s.map.frames != model_cfg.segment_frames)
            throw std::invalid_argument("train: segment " + std::to_string(i) +
                                        " does not match the model config");
        if (s.gt.samples.size() != model_cfg.segment_frames)
            throw std::invalid_argument("train: segment " + std::to_string(i) +
                                        " ground truth length != T");
        if (detail::constant_signal(s.gt.samples)) {
            std::cerr << "train: warning: skipping segment " << i
                      << " with constant ground truth\n";
            ++skipped;
        } else {
            usable.push_back(i);
        }
    }
    if (usable.empty()) throw std::runtime_error("train: nothing trainable (all ground truth constant)");

    TrainResult result;
    result.params = resume_params ? *resume_params : init_params(model_cfg, train_cfg.seed);
    result.adam = resume_state ? *resume_state : AdamState::zeros_like(result.params);
    result.skipped_segments = skipped;

    ParamPack<Tensor> grads;
    size_pack(grads, model_cfg);

    for (std::size_t epoch = 1; epoch <= train_cfg.epochs; ++epoch) {
        std::mt19937_64 shuffle_rng(derive_seed(train_cfg.seed, 0x5ffe + epoch));
        std::vector<std::size_t> order = usable;
        shuffle_indices(order, shuffle_rng);

        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += train_cfg.batch_size) {
            const std::size_t end = std::min(begin + train_cfg.batch_size, order.size());
            Tape tape;
            ParamVars vars = register_params(tape, result.params);
            Var total{};
            for (std::size_t bi = begin; bi < end; ++bi) {
                const SegmentSample& s = dataset[order[bi]];
                Var pred = dual_forward_on(tape, s.map, vars, model_cfg);
                Var loss = tape.pearson_loss(pred, Tensor::vector_of(s.gt.samples));
                total = bi == begin ? loss : tape.add(total, loss);
            }
            Var batch_loss = tape.scale(total, 1.0 / static_cast<double>(end - begin));
            const double loss_value = tape.value(batch_loss)[0];
            if (!std::isfinite(loss_value)) throw std::runtime_error("train: non-finite loss");
            tape.backward(batch_loss);

            visit_params(model_cfg.layers, model_cfg.heads,
                         [&](const std::string&, ParamKind, const Var& v, Tensor& g,
                             const Tensor& p) {
                             g = tape.grad(v);
                             // Parameters outside the active path (ablated
                             // branch) never join the graph; treat as zero.
                             if (g.data.empty()) g = Tensor(p.shape);
                         },
                         vars, grads, result.params);
            adam_step(result.params, grads, result.adam, train_cfg);
            loss_sum += loss_value;
            ++batches;
        }

        EpochLog row;
        row.epoch = epoch;
        row.step = result.adam.step;
        row.mean_loss = loss_sum / static_cast<double>(batches);
        result.log.push_back(row);
        if (on_epoch) {
            const bool want_ckpt = train_cfg.checkpoint_every > 0 &&
                                   epoch % train_cfg.checkpoint_every == 0 &&
                                   epoch != train_cfg.epochs;
            on_epoch(row, result.params, result.adam, want_ckpt);
        }
    }
    return result;
}

inline std::string loss_log_csv(const std::vector<EpochLog>& log) {
    std::string out = "epoch,step,mean_loss\n";
    for (const EpochLog& row : log) {
        out += std::to_string(row.epoch);
        out += ',';
        out += std::to_string(row.step);
        out += ',';
        out += format_double(row.mean_loss);
        out += '\n';
    }
    return out;
}

// ---- evaluation -------------------------------------------------------------

/// Per-segment signals -> per-video HR pairs -> metrics. Segments whose HR
/// estimation fails (on either side) are excluded and counted.
inline HrReport evaluate_signals(const std::vector<RppgSignal>& preds,
                                 const std::vector<RppgSignal>& gts,
                                 const std::vector<std::size_t>& videos) {
    if (preds.size() != gts.size() || preds.size() != videos.size())
        throw std::invalid_argument("evaluate: mismatched arrays");
    HrReport report;
    std::vector<std::size_t> ids;
    std::vector<double> pre_sum, gt_sum;
    std::vector<std::size_t> counts;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        double hr_pre, hr_gt;
        try {
            hr_pre = estimate_hr(preds[i].samples, preds[i].fs).hr_bpm;
            hr_gt = estimate_hr(gts[i].samples, gts[i].fs).hr_bpm;
        } catch (const std::exception&) {
            ++report.excluded_segments;
            continue;
        }
        std::size_t slot = ids.size();
        for (std::size_t k = 0; k < ids.size(); ++k)
            if (ids[k] == videos[i]) slot = k;
        if (slot == ids.size()) {
            ids.push_back(videos[i]);
            pre_sum.push_back(0.0);
            gt_sum.push_back(0.0);
            counts.push_back(0);
        }
        pre_sum[slot] += hr_pre;
        gt_sum[slot] += hr_gt;
        counts[slot] += 1;
    }
    if (ids.empty()) throw std::runtime_error("evaluate: every segment failed HR estimation");
    for (std::size_t k = 0; k < ids.size(); ++k) {
        report.y_pre.push_back(pre_sum[k] / static_cast<double>(counts[k]));
        report.y_gt.push_back(gt_sum[k] / static_cast<double>(counts[k]));
    }
    report.stats = metrics(report.y_pre, report.y_gt);
    return report;
}

inline HrReport evaluate(const Dataset& dataset, const ModelParams& params, double fs) {
    std::vector<RppgSignal> preds, gts;
    std::vector<std::size_t> videos;
    preds.reserve(dataset.size());
    for (const SegmentSample& s : dataset) {
        RppgSignal pred = dual_forward(s.map, params, fs);
        pred.fs = s.gt.fs > 0.0 ? s.gt.fs : fs;
        preds.push_back(std::move(pred));
        gts.push_back(s.gt);
        videos.push_back(s.video);
    }
    return evaluate_signals(preds, gts, videos);
}

// ---- optimizer-state sidecar ------------------------------------------------
// "DTLS" | u32 version=1 | u64 step | per tensor in canonical order twice
// (first moments, then second): f64 data. Shapes come from the paired
// checkpoint; the sidecar only restores optimizer continuity.

inline void save_train_state(const AdamState& state, const ModelConfig& cfg,
                             const std::string& path) {
    std::string buf;
    buf += "DTLS";
    put_u32(buf, 1);
    char stepb[8];
    std::memcpy(stepb, &state.step, 8);
    buf.append(stepb, 8);
    auto dump = [&](const ParamPack<Tensor>& pack) {
        visit_params(cfg.layers, cfg.heads,
                     [&](const std::string&, ParamKind, const Tensor& t) {
                         for (double v : t.data) {
                             char b[8];
                             std::memcpy(b, &v, 8);
                             buf.append(b, 8);
                         }
                     },
                     pack);
    };
    dump(state.m);
    dump(state.v);
    write_file_atomic(path, buf);
}

inline AdamState load_train_state(const ModelParams& params, const std::string& path) {
    const std::string buf = read_file(path);
    BinReader in(buf, path);
    if (in.bytes(4) != "DTLS") throw std::runtime_error(path + ": not an optimizer-state file");
    if (in.u32() != 1) throw std::runtime_error(path + ": unsupported version");
    AdamState state = AdamState::zeros_like(params);
    const std::string stepb = in.bytes(8);
    std::memcpy(&state.step, stepb.data(), 8);
    auto slurp = [&](ParamPack<Tensor>& pack) {
        visit_params(params.config.layers, params.config.heads,
                     [&](const std::string&, ParamKind, Tensor& t) {
                         for (double& v : t.data) {
                             const std::string b = in.bytes(8);
                             std::memcpy(&v, b.data(), 8);
                         }
                     },
                     pack);
    };
    slurp(state.m);
    slurp(state.v);
    in.expect_end();
    return state;
}

}  // namespace dualtl
