#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dualtl/ioutil.hpp"
#include "dualtl/mstmap.hpp"
#include "dualtl/rng.hpp"
#include "dualtl/tape.hpp"
#include "dualtl/tensor.hpp"

namespace dualtl {

enum class PathMode { DUAL, S_ONLY, T_ONLY };
enum class Activation { GELU, RELU };

inline std::string to_string(PathMode p) {
    switch (p) {
        case PathMode::DUAL: return "dual";
        case PathMode::S_ONLY: return "s";
        case PathMode::T_ONLY: return "t";
    }
    throw std::logic_error("bad path mode");
}

inline PathMode parse_path_mode(const std::string& s) {
    if (s == "dual") return PathMode::DUAL;
    if (s == "s") return PathMode::S_ONLY;
    if (s == "t") return PathMode::T_ONLY;
    throw std::invalid_argument("path must be dual|s|t, got '" + s + "'");
}

inline std::string to_string(Activation a) {
    return a == Activation::GELU ? "gelu" : "relu";
}

inline Activation parse_activation(const std::string& s) {
    if (s == "gelu") return Activation::GELU;
    if (s == "relu") return Activation::RELU;
    throw std::invalid_argument("activation must be gelu|relu, got '" + s + "'");
}

struct ModelConfig {
    std::size_t n_combinations = 63; // N
    std::size_t segment_frames = 300; // T
    std::size_t channels = 3; // C
    std::size_t embed_dim = 300; // D
    std::size_t layers = 6; // L
    std::size_t heads = 4; // H
    std::size_t ffn_mult = 4;
    PathMode path = PathMode::DUAL;
    bool use_spatial_token = true;
    bool use_temporal_token = true;
    Activation activation = Activation::GELU;

    void validate() const {
        // layers == 0 is allowed: the encoder degenerates to the identity,
        // which the tests use to pin the embedding semantics.
        if (n_combinations == 0 || segment_frames == 0 || embed_dim == 0 || heads == 0 ||
            ffn_mult == 0)
            throw std::invalid_argument("model config: dimensions must be positive");
        if (channels != 3 && channels != 6)
            throw std::invalid_argument("model config: channels must be 3 or 6");
        if (embed_dim % heads != 0)
            throw std::invalid_argument("model config: embed_dim must be divisible by heads");
        if (segment_frames < 2)
            throw std::invalid_argument("model config: segment_frames must be >= 2");
    }
};

inline nlohmann::json to_json(const ModelConfig& cfg) {
    nlohmann::json j;
    j["n_combinations"] = cfg.n_combinations;
    j["segment_frames"] = cfg.segment_frames;
    j["channels"] = cfg.channels;
    j["embed_dim"] = cfg.embed_dim;
    j["layers"] = cfg.layers;
    j["heads"] = cfg.heads;
    j["ffn_mult"] = cfg.ffn_mult;
    j["path"] = to_string(cfg.path);
    j["use_spatial_token"] = cfg.use_spatial_token;
    j["use_temporal_token"] = cfg.use_temporal_token;
    j["activation"] = to_string(cfg.activation);
    return j;
}

/// Parses a config object. Unknown keys are rejected so typos cannot silently
/// fall back to defaults; absent keys take the documented defaults.
inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("model config: expected a JSON object");
    static const char* known[] = {"n_combinations", "segment_frames", "channels",
                                  "embed_dim",      "layers",         "heads",
                                  "ffn_mult",       "path",           "use_spatial_token",
                                  "use_temporal_token", "activation"};
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || item.key() == k;
        if (!ok) throw std::invalid_argument("model config: unknown key '" + item.key() + "'");
    }
    ModelConfig cfg;
    auto get_size = [&](const char* key, std::size_t& out) {
        if (!j.contains(key)) return;
        if (!j.at(key).is_number_integer())
            throw std::invalid_argument(std::string("model config: '") + key + "' must be an integer");
        const auto v = j.at(key).get<std::int64_t>();
        if (v <= 0 || v > 1000000)
            throw std::invalid_argument(std::string("model config: '") + key + "' out of range");
        out = static_cast<std::size_t>(v);
    };
    get_size("n_combinations", cfg.n_combinations);
    get_size("segment_frames", cfg.segment_frames);
    get_size("channels", cfg.channels);
    get_size("embed_dim", cfg.embed_dim);
    if (j.contains("layers")) {  // 0 is legal: identity encoder
        if (!j.at("layers").is_number_integer())
            throw std::invalid_argument("model config: 'layers' must be an integer");
        const auto v = j.at("layers").get<std::int64_t>();
        if (v < 0 || v > 1000000) throw std::invalid_argument("model config: 'layers' out of range");
        cfg.layers = static_cast<std::size_t>(v);
    }
    get_size("heads", cfg.heads);
    get_size("ffn_mult", cfg.ffn_mult);
    if (j.contains("path")) cfg.path = parse_path_mode(j.at("path").get<std::string>());
    if (j.contains("use_spatial_token")) cfg.use_spatial_token = j.at("use_spatial_token").get<bool>();
    if (j.contains("use_temporal_token"))
        cfg.use_temporal_token = j.at("use_temporal_token").get<bool>();
    if (j.contains("activation")) cfg.activation = parse_activation(j.at("activation").get<std::string>());
    cfg.validate();
    return cfg;
}

/// A length-T waveform at a given sampling rate.
struct RppgSignal {
    std::vector<double> samples;
    double fs = 0.0;
};

// ---- parameter layout -------------------------------------------------------
// The same structure instantiated over Tensor (storage) and Var (tape
// handles). visit_params defines the one canonical traversal order used by
// init, checkpoints, and gradient bookkeeping.

template <class T>
struct HeadPack {
    T wq, bq, wk, bk, wv, bv;
};

template <class T>
struct LayerPack {
    T ln1_gain, ln1_bias;
    std::vector<HeadPack<T>> heads;
    T wo, bo;
    T ln2_gain, ln2_bias;
    T ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

template <class T>
struct ParamPack {
    T embed_spatial, embed_temporal;
    T token_spatial, token_temporal;
    T pos_spatial, pos_temporal;
    std::vector<LayerPack<T>> spatial_layers, temporal_layers;
    T fc1_w, fc1_b, fc2_w, fc2_b;
};

struct ModelParams : ParamPack<Tensor> {
    ModelConfig config;
};

using ParamVars = ParamPack<Var>;

enum class ParamKind { Weight, Bias, Gain };

/// Visits every parameter of one or more structurally identical packs in the
/// canonical order. The callback receives (name, kind, field-of-each-pack...).
template <class F, class... P>
void visit_params(std::size_t layers, std::size_t heads, F&& f, P&... packs) {
    f("embed_spatial", ParamKind::Weight, packs.embed_spatial...);
    f("embed_temporal", ParamKind::Weight, packs.embed_temporal...);
    f("token_spatial", ParamKind::Weight, packs.token_spatial...);
    f("token_temporal", ParamKind::Weight, packs.token_temporal...);
    f("pos_spatial", ParamKind::Weight, packs.pos_spatial...);
    f("pos_temporal", ParamKind::Weight, packs.pos_temporal...);
    for (int path = 0; path < 2; ++path) {
        const std::string tag = path == 0 ? "s" : "t";
        for (std::size_t l = 0; l < layers; ++l) {
            const std::string pre = tag + ".l" + std::to_string(l) + ".";
            auto layer_of = [path](auto& pack) {
                return path == 0 ? &pack.spatial_layers : &pack.temporal_layers;
            };
            f(pre + "ln1_gain", ParamKind::Gain, (*layer_of(packs))[l].ln1_gain...);
            f(pre + "ln1_bias", ParamKind::Bias, (*layer_of(packs))[l].ln1_bias...);
            for (std::size_t h = 0; h < heads; ++h) {
                const std::string hp = pre + "h" + std::to_string(h) + ".";
                f(hp + "wq", ParamKind::Weight, (*layer_of(packs))[l].heads[h].wq...);
                f(hp + "bq", ParamKind::Bias, (*layer_of(packs))[l].heads[h].bq...);
                f(hp + "wk", ParamKind::Weight, (*layer_of(packs))[l].heads[h].wk...);
                f(hp + "bk", ParamKind::Bias, (*layer_of(packs))[l].heads[h].bk...);
                f(hp + "wv", ParamKind::Weight, (*layer_of(packs))[l].heads[h].wv...);
                f(hp + "bv", ParamKind::Bias, (*layer_of(packs))[l].heads[h].bv...);
            }
            f(pre + "wo", ParamKind::Weight, (*layer_of(packs))[l].wo...);
            f(pre + "bo", ParamKind::Bias, (*layer_of(packs))[l].bo...);
            f(pre + "ln2_gain", ParamKind::Gain, (*layer_of(packs))[l].ln2_gain...);
            f(pre + "ln2_bias", ParamKind::Bias, (*layer_of(packs))[l].ln2_bias...);
            f(pre + "ffn_w1", ParamKind::Weight, (*layer_of(packs))[l].ffn_w1...);
            f(pre + "ffn_b1", ParamKind::Bias, (*layer_of(packs))[l].ffn_b1...);
            f(pre + "ffn_w2", ParamKind::Weight, (*layer_of(packs))[l].ffn_w2...);
            f(pre + "ffn_b2", ParamKind::Bias, (*layer_of(packs))[l].ffn_b2...);
        }
    }
    f("fc1_w", ParamKind::Weight, packs.fc1_w...);
    f("fc1_b", ParamKind::Bias, packs.fc1_b...);
    f("fc2_w", ParamKind::Weight, packs.fc2_w...);
    f("fc2_b", ParamKind::Bias, packs.fc2_b...);
}

template <class T>
void size_pack(ParamPack<T>& pack, const ModelConfig& cfg) {
    pack.spatial_layers.assign(cfg.layers, LayerPack<T>{});
    pack.temporal_layers.assign(cfg.layers, LayerPack<T>{});
    for (auto* layers : {&pack.spatial_layers, &pack.temporal_layers})
        for (auto& layer : *layers) layer.heads.assign(cfg.heads, HeadPack<T>{});
}

/// All tensors allocated to their config shapes, zero-filled.
inline ModelParams allocate_params(const ModelConfig& cfg) {
    cfg.validate();
    const std::size_t N = cfg.n_combinations, T = cfg.segment_frames, C = cfg.channels;
    const std::size_t D = cfg.embed_dim, dk = cfg.embed_dim / cfg.heads;
    ModelParams p;
    p.config = cfg;
    size_pack(p, cfg);
    p.embed_spatial = Tensor({C * T, D});
    p.embed_temporal = Tensor({N * C, D});
    p.token_spatial = Tensor({1, D});
    p.token_temporal = Tensor({1, D});
    p.pos_spatial = Tensor({N + 1, D});
    p.pos_temporal = Tensor({T + 1, D});
    for (auto* layers : {&p.spatial_layers, &p.temporal_layers})
        for (auto& layer : *layers) {
            layer.ln1_gain = Tensor({D});
            layer.ln1_bias = Tensor({D});
            for (auto& head : layer.heads) {
                head.wq = Tensor({D, dk});
                head.bq = Tensor({dk});
                head.wk = Tensor({D, dk});
                head.bk = Tensor({dk});
                head.wv = Tensor({D, dk});
                head.bv = Tensor({dk});
            }
            layer.wo = Tensor({D, D});
            layer.bo = Tensor({D});
            layer.ln2_gain = Tensor({D});
            layer.ln2_bias = Tensor({D});
            layer.ffn_w1 = Tensor({D, cfg.ffn_mult * D});
            layer.ffn_b1 = Tensor({cfg.ffn_mult * D});
            layer.ffn_w2 = Tensor({cfg.ffn_mult * D, D});
            layer.ffn_b2 = Tensor({D});
        }
    p.fc1_w = Tensor({2 * D, 2 * D});
    p.fc1_b = Tensor({2 * D});
    p.fc2_w = Tensor({2 * D, T});
    p.fc2_b = Tensor({T});
    return p;
}

/// Weights (including tokens and positional embeddings) ~ Normal(0, 0.02^2)
/// drawn in canonical order from a seeded generator; biases zero; layer-norm
/// gains one.
inline ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
    ModelParams p = allocate_params(cfg);
    std::mt19937_64 rng(derive_seed(seed, 0));
    visit_params(cfg.layers, cfg.heads,
                 [&](const std::string&, ParamKind kind, Tensor& t) {
                     if (kind == ParamKind::Weight)
                         for (double& v : t.data) v = normal(rng, 0.0, 0.02);
                     else if (kind == ParamKind::Gain)
                         for (double& v : t.data) v = 1.0;
                 },
                 p);
    return p;
}

inline std::size_t count_scalars(const ModelParams& p) {
    std::size_t n = 0;
    visit_params(p.config.layers, p.config.heads,
                 [&](const std::string&, ParamKind, const Tensor& t) { n += t.numel(); }, p);
    return n;
}

// ---- forward pass -----------------------------------------------------------

/// How often each encoder stack ran; the path-mode ablations are verified
/// against these (S_ONLY must never touch the temporal stack and vice versa).
struct EvalCounters {
    inline static std::atomic<std::uint64_t> spatial_encoder{0};
    inline static std::atomic<std::uint64_t> temporal_encoder{0};
    static void reset() {
        spatial_encoder = 0;
        temporal_encoder = 0;
    }
};

/// The two patch views of one map: X_s rows are ROI combinations (channel-
/// major flattening of the time axis), X_t rows are frames (combination-major
/// flattening of the channels). Values stay in [0,255] here; the forward pass
/// scales them.
struct PatchSequences {
    Tensor x_s; // N x (C*T)
    Tensor x_t; // T x (N*C)
};

inline PatchSequences flatten_views(const MstMap& map) {
    if (!map.normalized) throw std::invalid_argument("flatten_views: map must be normalized");
    const std::size_t N = map.combos, C = map.channels, T = map.frames;
    PatchSequences seq;
    seq.x_s = Tensor({N, C * T});
    seq.x_t = Tensor({T, N * C});
    for (std::size_t k = 0; k < N; ++k)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t t = 0; t < T; ++t) {
                const double v = map.at(k, c, t);
                seq.x_s.data[k * (C * T) + c * T + t] = v;
                seq.x_t.data[t * (N * C) + k * C + c] = v;
            }
    return seq;
}

inline MstMap unflatten_views(const PatchSequences& seq, const MstMap& like) {
    MstMap map(like.combos, like.channels, like.frames, like.color_space);
    map.normalized = like.normalized;
    for (std::size_t k = 0; k < map.combos; ++k)
        for (std::size_t c = 0; c < map.channels; ++c)
            for (std::size_t t = 0; t < map.frames; ++t)
                map.at(k, c, t) = seq.x_s.data[k * (map.channels * map.frames) + c * map.frames + t];
    return map;
}

/// Registers every parameter as a tape leaf. `override_idx` (canonical-order
/// position) lets a caller substitute one externally created leaf, which is
/// what the finite-difference checks perturb.
inline ParamVars register_params(Tape& tape, const ModelParams& p, bool requires_grad = true,
                                 std::size_t override_idx = SIZE_MAX, Var override_var = {}) {
    ParamVars vars;
    size_pack(vars, p.config);
    std::size_t i = 0;
    visit_params(p.config.layers, p.config.heads,
                 [&](const std::string&, ParamKind, const Tensor& t, Var& v) {
                     v = i == override_idx ? override_var : tape.leaf(t, requires_grad);
                     ++i;
                 },
                 p, vars);
    return vars;
}

namespace detail {

inline Var linear(Tape& tape, Var x, Var w, Var b) {
    return tape.add_rowvec(tape.matmul(x, w), b);
}

inline Var activation(Tape& tape, Var x, Activation act) {
    return act == Activation::GELU ? tape.gelu(x) : tape.relu(x);
}

/// Pre-norm encoder layer: z' = MHSA(LN(z)) + z, out = FFN(LN(z')) + z'.
inline Var encoder_layer(Tape& tape, Var z, const LayerPack<Var>& layer, const ModelConfig& cfg) {
    const double att_scale =
        1.0 / std::sqrt(static_cast<double>(cfg.embed_dim) / static_cast<double>(cfg.heads));
    Var u = tape.layer_norm(z, layer.ln1_gain, layer.ln1_bias);
    std::vector<Var> head_outs;
    head_outs.reserve(cfg.heads);
    for (const HeadPack<Var>& head : layer.heads) {
        Var q = linear(tape, u, head.wq, head.bq);
        Var k = linear(tape, u, head.wk, head.bk);
        Var v = linear(tape, u, head.wv, head.bv);
        Var att = tape.softmax_rows(tape.scale(tape.matmul_nt(q, k), att_scale));
        head_outs.push_back(tape.matmul(att, v));
    }
    Var mhsa = linear(tape, tape.concat(head_outs, 1), layer.wo, layer.bo);
    Var zp = tape.add(mhsa, z);
    Var w = tape.layer_norm(zp, layer.ln2_gain, layer.ln2_bias);
    Var ffn = linear(tape, activation(tape, linear(tape, w, layer.ffn_w1, layer.ffn_b1),
                                      cfg.activation),
                     layer.ffn_w2, layer.ffn_b2);
    return tape.add(ffn, zp);
}

/// Prepend the learnable token to the projected patches and add positional
/// offsets: z0 = [token; patches * embed] + pos.
inline Var patch_embed(Tape& tape, Var patches, Var embed, Var token, Var pos) {
    return tape.add(tape.concat({token, tape.matmul(patches, embed)}, 0), pos);
}

/// L encoder layers over z0, then the token readout (or mean pooling of the
/// patch rows for the w/o-token ablation). Returns a 1xD row.
inline Var token_learner(Tape& tape, Var z, const std::vector<LayerPack<Var>>& layers,
                         bool use_token, const ModelConfig& cfg) {
    for (const LayerPack<Var>& layer : layers) z = encoder_layer(tape, z, layer, cfg);
    const std::size_t rows = tape.value(z).rows();
    if (use_token) return tape.slice_rows(z, 0, 1);
    return tape.mean_rows(tape.slice_rows(z, 1, rows));
}

}  // namespace detail

/// z0_s = [t_s; X_s * E_s] + P_s, an (N+1)xD sequence.
inline Var spatial_patch_embed(Tape& tape, Var x_s, const ParamVars& vars) {
    return detail::patch_embed(tape, x_s, vars.embed_spatial, vars.token_spatial,
                               vars.pos_spatial);
}

/// z0_t = [t_t; X_t * E_t] + P_t, a (T+1)xD sequence.
inline Var temporal_patch_embed(Tape& tape, Var x_t, const ParamVars& vars) {
    return detail::patch_embed(tape, x_t, vars.embed_temporal, vars.token_temporal,
                               vars.pos_temporal);
}

/// Spatial TokenLearner: embed, encode, read the token back out. 1xD.
inline Var s_tl(Tape& tape, Var x_s, const ParamVars& vars, const ModelConfig& cfg) {
    Var z0 = spatial_patch_embed(tape, x_s, vars);
    EvalCounters::spatial_encoder += 1;
    return detail::token_learner(tape, z0, vars.spatial_layers, cfg.use_spatial_token, cfg);
}

/// Temporal TokenLearner. 1xD.
inline Var t_tl(Tape& tape, Var x_t, const ParamVars& vars, const ModelConfig& cfg) {
    Var z0 = temporal_patch_embed(tape, x_t, vars);
    EvalCounters::temporal_encoder += 1;
    return detail::token_learner(tape, z0, vars.temporal_layers, cfg.use_temporal_token, cfg);
}

/// Full Dual-TL forward on an existing tape: map -> predicted waveform (1xT).
inline Var dual_forward_on(Tape& tape, const MstMap& map, const ParamVars& vars,
                           const ModelConfig& cfg) {
    cfg.validate();
    if (map.combos != cfg.n_combinations || map.channels != cfg.channels ||
        map.frames != cfg.segment_frames)
        throw std::invalid_argument("dual_forward: map " + std::to_string(map.combos) + "x" +
                                    std::to_string(map.channels) + "x" + std::to_string(map.frames) +
                                    " does not match the model config");
    PatchSequences seq = flatten_views(map);
    const double input_scale = 1.0 / 255.0;
    Var token_s, token_t;
    if (cfg.path != PathMode::T_ONLY) {
        Var x_s = tape.scale(tape.leaf(std::move(seq.x_s)), input_scale);
        token_s = s_tl(tape, x_s, vars, cfg);
    }
    if (cfg.path != PathMode::S_ONLY) {
        Var x_t = tape.scale(tape.leaf(std::move(seq.x_t)), input_scale);
        token_t = t_tl(tape, x_t, vars, cfg);
    }
    // Single-path ablations duplicate their token so the head keeps its 2D
    // input width.
    Var dual;
    switch (cfg.path) {
        case PathMode::DUAL: dual = tape.concat({token_s, token_t}, 1); break;
        case PathMode::S_ONLY: dual = tape.concat({token_s, token_s}, 1); break;
        case PathMode::T_ONLY: dual = tape.concat({token_t, token_t}, 1); break;
    }
    Var hidden = detail::activation(tape, detail::linear(tape, dual, vars.fc1_w, vars.fc1_b),
                                    cfg.activation);
    return detail::linear(tape, hidden, vars.fc2_w, vars.fc2_b);
}

/// Inference convenience: forward on a private tape without gradients.
inline RppgSignal dual_forward(const MstMap& map, const ModelParams& params, double fs = 0.0) {
    Tape tape;
    ParamVars vars = register_params(tape, params, /*requires_grad=*/false);
    Var out = dual_forward_on(tape, map, vars, params.config);
    RppgSignal sig;
    sig.samples = tape.value(out).data;
    sig.fs = fs;
    return sig;
}

// ---- checkpoint format ------------------------------------------------------
// "DTLC" | u32 version=1 | u32 json_len | ModelConfig JSON | per tensor in
// canonical order: u32 name_len | name | u32 rank | u32 dims... | f32 data

inline void save_checkpoint(const ModelParams& params, const std::string& path) {
    std::string buf;
    buf += "DTLC";
    put_u32(buf, 1);
    const std::string cfg = to_json(params.config).dump();
    put_u32(buf, static_cast<std::uint32_t>(cfg.size()));
    buf += cfg;
    visit_params(params.config.layers, params.config.heads,
                 [&](const std::string& name, ParamKind, const Tensor& t) {
                     put_u32(buf, static_cast<std::uint32_t>(name.size()));
                     buf += name;
                     put_u32(buf, static_cast<std::uint32_t>(t.rank()));
                     for (std::size_t d : t.shape) put_u32(buf, static_cast<std::uint32_t>(d));
                     for (double v : t.data) put_f32(buf, static_cast<float>(v));
                 },
                 params);
    write_file_atomic(path, buf);
}

inline ModelParams load_checkpoint(const std::string& path) {
    const std::string buf = read_file(path);
    BinReader in(buf, path);
    if (in.bytes(4) != "DTLC") throw std::runtime_error(path + ": not a checkpoint file");
    const std::uint32_t version = in.u32();
    if (version != 1) throw std::runtime_error(path + ": unsupported version " + std::to_string(version));
    const std::uint32_t cfg_len = in.u32();
    ModelConfig cfg;
    try {
        cfg = model_config_from_json(nlohmann::json::parse(in.bytes(cfg_len)));
    } catch (const std::exception& e) {
        throw std::runtime_error(path + ": bad embedded config: " + e.what());
    }
    ModelParams params = allocate_params(cfg);
    visit_params(cfg.layers, cfg.heads,
                 [&](const std::string& name, ParamKind, Tensor& t) {
                     const std::uint32_t name_len = in.u32();
                     const std::string got = in.bytes(name_len);
                     if (got != name)
                         throw std::runtime_error(path + ": expected tensor '" + name + "', found '" +
                                                  got + "'");
                     const std::uint32_t rank = in.u32();
                     if (rank != t.rank())
                         throw std::runtime_error(path + ": tensor '" + name + "' has wrong rank");
                     for (std::size_t d = 0; d < rank; ++d)
                         if (in.u32() != t.shape[d])
                             throw std::runtime_error(path + ": tensor '" + name + "' has wrong shape");
                     for (double& v : t.data) v = static_cast<double>(in.f32());
                 },
                 params);
    in.expect_end();
    return params;
}

}  // namespace dualtl
