#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualtl/ioutil.hpp"
#include "dualtl/roi_trace.hpp"

namespace dualtl {

enum class ColorSpace : std::uint8_t { RGB = 0, YUV = 1, RGBYUV = 2 };

inline std::size_t channels_of(ColorSpace cs) { return cs == ColorSpace::RGBYUV ? 6 : 3; }

inline std::string to_string(ColorSpace cs) {
    switch (cs) {
        case ColorSpace::RGB: return "rgb";
        case ColorSpace::YUV: return "yuv";
        case ColorSpace::RGBYUV: return "rgbyuv";
    }
    throw std::logic_error("bad color space");
}

inline ColorSpace parse_color_space(const std::string& s) {
    if (s == "rgb") return ColorSpace::RGB;
    if (s == "yuv") return ColorSpace::YUV;
    if (s == "rgbyuv") return ColorSpace::RGBYUV;
    throw std::invalid_argument("color space must be rgb|yuv|rgbyuv, got '" + s + "'");
}

/// All nonempty subsets of the n base ROIs, in ascending-bitmask order. The
/// fixed order pins the map's row layout across runs.
struct RoiCombinationSet {
    std::size_t n = 0;
    std::vector<std::uint32_t> masks;
};

inline RoiCombinationSet enumerate_roi_combinations(std::size_t n) {
    if (n < 1 || n > 16) throw std::domain_error("roi combinations: n must be in [1,16]");
    RoiCombinationSet set;
    set.n = n;
    const std::uint32_t total = (1u << n) - 1u;
    set.masks.reserve(total);
    for (std::uint32_t m = 1; m <= total; ++m) set.masks.push_back(m);
    return set;
}

/// BT.601 full-range RGB -> YUV with the +128 chroma offset, clamped to [0,255].
inline std::array<double, 3> rgb_to_yuv(double r, double g, double b) {
    if (!std::isfinite(r) || !std::isfinite(g) || !std::isfinite(b))
        throw std::domain_error("rgb_to_yuv: non-finite input");
    const double y = 0.299 * r + 0.587 * g + 0.114 * b;
    const double u = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0;
    const double v = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0;
    auto clamp255 = [](double x) { return x < 0.0 ? 0.0 : (x > 255.0 ? 255.0 : x); };
    return {clamp255(y), clamp255(u), clamp255(v)};
}

/// Multi-scale spatial-temporal map: [combination][channel][time].
struct MstMap {
    std::size_t combos = 0;   // N
    std::size_t channels = 0; // C
    std::size_t frames = 0;   // T
    ColorSpace color_space = ColorSpace::RGB;
    bool normalized = false;
    // Set when some combination had zero pixels at frame 0 and the value had
    // to be invented; not persisted in the binary format.
    bool degraded = false;
    std::vector<double> values;

    MstMap() = default;
    MstMap(std::size_t n, std::size_t c, std::size_t t, ColorSpace cs)
        : combos(n), channels(c), frames(t), color_space(cs), values(n * c * t, 0.0) {}

    double at(std::size_t k, std::size_t c, std::size_t t) const {
        return values[(k * channels + c) * frames + t];
    }
    double& at(std::size_t k, std::size_t c, std::size_t t) {
        return values[(k * channels + c) * frames + t];
    }
};

inline MstMap build_mstmap(const RoiTrace& trace, const RoiCombinationSet& combos,
                           ColorSpace color_space) {
    trace.validate();
    if (combos.n != trace.n_rois)
        throw std::invalid_argument("build_mstmap: combination set for n=" + std::to_string(combos.n) +
                                    " but trace has " + std::to_string(trace.n_rois) + " ROIs");
    const std::size_t T = trace.frame_count();
    const std::size_t N = combos.masks.size();
    MstMap map(N, channels_of(color_space), T, color_space);
    for (std::size_t k = 0; k < N; ++k) {
        const std::uint32_t mask = combos.masks[k];
        std::array<double, 3> prev_rgb{0.0, 0.0, 0.0};
        for (std::size_t t = 0; t < T; ++t) {
            double wsum[3] = {0.0, 0.0, 0.0};
            double total = 0.0;
            for (std::size_t r = 0; r < trace.n_rois; ++r) {
                if (!(mask & (1u << r))) continue;
                const double cnt = static_cast<double>(trace.count(t, r));
                total += cnt;
                for (std::size_t c = 0; c < 3; ++c) wsum[c] += trace.mean(t, r, c) * cnt;
            }
            std::array<double, 3> rgb;
            if (total > 0.0) {
                for (std::size_t c = 0; c < 3; ++c) rgb[c] = wsum[c] / total;
            } else if (t > 0) {
                rgb = prev_rgb; // whole region occluded: hold the last good value
            } else {
                rgb = {0.0, 0.0, 0.0};
                map.degraded = true;
            }
            prev_rgb = rgb;
            if (color_space == ColorSpace::RGB || color_space == ColorSpace::RGBYUV)
                for (std::size_t c = 0; c < 3; ++c) map.at(k, c, t) = rgb[c];
            if (color_space != ColorSpace::RGB) {
                const auto yuv = rgb_to_yuv(rgb[0], rgb[1], rgb[2]);
                const std::size_t base = color_space == ColorSpace::RGBYUV ? 3 : 0;
                for (std::size_t c = 0; c < 3; ++c) map.at(k, base + c, t) = yuv[c];
            }
        }
    }
    return map;
}

/// Per-(combination, channel) max-min normalization of the time axis into
/// [0, 255]. Constant rows land mid-scale instead of fabricating an extreme.
inline MstMap minmax_normalize(const MstMap& map) {
    if (map.normalized) throw std::invalid_argument("minmax_normalize: map already normalized");
    MstMap out = map;
    out.normalized = true;
    for (std::size_t k = 0; k < map.combos; ++k)
        for (std::size_t c = 0; c < map.channels; ++c) {
            double lo = map.at(k, c, 0), hi = lo;
            for (std::size_t t = 0; t < map.frames; ++t) {
                const double v = map.at(k, c, t);
                if (!std::isfinite(v)) throw std::domain_error("minmax_normalize: non-finite value");
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            if (hi > lo) {
                // Divide before scaling so the extremes land on exactly 0/255.
                const double span = hi - lo;
                for (std::size_t t = 0; t < map.frames; ++t)
                    out.at(k, c, t) = (map.at(k, c, t) - lo) / span * 255.0;
            } else {
                for (std::size_t t = 0; t < map.frames; ++t) out.at(k, c, t) = 127.5;
            }
        }
    return out;
}

/// Start frames of fixed-length windows advancing by round(stride_s * fps);
/// the trailing remainder is dropped so T stays fixed.
inline std::vector<std::size_t> segment_starts(std::size_t frame_count, double fps,
                                               std::size_t seg_len_frames, double stride_s) {
    if (seg_len_frames == 0) throw std::invalid_argument("segment_starts: zero segment length");
    const auto stride = static_cast<std::size_t>(std::llround(stride_s * fps));
    if (stride == 0) throw std::invalid_argument("segment_starts: stride rounds to zero frames");
    std::vector<std::size_t> starts;
    for (std::size_t s = 0; s + seg_len_frames <= frame_count; s += stride) starts.push_back(s);
    return starts;
}

inline MstMap crop_frames(const MstMap& map, std::size_t start, std::size_t len) {
    if (start + len > map.frames) throw std::invalid_argument("crop_frames: window out of range");
    MstMap out(map.combos, map.channels, len, map.color_space);
    out.normalized = map.normalized;
    out.degraded = map.degraded;
    for (std::size_t k = 0; k < map.combos; ++k)
        for (std::size_t c = 0; c < map.channels; ++c)
            for (std::size_t t = 0; t < len; ++t) out.at(k, c, t) = map.at(k, c, start + t);
    return out;
}

// ---- binary format ----------------------------------------------------------
// "MSTM" | u32 version=1 | u32 N | u32 C | u32 T | u8 color_space |
// u8 normalized | N*C*T little-endian f32 in [combination][channel][time] order

inline void save_mstmap(const MstMap& map, const std::string& path) {
    std::string buf;
    buf.reserve(18 + map.values.size() * 4);
    buf += "MSTM";
    put_u32(buf, 1);
    put_u32(buf, static_cast<std::uint32_t>(map.combos));
    put_u32(buf, static_cast<std::uint32_t>(map.channels));
    put_u32(buf, static_cast<std::uint32_t>(map.frames));
    put_u8(buf, static_cast<std::uint8_t>(map.color_space));
    put_u8(buf, map.normalized ? 1 : 0);
    for (double v : map.values) put_f32(buf, static_cast<float>(v));
    write_file_atomic(path, buf);
}

inline MstMap load_mstmap(const std::string& path) {
    const std::string buf = read_file(path);
    BinReader in(buf, path);
    if (in.bytes(4) != "MSTM") throw std::runtime_error(path + ": not an MSTM file");
    const std::uint32_t version = in.u32();
    if (version != 1) throw std::runtime_error(path + ": unsupported version " + std::to_string(version));
    const std::uint32_t n = in.u32(), c = in.u32(), t = in.u32();
    const std::uint8_t cs = in.u8();
    const std::uint8_t normalized = in.u8();
    if (cs > 2) throw std::runtime_error(path + ": bad color space tag");
    const auto color_space = static_cast<ColorSpace>(cs);
    if (n == 0 || t == 0 || c != channels_of(color_space))
        throw std::runtime_error(path + ": inconsistent dimensions");
    MstMap map(n, c, t, color_space);
    map.normalized = normalized != 0;
    for (double& v : map.values) v = static_cast<double>(in.f32());
    in.expect_end();
    return map;
}

}  // namespace dualtl
