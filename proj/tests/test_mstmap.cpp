#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "dualtl/mstmap.hpp"
#include "dualtl/rng.hpp"

using namespace dualtl;
namespace fs = std::filesystem;

namespace {

// Per-(frame, roi) pixel lists; the trace stores only their means and counts,
// so a brute-force mean over the union of pixels is an independent oracle for
// the combination values.
using PixelField = std::vector<std::vector<std::vector<std::array<double, 3>>>>;

PixelField random_field(std::size_t frames, std::size_t n_rois, std::mt19937_64& rng) {
    PixelField field(frames, std::vector<std::vector<std::array<double, 3>>>(n_rois));
    for (std::size_t f = 0; f < frames; ++f)
        for (std::size_t r = 0; r < n_rois; ++r) {
            const std::size_t count = 1 + uniform_below(rng, 6);
            for (std::size_t p = 0; p < count; ++p)
                field[f][r].push_back({uniform(rng, 0.0, 255.0), uniform(rng, 0.0, 255.0),
                                       uniform(rng, 0.0, 255.0)});
        }
    return field;
}

RoiTrace trace_of(const PixelField& field, double fps) {
    RoiTrace trace;
    trace.fps = fps;
    trace.n_rois = field.empty() ? 0 : field[0].size();
    for (const auto& frame : field)
        for (const auto& roi : frame) {
            trace.pixel_counts.push_back(static_cast<std::int64_t>(roi.size()));
            for (std::size_t c = 0; c < 3; ++c) {
                double sum = 0.0;
                for (const auto& px : roi) sum += px[c];
                trace.channel_means.push_back(roi.empty() ? 0.0 : sum / static_cast<double>(roi.size()));
            }
        }
    return trace;
}

std::array<double, 3> oracle_combo_mean(const PixelField& field, std::size_t frame,
                                        std::uint32_t mask) {
    std::array<double, 3> sum{0.0, 0.0, 0.0};
    std::size_t count = 0;
    for (std::size_t r = 0; r < field[frame].size(); ++r) {
        if (!(mask & (1u << r))) continue;
        for (const auto& px : field[frame][r]) {
            for (std::size_t c = 0; c < 3; ++c) sum[c] += px[c];
            ++count;
        }
    }
    for (double& v : sum) v /= static_cast<double>(count);
    return sum;
}

fs::path temp_file(const char* name) {
    return fs::temp_directory_path() / (std::string("dualtl_test_") + name);
}

}  // namespace

TEST_CASE("roi combinations enumerate all nonempty subsets", "[mstmap]") {
    for (std::size_t n = 1; n <= 10; ++n) {
        const RoiCombinationSet set = enumerate_roi_combinations(n);
        REQUIRE(set.masks.size() == (std::size_t{1} << n) - 1);
        for (std::size_t i = 0; i < set.masks.size(); ++i) {
            REQUIRE(set.masks[i] == i + 1);  // ascending, nonempty, unique
            REQUIRE(set.masks[i] < (1u << n));
        }
    }
    CHECK(enumerate_roi_combinations(6).masks.size() == 63);
    CHECK_THROWS_AS(enumerate_roi_combinations(0), std::domain_error);
    CHECK_THROWS_AS(enumerate_roi_combinations(17), std::domain_error);
}

TEST_CASE("rgb_to_yuv pins the BT.601 constants", "[mstmap]") {
    auto black = rgb_to_yuv(0, 0, 0);
    CHECK(black[0] == 0.0);
    CHECK(black[1] == 128.0);
    CHECK(black[2] == 128.0);

    auto white = rgb_to_yuv(255, 255, 255);
    CHECK(std::abs(white[0] - 255.0) < 1e-9);
    CHECK(std::abs(white[1] - 128.0) < 1e-9);
    CHECK(std::abs(white[2] - 128.0) < 1e-9);

    auto red = rgb_to_yuv(255, 0, 0);
    CHECK(std::abs(red[0] - 76.245) < 1e-9);
    CHECK(std::abs(red[1] - 84.97232) < 1e-9);
    CHECK(red[2] == 255.0);  // 255.5 clamped

    for (double g : {10.0, 100.0, 200.0}) {
        auto gray = rgb_to_yuv(g, g, g);
        CHECK(std::abs(gray[0] - g) < 1e-9);
        CHECK(std::abs(gray[1] - 128.0) < 1e-9);
        CHECK(std::abs(gray[2] - 128.0) < 1e-9);
    }
    CHECK_THROWS_AS(rgb_to_yuv(std::nan(""), 0, 0), std::domain_error);
}

TEST_CASE("combination means weight ROIs by pixel count", "[mstmap]") {
    RoiTrace trace;
    trace.fps = 30.0;
    trace.n_rois = 2;
    trace.pixel_counts = {1, 3};
    trace.channel_means = {10, 10, 10, 20, 20, 20};
    const MstMap map = build_mstmap(trace, enumerate_roi_combinations(2), ColorSpace::RGB);
    REQUIRE(map.combos == 3);
    REQUIRE(map.frames == 1);
    CHECK(map.at(0, 0, 0) == 10.0);          // {roi0}
    CHECK(map.at(1, 0, 0) == 20.0);          // {roi1}
    CHECK(map.at(2, 0, 0) == 17.5);          // (1*10 + 3*20) / 4
    CHECK_FALSE(map.degraded);

    trace.pixel_counts = {2, 2};
    const MstMap eq = build_mstmap(trace, enumerate_roi_combinations(2), ColorSpace::RGB);
    CHECK(eq.at(2, 0, 0) == 15.0);
}

TEST_CASE("mstmap matches a per-pixel brute force oracle", "[mstmap]") {
    std::mt19937_64 rng(derive_seed(31, 0));
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t n = 1 + uniform_below(rng, 4);
        const std::size_t frames = 2 + uniform_below(rng, 9);
        const PixelField field = random_field(frames, n, rng);
        const RoiTrace trace = trace_of(field, 30.0);
        const RoiCombinationSet combos = enumerate_roi_combinations(n);
        const MstMap map = build_mstmap(trace, combos, ColorSpace::RGB);
        for (std::size_t k = 0; k < combos.masks.size(); ++k)
            for (std::size_t f = 0; f < frames; ++f) {
                const auto want = oracle_combo_mean(field, f, combos.masks[k]);
                for (std::size_t c = 0; c < 3; ++c) {
                    const double got = map.at(k, c, f);
                    REQUIRE(std::abs(got - want[c]) / std::max(1.0, std::abs(want[c])) < 1e-9);
                }
            }
    }
}

TEST_CASE("occluded combinations carry the previous frame", "[mstmap]") {
    RoiTrace trace;
    trace.fps = 30.0;
    trace.n_rois = 1;
    trace.pixel_counts = {4, 0, 0, 4};
    trace.channel_means = {50, 60, 70, 0, 0, 0, 0, 0, 0, 90, 100, 110};
    const MstMap map = build_mstmap(trace, enumerate_roi_combinations(1), ColorSpace::RGB);
    CHECK(map.at(0, 0, 1) == 50.0);  // held
    CHECK(map.at(0, 1, 2) == 60.0);
    CHECK(map.at(0, 0, 3) == 90.0);
    CHECK_FALSE(map.degraded);

    // occluded at frame 0: nothing to carry, flag the map
    trace.pixel_counts = {0, 4, 4, 4};
    const MstMap deg = build_mstmap(trace, enumerate_roi_combinations(1), ColorSpace::RGB);
    CHECK(deg.at(0, 0, 0) == 0.0);
    CHECK(deg.degraded);
    // the carried zero must not leak into the next combination of another build
    CHECK(deg.at(0, 0, 1) == 0.0);
}

TEST_CASE("yuv and rgbyuv channel layouts", "[mstmap]") {
    std::mt19937_64 rng(derive_seed(37, 0));
    const PixelField field = random_field(4, 2, rng);
    const RoiTrace trace = trace_of(field, 30.0);
    const RoiCombinationSet combos = enumerate_roi_combinations(2);
    const MstMap rgb = build_mstmap(trace, combos, ColorSpace::RGB);
    const MstMap yuv = build_mstmap(trace, combos, ColorSpace::YUV);
    const MstMap both = build_mstmap(trace, combos, ColorSpace::RGBYUV);
    REQUIRE(rgb.channels == 3);
    REQUIRE(yuv.channels == 3);
    REQUIRE(both.channels == 6);
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t t = 0; t < 4; ++t) {
            const auto want = rgb_to_yuv(rgb.at(k, 0, t), rgb.at(k, 1, t), rgb.at(k, 2, t));
            for (std::size_t c = 0; c < 3; ++c) {
                CHECK(yuv.at(k, c, t) == want[c]);
                CHECK(both.at(k, c, t) == rgb.at(k, c, t));
                CHECK(both.at(k, 3 + c, t) == want[c]);
            }
        }
}

TEST_CASE("build_mstmap validates the combination set", "[mstmap]") {
    RoiTrace trace;
    trace.fps = 30.0;
    trace.n_rois = 2;
    trace.pixel_counts = {1, 1};
    trace.channel_means = {1, 2, 3, 4, 5, 6};
    CHECK_THROWS_AS(build_mstmap(trace, enumerate_roi_combinations(3), ColorSpace::RGB),
                    std::invalid_argument);
}

TEST_CASE("max-min normalization maps each row onto [0,255]", "[mstmap]") {
    MstMap map(2, 3, 4, ColorSpace::RGB);
    const std::vector<double> row0 = {3, 4, 5, 4};
    for (std::size_t t = 0; t < 4; ++t) {
        map.at(0, 0, t) = row0[t];
        map.at(0, 1, t) = 7.0;                            // constant
        map.at(0, 2, t) = static_cast<double>(t) * 5.0;   // 0,5,10,15
        map.at(1, 0, t) = -1.0 + static_cast<double>(t);  // negative values fine pre-normalize
    }
    const MstMap norm = minmax_normalize(map);
    CHECK(norm.normalized);
    CHECK(norm.at(0, 0, 0) == 0.0);
    CHECK(norm.at(0, 0, 1) == 127.5);
    CHECK(norm.at(0, 0, 2) == 255.0);
    CHECK(norm.at(0, 0, 3) == 127.5);
    for (std::size_t t = 0; t < 4; ++t) CHECK(norm.at(0, 1, t) == 127.5);
    CHECK(norm.at(0, 2, 1) == 85.0);
    CHECK(norm.at(1, 0, 0) == 0.0);
    CHECK(norm.at(1, 0, 3) == 255.0);

    std::mt19937_64 rng(derive_seed(41, 0));
    MstMap wide(3, 3, 16, ColorSpace::RGB);
    for (double& v : wide.values) v = uniform(rng, -40.0, 300.0);
    const MstMap wn = minmax_normalize(wide);
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t c = 0; c < 3; ++c) {
            double lo = 1e9, hi = -1e9;
            for (std::size_t t = 0; t < 16; ++t) {
                const double v = wn.at(k, c, t);
                REQUIRE(v >= 0.0);
                REQUIRE(v <= 255.0);
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            CHECK(lo == 0.0);
            CHECK(hi == 255.0);
        }

    CHECK_THROWS_AS(minmax_normalize(norm), std::invalid_argument);
    MstMap bad(1, 3, 2, ColorSpace::RGB);
    bad.values[0] = std::nan("");
    CHECK_THROWS_AS(minmax_normalize(bad), std::domain_error);
}

TEST_CASE("segment starts advance by the rounded stride", "[mstmap]") {
    const auto starts = segment_starts(900, 30.0, 300, 0.5);
    REQUIRE(starts.size() == 41);
    CHECK(starts.front() == 0);
    CHECK(starts[1] == 15);
    CHECK(starts.back() == 600);
    for (std::size_t i = 1; i < starts.size(); ++i) CHECK(starts[i] - starts[i - 1] == 15);

    CHECK(segment_starts(300, 30.0, 300, 0.5).size() == 1);
    CHECK(segment_starts(299, 30.0, 300, 0.5).empty());
    CHECK(segment_starts(100, 25.0, 50, 0.5).size() == 4);  // stride 13: 0,13,26,39
    CHECK_THROWS_AS(segment_starts(300, 30.0, 300, 0.001), std::invalid_argument);
    CHECK_THROWS_AS(segment_starts(300, 30.0, 0, 0.5), std::invalid_argument);
}

TEST_CASE("crop_frames slices the time axis", "[mstmap]") {
    MstMap map(2, 3, 10, ColorSpace::RGB);
    for (std::size_t k = 0; k < 2; ++k)
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t t = 0; t < 10; ++t) map.at(k, c, t) = 100.0 * k + 10.0 * c + t;
    const MstMap crop = crop_frames(map, 3, 4);
    REQUIRE(crop.frames == 4);
    for (std::size_t k = 0; k < 2; ++k)
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t t = 0; t < 4; ++t) CHECK(crop.at(k, c, t) == map.at(k, c, 3 + t));
    CHECK_THROWS_AS(crop_frames(map, 8, 4), std::invalid_argument);
}

TEST_CASE("mstm files round-trip through float32", "[mstmap]") {
    std::mt19937_64 rng(derive_seed(43, 0));
    MstMap map(7, 3, 12, ColorSpace::RGB);
    for (double& v : map.values) v = uniform(rng, 0.0, 255.0);
    MstMap norm = minmax_normalize(map);
    const fs::path path = temp_file("roundtrip.mstm");
    save_mstmap(norm, path.string());
    const MstMap back = load_mstmap(path.string());
    REQUIRE(back.combos == 7);
    REQUIRE(back.channels == 3);
    REQUIRE(back.frames == 12);
    REQUIRE(back.color_space == ColorSpace::RGB);
    REQUIRE(back.normalized);
    for (std::size_t i = 0; i < norm.values.size(); ++i)
        REQUIRE(back.values[i] == static_cast<double>(static_cast<float>(norm.values[i])));
    fs::remove(path);
}
