#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dualtl/ioutil.hpp"

namespace dualtl {

/// Per-frame, per-base-ROI channel statistics: the pipeline's raw input.
/// channel_means are RGB in [0,255]; pixel_counts of 0 mark an occluded ROI.
struct RoiTrace {
    double fps = 0.0;
    std::size_t n_rois = 0;
    std::vector<double> channel_means;      // [frame][roi][rgb]
    std::vector<std::int64_t> pixel_counts; // [frame][roi]
    std::vector<double> gt_ppg;             // per frame; empty when absent
    std::optional<double> gt_hr_bpm;

    std::size_t frame_count() const { return n_rois == 0 ? 0 : pixel_counts.size() / n_rois; }

    double mean(std::size_t frame, std::size_t roi, std::size_t channel) const {
        return channel_means[(frame * n_rois + roi) * 3 + channel];
    }
    double& mean(std::size_t frame, std::size_t roi, std::size_t channel) {
        return channel_means[(frame * n_rois + roi) * 3 + channel];
    }
    std::int64_t count(std::size_t frame, std::size_t roi) const {
        return pixel_counts[frame * n_rois + roi];
    }
    std::int64_t& count(std::size_t frame, std::size_t roi) {
        return pixel_counts[frame * n_rois + roi];
    }

    void validate() const {
        if (fps <= 0.0) throw std::invalid_argument("trace: fps must be positive");
        if (n_rois == 0) throw std::invalid_argument("trace: no ROIs");
        if (pixel_counts.size() % n_rois != 0 ||
            channel_means.size() != pixel_counts.size() * 3)
            throw std::invalid_argument("trace: inconsistent array sizes");
        for (double v : channel_means)
            if (!std::isfinite(v) || v < 0.0 || v > 255.0)
                throw std::invalid_argument("trace: channel mean outside [0,255]");
        for (std::int64_t c : pixel_counts)
            if (c < 0) throw std::invalid_argument("trace: negative pixel count");
        if (!gt_ppg.empty() && gt_ppg.size() != frame_count())
            throw std::invalid_argument("trace: gt_ppg length != frame count");
    }
};

inline std::string trace_sidecar_path(const std::string& csv_path) {
    const std::size_t dot = csv_path.find_last_of('.');
    const std::size_t slash = csv_path.find_last_of("/\\");
    const bool has_ext = dot != std::string::npos && (slash == std::string::npos || dot > slash);
    return (has_ext ? csv_path.substr(0, dot) : csv_path) + ".json";
}

/// Writes `frame,roi,pixel_count,mean_r,mean_g,mean_b[,gt_ppg]` rows plus the
/// JSON sidecar carrying fps / n_rois / gt_hr_bpm.
inline void save_trace(const RoiTrace& trace, const std::string& csv_path) {
    trace.validate();
    std::string out;
    const bool with_gt = !trace.gt_ppg.empty();
    out += with_gt ? "frame,roi,pixel_count,mean_r,mean_g,mean_b,gt_ppg\n"
                   : "frame,roi,pixel_count,mean_r,mean_g,mean_b\n";
    const std::size_t frames = trace.frame_count();
    for (std::size_t f = 0; f < frames; ++f)
        for (std::size_t r = 0; r < trace.n_rois; ++r) {
            out += std::to_string(f);
            out += ',';
            out += std::to_string(r);
            out += ',';
            out += std::to_string(trace.count(f, r));
            for (std::size_t c = 0; c < 3; ++c) {
                out += ',';
                out += format_double(trace.mean(f, r, c));
            }
            if (with_gt) {
                out += ',';
                out += format_double(trace.gt_ppg[f]);
            }
            out += '\n';
        }
    write_file_atomic(csv_path, out);

    nlohmann::json sidecar;
    sidecar["fps"] = trace.fps;
    sidecar["n_rois"] = trace.n_rois;
    if (trace.gt_hr_bpm)
        sidecar["gt_hr_bpm"] = *trace.gt_hr_bpm;
    else
        sidecar["gt_hr_bpm"] = nullptr;
    write_file_atomic(trace_sidecar_path(csv_path), sidecar.dump(2) + "\n");
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    fields.push_back(cur);
    return fields;
}

inline double parse_double(const std::string& s, const std::string& what, std::size_t line_no) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || s.empty())
        throw std::runtime_error(what + ": line " + std::to_string(line_no) + ": bad number '" + s + "'");
    return v;
}

inline std::int64_t parse_int(const std::string& s, const std::string& what, std::size_t line_no) {
    std::size_t used = 0;
    std::int64_t v = 0;
    try {
        v = std::stoll(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || s.empty())
        throw std::runtime_error(what + ": line " + std::to_string(line_no) + ": bad integer '" + s + "'");
    return v;
}

}  // namespace detail

inline RoiTrace load_trace(const std::string& csv_path) {
    const std::string sidecar_path = trace_sidecar_path(csv_path);
    nlohmann::json sidecar;
    try {
        sidecar = nlohmann::json::parse(read_file(sidecar_path));
    } catch (const std::exception& e) {
        throw std::runtime_error("sidecar " + sidecar_path + ": " + e.what());
    }
    RoiTrace trace;
    trace.fps = sidecar.at("fps").get<double>();
    trace.n_rois = sidecar.at("n_rois").get<std::size_t>();
    if (sidecar.contains("gt_hr_bpm") && !sidecar["gt_hr_bpm"].is_null())
        trace.gt_hr_bpm = sidecar["gt_hr_bpm"].get<double>();

    const std::string content = read_file(csv_path);
    std::istringstream in(content);
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw std::runtime_error(csv_path + ": empty file");
    ++line_no;
    const auto header = detail::split_csv_line(line);
    const std::vector<std::string> base = {"frame", "roi", "pixel_count", "mean_r", "mean_g", "mean_b"};
    bool with_gt = false;
    if (header.size() == 7 && header[6] == "gt_ppg")
        with_gt = true;
    else if (header.size() != 6)
        throw std::runtime_error(csv_path + ": line 1: unexpected header");
    for (std::size_t i = 0; i < 6; ++i)
        if (header[i] != base[i]) throw std::runtime_error(csv_path + ": line 1: unexpected header");

    std::size_t expect_frame = 0, expect_roi = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto f = detail::split_csv_line(line);
        if (f.size() != (with_gt ? 7u : 6u))
            throw std::runtime_error(csv_path + ": line " + std::to_string(line_no) + ": wrong field count");
        const auto frame = detail::parse_int(f[0], csv_path, line_no);
        const auto roi = detail::parse_int(f[1], csv_path, line_no);
        if (frame != static_cast<std::int64_t>(expect_frame) ||
            roi != static_cast<std::int64_t>(expect_roi))
            throw std::runtime_error(csv_path + ": line " + std::to_string(line_no) +
                                     ": rows must advance (frame,roi) contiguously from (0,0)");
        trace.pixel_counts.push_back(detail::parse_int(f[2], csv_path, line_no));
        for (std::size_t c = 0; c < 3; ++c)
            trace.channel_means.push_back(detail::parse_double(f[3 + c], csv_path, line_no));
        if (with_gt && expect_roi == 0)
            trace.gt_ppg.push_back(detail::parse_double(f[6], csv_path, line_no));
        if (++expect_roi == trace.n_rois) {
            expect_roi = 0;
            ++expect_frame;
        }
    }
    if (expect_roi != 0)
        throw std::runtime_error(csv_path + ": truncated mid-frame at line " + std::to_string(line_no));
    trace.validate();
    return trace;
}

}  // namespace dualtl
