#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

namespace dualtl {

// File formats are little-endian; raw memcpy below relies on the host
// matching. Every deployment target here is x86-64/aarch64-le.
static_assert(std::endian::native == std::endian::little,
              "binary readers/writers assume a little-endian host");

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return content;
}

/// Writes via a temp file in the same directory plus rename, so readers never
/// observe a half-written artifact.
inline void write_file_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp);
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw std::runtime_error("short write to " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw std::runtime_error("rename " + tmp + " -> " + path + ": " + ec.message());
}

// ---- binary scribbling ------------------------------------------------------

inline void put_u8(std::string& buf, std::uint8_t v) { buf.push_back(static_cast<char>(v)); }

inline void put_u32(std::string& buf, std::uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    buf.append(b, 4);
}

inline void put_f32(std::string& buf, float v) {
    char b[4];
    std::memcpy(b, &v, 4);
    buf.append(b, 4);
}

/// Cursor over an in-memory blob with bounds-checked reads.
class BinReader {
public:
    BinReader(const std::string& buf, std::string what) : buf_(buf), what_(std::move(what)) {}

    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(buf_[pos_++]);
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v;
        std::memcpy(&v, buf_.data() + pos_, 4);
        pos_ += 4;
        return v;
    }
    float f32() {
        need(4);
        float v;
        std::memcpy(&v, buf_.data() + pos_, 4);
        pos_ += 4;
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t remaining() const { return buf_.size() - pos_; }
    void expect_end() const {
        if (pos_ != buf_.size()) throw std::runtime_error(what_ + ": trailing bytes");
    }

private:
    void need(std::size_t n) const {
        if (pos_ + n > buf_.size()) throw std::runtime_error(what_ + ": truncated");
    }
    const std::string& buf_;
    std::string what_;
    std::size_t pos_ = 0;
};

/// Shortest decimal form that round-trips a double; used for CSV cells so
/// reruns stay byte-identical.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    double parsed = std::strtod(buf, nullptr);
    for (int prec = 1; prec <= 16; ++prec) {
        char probe[40];
        std::snprintf(probe, sizeof probe, "%.*g", prec, v);
        if (std::strtod(probe, nullptr) == parsed) return probe;
    }
    return buf;
}

}  // namespace dualtl
