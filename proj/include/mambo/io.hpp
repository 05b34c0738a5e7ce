#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

namespace mambo {

// File/format errors carry the offending path in the message and map to the
// CLI's data-error exit code.
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
    out.push_back(static_cast<char>((v >> 16) & 0xFF));
    out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

inline void put_f32_le(std::string& out, float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32_le(out, v);
}

// Cursor-based reader over an in-memory buffer; throws io_error on underrun.
class ByteReader {
public:
    ByteReader(const std::string& buf, std::string origin)
        : buf_(buf), origin_(std::move(origin)) {}

    std::size_t remaining() const { return buf_.size() - pos_; }

    void need(std::size_t n, const char* what) const {
        if (remaining() < n)
            throw io_error(origin_ + ": truncated file while reading " + what);
    }

    std::uint32_t u32(const char* what) {
        need(4, what);
        const auto* p = reinterpret_cast<const unsigned char*>(buf_.data() + pos_);
        pos_ += 4;
        return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
               (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    }

    float f32(const char* what) {
        const std::uint32_t v = u32(what);
        float f;
        std::memcpy(&f, &v, 4);
        return f;
    }

    std::string bytes(std::size_t n, const char* what) {
        need(n, what);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    const std::string& origin() const { return origin_; }

private:
    const std::string& buf_;
    std::string origin_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error(path + ": cannot open for reading");
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw io_error(path + ": read failed");
    return data;
}

inline void write_file_bytes(const std::string& path, const std::string& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error(path + ": cannot open for writing");
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw io_error(path + ": write failed");
}

}  // namespace mambo
