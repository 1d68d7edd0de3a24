#pragma once

// Little-endian primitives for the on-disk formats.

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace fastbci {

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace io {

inline void write_u32(std::ostream& out, std::uint32_t v) {
    const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                           static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(bytes, 4);
}

inline void write_u64(std::ostream& out, std::uint64_t v) {
    char bytes[8];
    for (int i = 0; i < 8; ++i) {
        bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    }
    out.write(bytes, 8);
}

inline void write_f64(std::ostream& out, double v) { write_u64(out, std::bit_cast<std::uint64_t>(v)); }

inline void read_exact(std::istream& in, char* dst, std::size_t n, const char* what) {
    in.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) {
        throw FormatError(std::string("unexpected end of data while reading ") + what);
    }
}

inline std::uint32_t read_u32(std::istream& in, const char* what = "u32") {
    unsigned char b[4];
    read_exact(in, reinterpret_cast<char*>(b), 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t read_u64(std::istream& in, const char* what = "u64") {
    unsigned char b[8];
    read_exact(in, reinterpret_cast<char*>(b), 8, what);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) {
        v = (v << 8) | b[i];
    }
    return v;
}

inline double read_f64(std::istream& in, const char* what = "f64") { return std::bit_cast<double>(read_u64(in, what)); }

/// Decodes n doubles from a little-endian byte buffer.
inline void decode_f64(const unsigned char* bytes, std::size_t n, double* out) {
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t v = 0;
        for (int k = 7; k >= 0; --k) {
            v = (v << 8) | bytes[i * 8 + static_cast<std::size_t>(k)];
        }
        out[i] = std::bit_cast<double>(v);
    }
}

inline void encode_f64(const double* values, std::size_t n, unsigned char* bytes) {
    for (std::size_t i = 0; i < n; ++i) {
        const auto v = std::bit_cast<std::uint64_t>(values[i]);
        for (int k = 0; k < 8; ++k) {
            bytes[i * 8 + static_cast<std::size_t>(k)] = static_cast<unsigned char>((v >> (8 * k)) & 0xff);
        }
    }
}

/// 64-bit FNV-1a, used for config hashes.
inline std::uint64_t fnv1a(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

}  // namespace io
}  // namespace fastbci
