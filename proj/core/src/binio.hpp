#pragma once

// Little-endian binary readers/writers shared by the dataset cache and the
// model checkpoint formats. Values are written byte-by-byte so the layout is
// identical on any host.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "kdbench/errors.hpp"

namespace kdbench::binio {

inline void write_u8(std::ostream& os, std::uint8_t v) { os.put(static_cast<char>(v)); }

inline void write_u32(std::ostream& os, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void write_i32(std::ostream& os, std::int32_t v) { write_u32(os, static_cast<std::uint32_t>(v)); }

inline void write_f64(std::ostream& os, double v) { write_u64(os, std::bit_cast<std::uint64_t>(v)); }

inline void write_string(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::uint8_t read_u8(std::istream& is) {
    const int c = is.get();
    if (c == EOF) throw ConfigError("unexpected end of binary file");
    return static_cast<std::uint8_t>(c);
}

inline std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(read_u8(is)) << (8 * i);
    return v;
}

inline std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(read_u8(is)) << (8 * i);
    return v;
}

inline std::int32_t read_i32(std::istream& is) { return static_cast<std::int32_t>(read_u32(is)); }

inline double read_f64(std::istream& is) { return std::bit_cast<double>(read_u64(is)); }

inline std::string read_string(std::istream& is) {
    const std::uint32_t n = read_u32(is);
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (!is) throw ConfigError("unexpected end of binary file");
    return s;
}

inline void expect_magic(std::istream& is, const char magic[8], const char* what) {
    char buf[8];
    is.read(buf, 8);
    if (!is || std::memcmp(buf, magic, 8) != 0)
        throw ConfigError(std::string("bad magic, not a ") + what + " file");
}

}  // namespace kdbench::binio
