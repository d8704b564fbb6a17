#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace kdbench {

// FNV-1a over the bytes; stable across platforms, used for config identity.
constexpr std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

std::string hex_u64(std::uint64_t value);

inline std::string content_hash(std::string_view bytes) { return hex_u64(fnv1a64(bytes)); }

}  // namespace kdbench
