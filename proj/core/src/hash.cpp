#include "kdbench/hash.hpp"

#include <cstdio>

namespace kdbench {

std::string hex_u64(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

}  // namespace kdbench
