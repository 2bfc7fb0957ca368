// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <span>
#include <string>

namespace sparsegrid {

// FNV-1a over the little-endian byte image of the values; used for trace
// checksums.
inline uint64_t fnv1a64(std::span<const float> values) {
    uint64_t h = 0xCBF29CE484222325ULL;
    for (float v : values) {
        const uint32_t bits = std::bit_cast<uint32_t>(v);
        for (int i = 0; i < 4; ++i) {
            h ^= (bits >> (8 * i)) & 0xFFu;
            h *= 0x100000001B3ULL;
        }
    }
    return h;
}

inline std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

} // namespace sparsegrid
