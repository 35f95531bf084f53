#pragma once

#include <cstdint>
#include <cstddef>
#include <vector>

namespace oseg {

// FNV-1a, used for pinned fixture hashes in tests and report digests.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 14695981039346656037ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::vector<std::uint8_t>& v) {
    return fnv1a64(v.data(), v.size());
}

} // namespace oseg
