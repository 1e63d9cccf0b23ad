// Copyright (c) 2026 npft-lab contributors
// SPDX-License-Identifier: Apache-2.0
#include "npft/common.hpp"

#include <array>
#include <cstdio>

namespace npft {

uint64_t fnv1a(const void* data, size_t len, uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

namespace {
uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}
}  // namespace

uint64_t derive_seed(uint64_t base, std::string_view purpose) {
    uint64_t h = fnv1a(purpose.data(), purpose.size());
    return splitmix64(base ^ h);
}

uint64_t derive_seed(uint64_t base, std::string_view purpose, uint64_t index) {
    return splitmix64(derive_seed(base, purpose) + 0x9e3779b97f4a7c15ull * (index + 1));
}

std::string hex_u64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

}  // namespace npft
