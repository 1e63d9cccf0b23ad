// Copyright (c) 2026 npft-lab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace npft {

using Rng = std::mt19937_64;

// Non-finite losses and similar numeric breakdowns; the CLI maps this to its
// own exit code.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// FNV-1a over raw bytes, seedable so hashes can be chained.
uint64_t fnv1a(const void* data, size_t len, uint64_t h = 14695981039346656037ull);

// Named sub-seed: all randomness in a run flows from one global seed via
// (seed, purpose) so individual stages can be re-run without shifting the
// random streams of the others.
uint64_t derive_seed(uint64_t base, std::string_view purpose);
uint64_t derive_seed(uint64_t base, std::string_view purpose, uint64_t index);

std::string hex_u64(uint64_t v);

}  // namespace npft
