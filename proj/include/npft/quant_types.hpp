// Copyright (c) 2026 npft-lab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "npft/tensor.hpp"

namespace npft {

enum class QuantScheme { rtn, kmeans_nonuniform };
enum class QuantGranularity { per_output_channel, per_tensor };

struct QuantConfig {
    int bits = 4;  // [2,8]
    QuantScheme scheme = QuantScheme::rtn;
    QuantGranularity granularity = QuantGranularity::per_output_channel;
    bool keep_outliers_fp = false;
    double outlier_ratio = 0.0;  // used only when keep_outliers_fp

    int levels() const { return 1 << bits; }
    void validate() const;
};

struct SparseEntry {
    int row = 0;
    int col = 0;
    double value = 0.0;
};

// Integer codes plus per-group dequantization parameters. A group is one
// output channel (row) or the whole tensor depending on granularity.
struct QuantizedMatrix {
    int bits = 4;
    QuantScheme scheme = QuantScheme::rtn;
    QuantGranularity granularity = QuantGranularity::per_output_channel;
    int rows = 0;
    int cols = 0;
    std::vector<uint8_t> codes;      // row-major, one code per weight
    std::vector<double> scales;      // rtn: per group
    std::vector<double> zero_points; // rtn: per group
    std::vector<double> codebooks;   // kmeans: per group x 2^bits
    std::vector<SparseEntry> sparse_outliers;  // sorted by (row, col)

    int n_groups() const {
        return granularity == QuantGranularity::per_tensor ? 1 : rows;
    }
    int group_of_row(int r) const {
        return granularity == QuantGranularity::per_tensor ? 0 : r;
    }

    // dense value from codes only (no sparse override)
    double dequant_code(int r, int c) const;
    // dense reconstruction plus sparse outliers scattered back
    Tensor dequantize() const;

    // effective average bits per weight: code bits + amortized scale/codebook
    // overhead (32-bit entries) + 96-bit sparse triplets
    double effective_bits() const;
};

}  // namespace npft
