// Copyright (c) 2026 npft-lab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "npft/quant.hpp"

namespace npft {

// Bit-contiguous little-endian code stream: code i occupies bits
// [i*bits, (i+1)*bits), bit j of the stream is byte[j/8] bit (j%8).
std::vector<uint8_t> pack_codes(std::span<const uint8_t> codes, int bits);
std::vector<uint8_t> unpack_codes(std::span<const uint8_t> packed, int bits, size_t n_codes);

struct PackedMatrix {
    int bits = 4;
    QuantScheme scheme = QuantScheme::rtn;
    int rows = 0;
    int cols = 0;
    std::vector<uint8_t> packed;     // row-major codes, bit-contiguous
    std::vector<double> scales;      // rtn, per row (or single entry per-tensor)
    std::vector<double> zero_points;
    std::vector<double> codebooks;   // kmeans, per row x 2^bits
    bool per_tensor = false;

    double dequant_code(int row, uint8_t code) const;
};

PackedMatrix pack_matrix(const QuantizedMatrix& q);
Tensor dequantize(const PackedMatrix& p);  // dense oracle input

// Coordinate-sorted (row, col, value) triplets, strictly increasing.
struct SparseOutlierMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<SparseEntry> entries;

    void validate() const;
};

SparseOutlierMatrix sparse_from_quantized(const QuantizedMatrix& q);

// y = dequantize(P) * x, decoding on the fly.
void packed_matvec(const PackedMatrix& p, std::span<const double> x, std::span<double> y);
namespace ref {
// serial reference: full dequantize then dense matvec
void packed_matvec(const PackedMatrix& p, std::span<const double> x, std::span<double> y);
}  // namespace ref

// y = packed_matvec(P, x) + per-outlier correction replacing the dense code
// value with the stored original. Equals the matvec of the reconstructed
// matrix with outliers scattered back.
void mixed_matvec(const PackedMatrix& p, const SparseOutlierMatrix& s, std::span<const double> x,
                  std::span<double> y);

// ---- generation latency harness ----

enum class BenchArm { fp64_dense, packed_uniform, packed_sparse };
std::string to_string(BenchArm arm);

struct BenchRow {
    std::string arm;
    int bits = 0;
    double outlier_ratio = 0.0;
    int n_tokens = 0;
    int repeat = 0;
    double seconds = 0.0;
    int threads = 1;
    std::string config_hash;
};

// Token-by-token greedy generation with a rolling KV cache; the per-layer
// matrices run through the selected weight path, embed/lm_head stay dense.
class InferenceEngine {
  public:
    InferenceEngine(const QuantizedModel& qm, BenchArm arm);

    // returns generated token ids; prompt is a single BOS-like token
    std::vector<int> generate(int start_token, int n_tokens);

  private:
    struct LayerMats;
    void matvec_weight(const WeightId& id, std::span<const double> x, std::span<double> y) const;

    ModelConfig cfg_;
    BenchArm arm_;
    std::map<WeightId, Tensor> dense_;
    std::map<WeightId, PackedMatrix> packed_;
    std::map<WeightId, SparseOutlierMatrix> sparse_;
    Tensor pos_encoding_;
};

std::vector<BenchRow> bench_generate(const QuantizedModel& qm, std::span<const int> n_tokens_list,
                                     int repeats, std::span<const BenchArm> arms, int threads,
                                     const std::string& config_hash);

void write_bench_csv(std::span<const BenchRow> rows, std::ostream& out);

}  // namespace npft
