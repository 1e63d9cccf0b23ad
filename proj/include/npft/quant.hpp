// Copyright (c) 2026 npft-lab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "npft/model.hpp"
#include "npft/quant_types.hpp"
#include "npft/sensitivity.hpp"

namespace npft {

// Asymmetric uniform quantizer: per group, scale = (max-min)/(2^bits-1),
// zero_point = min, codes = round-half-to-even((w-min)/scale). A degenerate
// group (max == min) gets scale 1 and all-zero codes, reconstructing exactly.
QuantizedMatrix rtn_quantize(const Tensor& w, const QuantConfig& cfg);

struct KmeansStats {
    std::vector<double> objectives;  // per-iteration weighted SSE, all groups summed
    int iterations = 0;
};

// Fisher-weighted Lloyd iterations per group: codebook minimizes
// sum F[i,j] (w - c(w))^2. Quantile init; groups whose F is all zero fall
// back to unweighted k-means. Groups with <= 2^bits distinct values
// reconstruct exactly.
QuantizedMatrix kmeans_quantize(const Tensor& w, const Tensor& fisher, const QuantConfig& cfg,
                                KmeansStats* stats = nullptr);

// Mask positions replaced by their group mean; originals returned as a
// coordinate-sorted sparse list. dense + scatter(sparse) == w exactly.
std::pair<Tensor, std::vector<SparseEntry>> extract_outliers(
    const Tensor& w, const std::vector<std::pair<int, int>>& mask_positions);

struct BitsReport {
    struct Row {
        WeightId id;
        double bits = 0.0;
        int64_t n_weights = 0;
    };
    std::vector<Row> per_matrix;

    double average() const;
    void write_csv(std::ostream& out) const;
};

// Every attention/MLP matrix quantized per cfg; embed/lm_head stay full
// precision. `model` holds the dequantized weights (plus restored sparse
// outliers when kept) so it can be evaluated like any other model.
struct QuantizedModel {
    LanguageModel model;
    std::map<WeightId, QuantizedMatrix> matrices;
    QuantConfig cfg;
    BitsReport bits;
};

QuantizedModel quantize_model(const LanguageModel& model, const QuantConfig& cfg,
                              const FisherDiag* fisher = nullptr);

// Quantized checkpoint: model container format with packed codes,
// scales/zero-points or codebooks, and sparse outlier triplets
// (row u32, col u32, value f32).
void save_quantized(const QuantizedModel& qm, const std::string& path);
QuantizedModel load_quantized(const std::string& path);

}  // namespace npft
