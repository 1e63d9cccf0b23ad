// Copyright (c) 2026 npft-lab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "npft/data.hpp"
#include "npft/model.hpp"
#include "npft/noise.hpp"
#include "npft/sensitivity.hpp"

namespace npft {

struct NpftConfig {
    double gamma = 0.005;  // perturbation ratio, top-gamma Fisher positions
    double beta = 0.5;     // base-loss weight in the two-term objective
    int epochs = 6;
    double lr = 1e-4;
    int lora_rank = 8;
    double lora_alpha = 16.0;
    NoiseSpec noise;
    int target_bits = 4;
    int batch_size = 16;
    LayerSubset layer_subset = LayerSubset::all;
    uint64_t seed = 0;
    bool resample_per_step = false;  // default: one noise sample per epoch
    int fisher_batch_size = 8;

    void validate() const;
};

struct NpftStepLog {
    int step = 0;
    double total = 0.0;
    double perturbed_loss = 0.0;  // L(W + z + U^T V)
    double base_loss = 0.0;       // L(W + U^T V)
};

struct NpftEpochLog {
    int epoch = 0;
    int64_t mask_positions = 0;
    double noise_abs_mean = 0.0;
    double noise_abs_max = 0.0;
    double fisher_mask_sum = 0.0;  // Fisher mass on this epoch's mask
    double wall_seconds = 0.0;
};

struct NpftTrainLog {
    std::vector<NpftStepLog> steps;
    std::vector<NpftEpochLog> epochs;
    double initial_grad_norm = 0.0;  // convergence report for the base model

    void write_csv(std::ostream& out) const;
    void write_json(std::ostream& out) const;
};

struct NpftObjective {
    Tensor total;  // backward through this
    double total_value = 0.0;
    double perturbed_value = 0.0;
    double base_value = 0.0;
};

// total = L(W + z + U^T V) + beta * L(W + U^T V); gradients flow to U,V only.
NpftObjective npft_objective(const LanguageModel& model, std::span<const Overlay> noise,
                             std::span<const LoraAdapter> adapters, const Batch& batch,
                             double beta);

struct NpftResult {
    LanguageModel model;  // adapters merged
    NpftTrainLog log;
    OutlierMask epoch0_mask;
    FisherDiag fisher_pre;   // before fine-tuning
    FisherDiag fisher_post;  // after merge, same calibration set
    uint64_t base_hash_before = 0;
    uint64_t base_hash_after_training = 0;  // must equal the one above
};

// Per epoch: fisher refresh -> top-gamma mask -> noise sample; per step: one
// Adam update of the adapters on the two-term objective; merge at the end.
// Fine-tuning batches cycle over the calibration segments.
NpftResult npft_finetune(const LanguageModel& base, const Corpus& train,
                         const CalibrationSet& calib, const NpftConfig& cfg);

}  // namespace npft
