// Copyright (c) 2026 npft-lab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "npft/data.hpp"
#include "npft/model.hpp"
#include "npft/quant_types.hpp"

namespace npft {

// Per-matrix squared-gradient sensitivities: F[i,j] = mean over calibration
// batches of (dL/dw_ij)^2.
struct FisherDiag {
    std::map<WeightId, Tensor> f;
    int n_batches = 0;
};

FisherDiag fisher_diag(const LanguageModel& model, const CalibrationSet& calib,
                       int batch_size = 8, std::span<const LoraAdapter> adapters = {});

// Keep only the matrices selected by `subset`.
FisherDiag restrict_fisher(const FisherDiag& fd, LayerSubset subset);

// Top-gamma positions per matrix; k = round(gamma * size), ties broken by
// (row, col) lexicographic order.
struct OutlierMask {
    std::map<WeightId, std::vector<std::pair<int, int>>> positions;
    double ratio = 0.0;

    int64_t total_positions() const;
};

OutlierMask filter_outliers(const FisherDiag& fd, double gamma);
std::vector<std::pair<int, int>> top_positions(const Tensor& f, int64_t k);

// Loss increase when exactly one weight is replaced by its RTN-quantized
// value (computed via an overlay; the model is never mutated). Pass the
// precomputed base loss when scanning many positions.
double exact_sensitivity(const LanguageModel& model, const CalibrationSet& calib,
                         const WeightId& id, int row, int col, const QuantConfig& qcfg,
                         std::optional<double> base_loss = std::nullopt);

// Mean loss over the whole calibration set (forward only).
double calibration_loss(const LanguageModel& model, const CalibrationSet& calib,
                        std::span<const Overlay> overlays = {},
                        std::span<const LoraAdapter> adapters = {});

struct TraceEstimate {
    double value = 0.0;
    int n_samples = 0;
    double std_error = 0.0;  // sample std / sqrt(n)
};

enum class ProbeDist { rademacher, unit_gaussian };

// E[z^T H z] with zero-mean unit-covariance probes; matvec computes H*z.
TraceEstimate hutchinson_trace(
    const std::function<void(std::span<const double>, std::span<double>)>& matvec, int dim,
    int n_samples, ProbeDist dist, uint64_t seed);

struct PerturbationTrace {
    double mean_loss_increase = 0.0;  // raw E[L(W+z) - L(W)]
    TraceEstimate trace;              // rescaled by 24/delta^2
};

// Generic estimator over an arbitrary loss: loss_plus(z) evaluates L(W+z)
// for a perturbation vector z of length dim; z ~ U[-delta/2, delta/2]^dim.
PerturbationTrace perturbation_trace_fn(
    const std::function<double(std::span<const double>)>& loss_plus, int dim, double delta,
    int n_samples, uint64_t seed);

// Model-level wrapper: perturbations live on mask positions (or on every
// attention/MLP weight when mask is null) and the loss is the calibration loss.
PerturbationTrace perturbation_trace(const LanguageModel& model, const CalibrationSet& calib,
                                     const OutlierMask* mask, double delta, int n_samples,
                                     uint64_t seed);

// One input channel of F unfolded along the output positions.
std::vector<double> sensitivity_report(const FisherDiag& fd, const WeightId& id,
                                       int input_channel);

// CSV rows (weight_id,row,col,fisher,rank); rank 1 = largest within matrix.
// Restricted to one input channel when `input_channel` >= 0.
void write_fisher_csv(const FisherDiag& fd, const WeightId& id, std::ostream& out,
                      int input_channel = -1);

// Fisher snapshots in the checkpoint container format.
void save_fisher(const FisherDiag& fd, const std::string& path);
FisherDiag load_fisher(const std::string& path);

}  // namespace npft
